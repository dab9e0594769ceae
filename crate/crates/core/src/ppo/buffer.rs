use ndarray::{Array2, Array3, ArrayView2};

/// Generalized advantage estimation over one environment's sequence.
///
/// `dones[t]` marks that the episode ended after step `t`; `last_value`
/// bootstraps the step after the final one.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64, gamma: f64, lam: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "gae inputs must have equal length");
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * next_value - values[t];
        next_adv = delta + gamma * lam * live * next_adv;
        advantages[t] = next_adv;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Shifts to zero mean and scales to unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std > 1e-12 {
        adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
    } else {
        adv.iter_mut().for_each(|a| *a -= mean);
    }
}

/// Time-major storage of one rollout across all environments.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub steps: usize,
    pub envs: usize,
    pub obs: Array3<f64>,
    pub raw_actions: Array3<f64>,
    pub log_probs: Array2<f64>,
    pub values: Array2<f64>,
    pub rewards: Array2<f64>,
    pub dones: Array2<bool>,
    pub last_values: Vec<f64>,
    /// Flattened `(step, env)` row-major after [`RolloutBuffer::finish`].
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(steps: usize, envs: usize, obs_dim: usize, action_dim: usize) -> Self {
        Self {
            steps,
            envs,
            obs: Array3::zeros((steps, envs, obs_dim)),
            raw_actions: Array3::zeros((steps, envs, action_dim)),
            log_probs: Array2::zeros((steps, envs)),
            values: Array2::zeros((steps, envs)),
            rewards: Array2::zeros((steps, envs)),
            dones: Array2::from_elem((steps, envs), false),
            last_values: vec![0.0; envs],
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps * self.envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Recomputes advantages and returns, then normalizes the advantages.
    pub fn finish(&mut self, gamma: f64, lam: f64) {
        let mut adv = vec![0.0; self.len()];
        let mut ret = vec![0.0; self.len()];
        for e in 0..self.envs {
            let rewards: Vec<f64> = self.rewards.column(e).to_vec();
            let values: Vec<f64> = self.values.column(e).to_vec();
            let dones: Vec<bool> = self.dones.column(e).to_vec();
            let (a, r) = gae(&rewards, &values, &dones, self.last_values[e], gamma, lam);
            for t in 0..self.steps {
                adv[t * self.envs + e] = a[t];
                ret[t * self.envs + e] = r[t];
            }
        }
        normalize_advantages(&mut adv);
        self.advantages = adv;
        self.returns = ret;
    }

    pub fn flat_obs(&self) -> ArrayView2<'_, f64> {
        let (t, n, d) = self.obs.dim();
        self.obs.view().into_shape_with_order((t * n, d)).expect("contiguous buffer")
    }

    pub fn flat_actions(&self) -> ArrayView2<'_, f64> {
        let (t, n, d) = self.raw_actions.dim();
        self.raw_actions.view().into_shape_with_order((t * n, d)).expect("contiguous buffer")
    }

    pub fn flat_log_probs(&self) -> &[f64] {
        self.log_probs.as_slice().expect("contiguous buffer")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn one_step_td_when_gamma_zero() {
        let r = [1.0, -2.0, 0.5];
        let v = [0.3, 0.1, -0.4];
        let (adv, ret) = gae(&r, &v, &[false; 3], 9.0, 0.0, 0.7);
        for t in 0..3 {
            assert_abs_diff_eq!(adv[t], r[t] - v[t], epsilon = 1e-15);
            assert_abs_diff_eq!(ret[t], r[t], epsilon = 1e-15);
        }
    }

    #[test]
    fn lambda_one_is_monte_carlo() {
        let r = [1.0, 2.0, 3.0];
        let v = [0.5, -0.5, 0.25];
        let (g, last) = (0.9, 4.0);
        let (adv, _) = gae(&r, &v, &[false; 3], last, g, 1.0);
        // Brute-force discounted sums.
        for t in 0..3 {
            let mut mc = 0.0;
            for k in t..3 {
                mc += g.powi((k - t) as i32) * r[k];
            }
            mc += g.powi((3 - t) as i32) * last;
            assert_abs_diff_eq!(adv[t], mc - v[t], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(adv[0], 1.0 + 0.9 * 2.0 + 0.81 * 3.0 + 0.729 * 4.0 - 0.5, epsilon = 1e-12);
    }

    #[test]
    fn zeros_stay_zero() {
        let (adv, ret) = gae(&[0.0; 5], &[0.0; 5], &[false, true, false, false, false], 0.0, 0.99, 0.95);
        assert!(adv.iter().chain(&ret).all(|&a| a == 0.0));
    }

    #[test]
    fn done_cuts_bootstrap() {
        let (adv, _) = gae(&[1.0, 1.0], &[0.0, 0.0], &[true, false], 100.0, 0.5, 1.0);
        assert_abs_diff_eq!(adv[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(adv[1], 1.0 + 50.0, epsilon = 1e-15);
    }

    #[test]
    fn normalization_moments() {
        let mut a: Vec<f64> = (0..257).map(|i| ((i * 37) % 101) as f64 * 0.3 - 7.0).collect();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 1e-6);
        assert!((std - 1.0).abs() <= 1e-6);
    }
}
