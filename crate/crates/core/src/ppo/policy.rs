//! Gaussian actor-critic over thruster commands.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::net::Mlp;
use crate::error::{Error, Result};
use crate::task::{Action, Observation};

pub const OBS_DIM: usize = Observation::DIM;
pub const ACTION_DIM: usize = 2;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
const OBS_CLIP: f64 = 10.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Running mean/variance of raw observations (parallel-merge update).
#[derive(Debug, Clone, PartialEq)]
pub struct ObsNormalizer {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub count: f64,
}

impl Default for ObsNormalizer {
    fn default() -> Self {
        Self {
            mean: Array1::zeros(OBS_DIM),
            var: Array1::ones(OBS_DIM),
            count: 1e-4,
        }
    }
}

impl ObsNormalizer {
    pub fn update(&mut self, batch: ArrayView2<f64>) {
        let n = batch.nrows() as f64;
        if n == 0.0 {
            return;
        }
        let batch_mean = batch.mean_axis(ndarray::Axis(0)).expect("non-empty batch");
        let batch_var = batch.var_axis(ndarray::Axis(0), 0.0);
        let total = self.count + n;
        let delta = &batch_mean - &self.mean;
        let m2 = &self.var * self.count + &batch_var * n + &delta * &delta * (self.count * n / total);
        self.mean = &self.mean + &delta * (n / total);
        self.var = m2 / total;
        self.count = total;
    }

    pub fn normalize(&self, batch: ArrayView2<f64>) -> Array2<f64> {
        let std = self.var.mapv(|v| (v + 1e-8).sqrt());
        let mut out = (&batch - &self.mean) / &std;
        out.mapv_inplace(|v| v.clamp(-OBS_CLIP, OBS_CLIP));
        out
    }
}

/// Trainable parameters; gradients and Adam moments share this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub actor: Mlp,
    pub log_std: Array1<f64>,
    pub critic: Mlp,
}

impl Params {
    pub fn zeros_like(&self) -> Self {
        Self {
            actor: self.actor.zeros_like(),
            log_std: Array1::zeros(self.log_std.len()),
            critic: self.critic.zeros_like(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.actor.slices();
        out.push(self.log_std.as_slice().expect("standard layout"));
        out.extend(self.critic.slices());
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.actor.slices_mut();
        out.push(self.log_std.as_slice_mut().expect("standard layout"));
        out.extend(self.critic.slices_mut());
        out
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, mut index: usize) -> f64 {
        for s in self.slices() {
            if index < s.len() {
                return s[index];
            }
            index -= s.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set(&mut self, mut index: usize, value: f64) {
        for s in self.slices_mut() {
            if index < s.len() {
                s[index] = value;
                return;
            }
            index -= s.len();
        }
        panic!("parameter index out of range")
    }

    pub fn norm(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    pub params: Params,
    pub obs_norm: ObsNormalizer,
    pub hidden: Vec<usize>,
}

/// Output of a single forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    /// `tanh` of the Gaussian mean, i.e. the deterministic command.
    pub mean: (f64, f64),
    pub log_std: (f64, f64),
    pub value: f64,
}

impl PolicyNetwork {
    /// Orthogonal hidden layers (gain sqrt 2), actor head gain 0.01, critic head gain 1.
    pub fn new(hidden: &[usize], init_log_std: f64, rng: &mut impl Rng) -> Self {
        let mut actor_sizes = vec![OBS_DIM];
        actor_sizes.extend_from_slice(hidden);
        let mut critic_sizes = actor_sizes.clone();
        actor_sizes.push(ACTION_DIM);
        critic_sizes.push(1);
        let gain = std::f64::consts::SQRT_2;
        let actor = Mlp::new(&actor_sizes, gain, 0.01, rng);
        let critic = Mlp::new(&critic_sizes, gain, 1.0, rng);
        Self {
            params: Params {
                actor,
                log_std: Array1::from_elem(ACTION_DIM, init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)),
                critic,
            },
            obs_norm: ObsNormalizer::default(),
            hidden: hidden.to_vec(),
        }
    }

    /// Same architecture with both output layers zeroed.
    pub fn with_zero_heads(mut self) -> Self {
        for mlp in [&mut self.params.actor, &mut self.params.critic] {
            let last = mlp.layers.last_mut().expect("non-empty network");
            last.w.fill(0.0);
            last.b.fill(0.0);
        }
        self
    }

    fn log_std(&self) -> (f64, f64) {
        let c = |v: f64| v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        (c(self.params.log_std[0]), c(self.params.log_std[1]))
    }

    /// Raw Gaussian means and values for already-normalized observations.
    pub fn forward_normalized(&self, obs: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        let means = self.params.actor.forward(obs);
        let values = self.params.critic.forward(obs).column(0).to_owned();
        (means, values)
    }

    pub fn values_normalized(&self, obs: ArrayView2<f64>) -> Array1<f64> {
        self.params.critic.forward(obs).column(0).to_owned()
    }

    pub fn forward(&self, obs: &Observation) -> Result<PolicyOutput> {
        if !obs.is_finite() {
            return Err(Error::Numerical(format!("non-finite observation {obs:?}")));
        }
        let raw = Array2::from_shape_vec((1, OBS_DIM), obs.to_array().to_vec()).expect("shape");
        let x = self.obs_norm.normalize(raw.view());
        let (means, values) = self.forward_normalized(x.view());
        Ok(PolicyOutput {
            mean: (means[[0, 0]].tanh(), means[[0, 1]].tanh()),
            log_std: self.log_std(),
            value: values[0],
        })
    }

    /// Deterministic mode returns `tanh(mean)`; otherwise samples the
    /// Gaussian, squashes and clamps.
    pub fn act(&self, obs: &Observation, deterministic: bool, rng: &mut impl Rng) -> Result<Action> {
        if !obs.is_finite() {
            return Err(Error::Numerical(format!("non-finite observation {obs:?}")));
        }
        let raw = Array2::from_shape_vec((1, OBS_DIM), obs.to_array().to_vec()).expect("shape");
        let means = self.params.actor.forward(self.obs_norm.normalize(raw.view()).view());
        if deterministic {
            return Ok(Action::new(means[[0, 0]].tanh(), means[[0, 1]].tanh()));
        }
        let (sampled, _) = self.sample(&means, rng);
        Ok(Action::new(sampled[[0, 0]].tanh(), sampled[[0, 1]].tanh()))
    }

    /// Samples pre-squash actions for a batch; returns `(raw_actions, log_probs)`.
    pub fn sample(&self, means: &Array2<f64>, rng: &mut impl Rng) -> (Array2<f64>, Array1<f64>) {
        let (s0, s1) = self.log_std();
        let std = [s0.exp(), s1.exp()];
        let mut raw = Array2::zeros(means.raw_dim());
        for (i, row) in means.rows().into_iter().enumerate() {
            for j in 0..ACTION_DIM {
                let e: f64 = rng.sample(StandardNormal);
                raw[[i, j]] = row[j] + std[j] * e;
            }
        }
        let logp = self.log_prob(means, &raw);
        (raw, logp)
    }

    pub fn log_prob(&self, means: &Array2<f64>, raw: &Array2<f64>) -> Array1<f64> {
        let (s0, s1) = self.log_std();
        let ls = [s0, s1];
        Array1::from_iter((0..means.nrows()).map(|i| {
            (0..ACTION_DIM)
                .map(|j| {
                    let z = (raw[[i, j]] - means[[i, j]]) / ls[j].exp();
                    -0.5 * z * z - ls[j] - HALF_LN_2PI
                })
                .sum::<f64>()
        }))
    }

    pub fn entropy(&self) -> f64 {
        let (s0, s1) = self.log_std();
        s0 + s1 + ACTION_DIM as f64 * (0.5 + HALF_LN_2PI)
    }

    /// Keeps `log_std` inside its clamp range after an optimizer step.
    pub fn project(&mut self) {
        self.params.log_std.mapv_inplace(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }
}

/// One minibatch of PPO training data (observations already normalized).
pub struct Minibatch<'a> {
    pub obs: ArrayView2<'a, f64>,
    pub raw_actions: ArrayView2<'a, f64>,
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossCoefficients {
    pub clip_epsilon: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    /// `mean((ratio - 1) - ln ratio)`
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate + value-MSE - entropy loss and its gradient.
pub fn loss_and_grad(net: &PolicyNetwork, batch: &Minibatch<'_>, coef: &LossCoefficients) -> (LossStats, Params) {
    let n = batch.obs.nrows();
    let nf = n as f64;
    let mut grads = net.params.zeros_like();

    let (means, actor_cache) = net.params.actor.forward_cached(batch.obs);
    let (values, critic_cache) = net.params.critic.forward_cached(batch.obs);
    let raw = batch.raw_actions.to_owned();
    let logp = net.log_prob(&means, &raw);
    let (s0, s1) = net.log_std();
    let log_std = [s0, s1];
    let clamped = [
        net.params.log_std[0] != s0,
        net.params.log_std[1] != s1,
    ];

    let mut stats = LossStats::default();
    let mut d_means = Array2::<f64>::zeros((n, ACTION_DIM));
    let mut d_values = Array2::<f64>::zeros((n, 1));
    let (lo, hi) = (1.0 - coef.clip_epsilon, 1.0 + coef.clip_epsilon);

    for i in 0..n {
        let log_ratio = logp[i] - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(lo, hi) * adv;
        let surrogate = unclipped.min(clipped);
        stats.policy -= surrogate / nf;
        stats.approx_kl += ((ratio - 1.0) - log_ratio) / nf;
        if ratio < lo || ratio > hi {
            stats.clip_fraction += 1.0 / nf;
        }
        // d surrogate / d logp: ratio*adv where the unclipped branch is active.
        let gradient_flows = unclipped <= clipped || (ratio >= lo && ratio <= hi);
        let d_logp = if gradient_flows { -unclipped / nf } else { 0.0 };
        if d_logp != 0.0 {
            for j in 0..ACTION_DIM {
                let sigma = log_std[j].exp();
                let z = (raw[[i, j]] - means[[i, j]]) / sigma;
                d_means[[i, j]] = d_logp * z / sigma;
                if !clamped[j] {
                    grads.log_std[j] += d_logp * (z * z - 1.0);
                }
            }
        }

        let err = values[[i, 0]] - batch.returns[i];
        stats.value += err * err / nf;
        d_values[[i, 0]] = coef.value_coef * 2.0 * err / nf;
    }

    stats.entropy = net.entropy();
    for j in 0..ACTION_DIM {
        if !clamped[j] {
            grads.log_std[j] -= coef.entropy_coef;
        }
    }
    stats.total = stats.policy + coef.value_coef * stats.value - coef.entropy_coef * stats.entropy;

    net.params.actor.backward(&actor_cache, d_means, &mut grads.actor);
    net.params.critic.backward(&critic_cache, d_values, &mut grads.critic);
    (stats, grads)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(params: &Params, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let lr = self.learning_rate;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut())
        {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                p[k] -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut Params, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / (norm + 1e-12));
    }
    norm
}
