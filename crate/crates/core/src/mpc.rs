//! Baseline MPC: a linear-damping vessel model, a least-squares optimal
//! control problem over a fixed horizon, and one Gauss-Newton real-time
//! iteration per control cycle, warm-started from the shifted previous
//! solution.
//!
//! The QP of each iteration is solved by a Riccati recursion on the
//! multiple-shooting linearization. Control bounds are enforced by clamping
//! in the forward pass (projected step), which is adequate for a single
//! iteration per cycle.

use std::time::Instant;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_angle, VesselParams, VesselState};
use crate::error::{Error, Result};
use crate::task::{Action, Goal};

pub type State = SVector<f64, 6>;
pub type Control = SVector<f64, 2>;
pub type StateJacobian = SMatrix<f64, 6, 6>;
pub type ControlJacobian = SMatrix<f64, 6, 2>;

/// Controller-side model: `M nu_dot + D_l nu = B f(u)`, no quadratic damping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpcModel {
    pub mass: f64,
    pub inertia_z: f64,
    pub x_u: f64,
    pub y_v: f64,
    pub n_r: f64,
    pub thruster_separation: f64,
    pub thrust_max_forward: f64,
    pub thrust_max_reverse: f64,
}

impl MpcModel {
    /// Takes the identified plant parameters, keeping only linear damping.
    /// `n_r_override` replaces the yaw damping, as hand-tuned controllers do.
    pub fn from_params(p: &VesselParams, n_r_override: Option<f64>) -> Self {
        Self {
            mass: p.mass,
            inertia_z: p.inertia_z,
            x_u: p.damping_linear.surge,
            y_v: p.damping_linear.sway,
            n_r: n_r_override.unwrap_or(p.damping_linear.yaw),
            thruster_separation: p.thruster_separation,
            thrust_max_forward: p.thrust_max_forward,
            thrust_max_reverse: p.thrust_max_reverse,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.inertia_z > 0.0) {
            return Err(Error::invalid("mpc.model", "mass and inertia must be > 0 so M is invertible"));
        }
        Ok(())
    }

    /// Slope of the force curve at command `c` (forward branch at zero).
    fn thrust_slope(&self, c: f64) -> f64 {
        if c >= 0.0 {
            self.thrust_max_forward
        } else {
            self.thrust_max_reverse
        }
    }

    fn thrust(&self, c: f64) -> f64 {
        self.thrust_slope(c) * c
    }
}

/// `q_dot = f(q, u)` for `q = [x, y, psi, u, v, r]`.
pub fn model_derivative(q: &State, u: &Control, m: &MpcModel) -> State {
    let (s, c) = q[2].sin_cos();
    let (fl, fr) = (m.thrust(u[0]), m.thrust(u[1]));
    let half = 0.5 * m.thruster_separation;
    State::new(
        c * q[3] - s * q[4],
        s * q[3] + c * q[4],
        q[5],
        (fl + fr - m.x_u * q[3]) / m.mass,
        -m.y_v * q[4] / m.mass,
        (half * (fr - fl) - m.n_r * q[5]) / m.inertia_z,
    )
}

fn continuous_jacobians(q: &State, u: &Control, m: &MpcModel) -> (StateJacobian, ControlJacobian) {
    let (s, c) = q[2].sin_cos();
    let mut a = StateJacobian::zeros();
    a[(0, 2)] = -s * q[3] - c * q[4];
    a[(0, 3)] = c;
    a[(0, 4)] = -s;
    a[(1, 2)] = c * q[3] - s * q[4];
    a[(1, 3)] = s;
    a[(1, 4)] = c;
    a[(2, 5)] = 1.0;
    a[(3, 3)] = -m.x_u / m.mass;
    a[(4, 4)] = -m.y_v / m.mass;
    a[(5, 5)] = -m.n_r / m.inertia_z;
    let (kl, kr) = (m.thrust_slope(u[0]), m.thrust_slope(u[1]));
    let half = 0.5 * m.thruster_separation;
    let mut b = ControlJacobian::zeros();
    b[(3, 0)] = kl / m.mass;
    b[(3, 1)] = kr / m.mass;
    b[(5, 0)] = -half * kl / m.inertia_z;
    b[(5, 1)] = half * kr / m.inertia_z;
    (a, b)
}

/// One RK4 step of the model with control held constant.
pub fn discrete_step(q: &State, u: &Control, m: &MpcModel, h: f64) -> State {
    let k1 = model_derivative(q, u, m);
    let k2 = model_derivative(&(q + k1 * (0.5 * h)), u, m);
    let k3 = model_derivative(&(q + k2 * (0.5 * h)), u, m);
    let k4 = model_derivative(&(q + k3 * h), u, m);
    q + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Exact Jacobians of [`discrete_step`], by differentiating each RK4 stage.
pub fn linearize(q: &State, u: &Control, m: &MpcModel, h: f64) -> (State, StateJacobian, ControlJacobian) {
    let eye = StateJacobian::identity();
    let k1 = model_derivative(q, u, m);
    let (a1, b1) = continuous_jacobians(q, u, m);
    let (dk1_dq, dk1_du) = (a1, b1);

    let q2 = q + k1 * (0.5 * h);
    let k2 = model_derivative(&q2, u, m);
    let (a2, b2) = continuous_jacobians(&q2, u, m);
    let dk2_dq = a2 * (eye + dk1_dq * (0.5 * h));
    let dk2_du = a2 * (dk1_du * (0.5 * h)) + b2;

    let q3 = q + k2 * (0.5 * h);
    let k3 = model_derivative(&q3, u, m);
    let (a3, b3) = continuous_jacobians(&q3, u, m);
    let dk3_dq = a3 * (eye + dk2_dq * (0.5 * h));
    let dk3_du = a3 * (dk2_du * (0.5 * h)) + b3;

    let q4 = q + k3 * h;
    let k4 = model_derivative(&q4, u, m);
    let (a4, b4) = continuous_jacobians(&q4, u, m);
    let dk4_dq = a4 * (eye + dk3_dq * h);
    let dk4_du = a4 * (dk3_du * h) + b4;

    let w = h / 6.0;
    let next = q + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * w;
    let a = eye + (dk1_dq + dk2_dq * 2.0 + dk3_dq * 2.0 + dk4_dq) * w;
    let b = (dk1_du + dk2_du * 2.0 + dk3_du * 2.0 + dk4_du) * w;
    (next, a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpConfig {
    /// Seconds.
    pub horizon: f64,
    /// Hz.
    pub control_rate: f64,
    pub nodes: usize,
    /// Weight on `(x - gx, y - gy)`, 1/m^2.
    pub position_weight: f64,
    /// Weight on `(u, v, r)`.
    pub velocity_weight: f64,
    /// Weight on the thrust commands.
    pub control_weight: f64,
    /// Terminal state weights are this multiple of the stage weights.
    pub terminal_factor: f64,
    /// Proximal weight on the control update of each iteration
    /// (Levenberg-Marquardt style); 0 gives the plain Gauss-Newton step.
    pub step_regularization: f64,
    /// Yaw damping used by the controller model instead of the identified one.
    pub n_r_override: Option<f64>,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            horizon: 3.0,
            control_rate: 20.0,
            nodes: 60,
            position_weight: 1.0,
            velocity_weight: 0.1,
            control_weight: 0.05,
            terminal_factor: 10.0,
            step_regularization: 0.0,
            n_r_override: None,
        }
    }
}

impl OcpConfig {
    pub fn node_dt(&self) -> f64 {
        self.horizon / self.nodes as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.control_rate > 0.0 && self.nodes > 0) {
            return Err(Error::invalid("mpc", "horizon, control_rate and nodes must be > 0"));
        }
        if !(self.position_weight > 0.0) {
            return Err(Error::invalid("mpc.position_weight", "must be > 0"));
        }
        // The QP Hessian in u is control_weight * I plus a PSD term.
        if !(self.control_weight > 0.0) {
            return Err(Error::invalid("mpc.control_weight", "must be > 0"));
        }
        for (name, v) in [
            ("velocity_weight", self.velocity_weight),
            ("terminal_factor", self.terminal_factor),
            ("step_regularization", self.step_regularization),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("mpc.{name}"), "must be finite and >= 0"));
            }
        }
        if let Some(nr) = self.n_r_override {
            if !(nr.is_finite() && nr >= 0.0) {
                return Err(Error::invalid("mpc.n_r_override", "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    fn stage_weights(&self) -> [f64; 6] {
        let (p, v) = (self.position_weight, self.velocity_weight);
        [p, p, 0.0, v, v, v]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// `nodes + 1` states.
    pub states: Vec<State>,
    /// `nodes` controls, each within `[-1, 1]^2`.
    pub controls: Vec<Control>,
    /// Shooting defects plus initial-state mismatch before the step.
    pub residual: f64,
    /// Norm of the Gauss-Newton update.
    pub step_norm: f64,
    pub latency_s: f64,
    pub degraded: bool,
}

impl MpcSolution {
    /// Zero controls and the model rolled out from `q0`.
    pub fn cold_start(q0: &State, model: &MpcModel, config: &OcpConfig) -> Self {
        let controls = vec![Control::zeros(); config.nodes];
        let mut states = Vec::with_capacity(config.nodes + 1);
        states.push(*q0);
        for u in &controls {
            let next = discrete_step(states.last().expect("non-empty"), u, model, config.node_dt());
            states.push(next);
        }
        Self {
            states,
            controls,
            residual: 0.0,
            step_norm: 0.0,
            latency_s: 0.0,
            degraded: false,
        }
    }

    pub fn first_control(&self) -> Action {
        let u = self.controls.first().copied().unwrap_or_else(Control::zeros);
        Action::new(u[0], u[1])
    }

    /// Receding-horizon shift: node k takes node k+1, the last node is duplicated.
    pub fn shifted(&self) -> Self {
        let mut states = self.states[1..].to_vec();
        states.push(*self.states.last().expect("non-empty"));
        let mut controls = self.controls[1..].to_vec();
        controls.push(*self.controls.last().expect("non-empty"));
        Self {
            states,
            controls,
            ..self.clone()
        }
    }

    /// Max-norm distance between two trajectories.
    pub fn distance(&self, other: &MpcSolution) -> f64 {
        let s = self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        let c = self
            .controls
            .iter()
            .zip(&other.controls)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        s.max(c)
    }
}

pub fn state_from_vessel(s: &VesselState) -> State {
    State::new(s.x, s.y, s.psi, s.u, s.v, s.r)
}

/// One Gauss-Newton iteration of the OCP around `guess`, with the initial
/// state embedded as `q0`.
pub fn gauss_newton_step(q0: &State, target: &Goal, guess: &MpcSolution, config: &OcpConfig, model: &MpcModel) -> MpcSolution {
    let started = Instant::now();
    let n = guess.controls.len();
    let h = config.node_dt();
    let stage = config.stage_weights();
    let q_stage = StateJacobian::from_diagonal(&State::from(stage));
    let q_term = q_stage * config.terminal_factor;
    let r_stage = SMatrix::<f64, 2, 2>::identity() * config.control_weight;
    let prox = SMatrix::<f64, 2, 2>::identity() * config.step_regularization;
    let reference = State::new(target.gx, target.gy, 0.0, 0.0, 0.0, 0.0);
    let state_error = |q: &State| {
        let mut e = q - reference;
        e[2] = 0.0;
        e
    };

    // Linearize every interval and collect defects.
    let mut a_k = Vec::with_capacity(n);
    let mut b_k = Vec::with_capacity(n);
    let mut c_k = Vec::with_capacity(n);
    let mut residual = 0.0;
    for k in 0..n {
        let (next, a, b) = linearize(&guess.states[k], &guess.controls[k], model, h);
        let defect = next - guess.states[k + 1];
        residual += defect.norm_squared();
        a_k.push(a);
        b_k.push(b);
        c_k.push(defect);
    }
    let mut dq0 = q0 - guess.states[0];
    dq0[2] = wrap_angle(dq0[2]);
    residual = (residual + dq0.norm_squared()).sqrt();

    let degraded = || {
        let mut fallback = guess.clone();
        fallback.residual = residual;
        fallback.step_norm = 0.0;
        fallback.latency_s = started.elapsed().as_secs_f64();
        fallback.degraded = true;
        fallback
    };

    // Backward Riccati recursion.
    let mut gains = Vec::with_capacity(n);
    let mut p_mat = q_term;
    let mut p_vec = q_term * state_error(&guess.states[n]);
    for k in (0..n).rev() {
        let (a, b, c) = (&a_k[k], &b_k[k], &c_k[k]);
        let pc = p_mat * c + p_vec;
        let quu = r_stage + b.transpose() * p_mat * b + prox;
        let qux = b.transpose() * p_mat * a;
        let qxx = q_stage + a.transpose() * p_mat * a;
        let qu = r_stage * guess.controls[k] + b.transpose() * pc;
        let qx = q_stage * state_error(&guess.states[k]) + a.transpose() * pc;
        if quu.cholesky().is_none() {
            return degraded();
        }
        let u_bar = guess.controls[k];
        let (k_ff, free) = box_qp(&quu, &qu, &(-Control::repeat(1.0) - u_bar), &(Control::repeat(1.0) - u_bar));
        // Saturated controls get no feedback.
        let mut k_fb = SMatrix::<f64, 2, 6>::zeros();
        match free {
            [true, true] => k_fb = -quu.cholesky().expect("checked above").solve(&qux),
            [true, false] => k_fb.set_row(0, &(-qux.row(0) / quu[(0, 0)])),
            [false, true] => k_fb.set_row(1, &(-qux.row(1) / quu[(1, 1)])),
            [false, false] => {}
        }
        let kt = k_fb.transpose();
        p_mat = qxx + kt * quu * k_fb + kt * qux + qux.transpose() * k_fb;
        p_mat = (p_mat + p_mat.transpose()) * 0.5;
        p_vec = qx + kt * (quu * k_ff + qu) + qux.transpose() * k_ff;
        gains.push((k_fb, k_ff));
    }
    gains.reverse();

    // Forward pass with clamped controls.
    let mut states = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n);
    let mut dq = dq0;
    let mut step_sq = dq.norm_squared();
    for k in 0..n {
        let (k_fb, k_ff) = &gains[k];
        let u_bar = guess.controls[k];
        let u_new = (u_bar + k_fb * dq + k_ff).map(|v| v.clamp(-1.0, 1.0));
        let du = u_new - u_bar;
        states.push(guess.states[k] + dq);
        controls.push(u_new);
        dq = a_k[k] * dq + b_k[k] * du + c_k[k];
        step_sq += du.norm_squared() + dq.norm_squared();
    }
    states.push(guess.states[n] + dq);

    if states.iter().any(|s| !s.iter().all(|v| v.is_finite())) {
        return degraded();
    }
    MpcSolution {
        states,
        controls,
        residual,
        step_norm: step_sq.sqrt(),
        latency_s: started.elapsed().as_secs_f64(),
        degraded: false,
    }
}

/// Minimizes `0.5 x'Hx + g'x` over `lo <= x <= hi` for positive definite
/// `H`, by checking every face of the box. Returns the minimizer and which
/// coordinates are strictly inside their bounds.
fn box_qp(h: &SMatrix<f64, 2, 2>, g: &Control, lo: &Control, hi: &Control) -> (Control, [bool; 2]) {
    let objective = |x: &Control| 0.5 * x.dot(&(h * x)) + g.dot(x);
    let mut best: Option<(f64, Control, [bool; 2])> = None;
    // Per coordinate: 0 free, 1 at lower, 2 at upper.
    for face in 0..9 {
        let modes = [face % 3, face / 3];
        let mut x = Control::zeros();
        for i in 0..2 {
            match modes[i] {
                1 => x[i] = lo[i],
                2 => x[i] = hi[i],
                _ => {}
            }
        }
        match modes {
            [0, 0] => match h.cholesky() {
                Some(c) => x = c.solve(&(-g)),
                None => continue,
            },
            [0, _] => x[0] = -(g[0] + h[(0, 1)] * x[1]) / h[(0, 0)],
            [_, 0] => x[1] = -(g[1] + h[(1, 0)] * x[0]) / h[(1, 1)],
            _ => {}
        }
        let feasible = (0..2).all(|i| x[i] >= lo[i] - 1e-12 && x[i] <= hi[i] + 1e-12);
        if !feasible {
            continue;
        }
        let f = objective(&x);
        if best.as_ref().is_none_or(|(bf, _, _)| f < *bf) {
            best = Some((f, x, [modes[0] == 0, modes[1] == 0]));
        }
    }
    let (_, x, free) = best.expect("the box corners are always feasible");
    (x, free)
}

/// Real-time iteration: shift the previous solution, then one Gauss-Newton step.
pub fn rti_step(q0: &State, target: &Goal, previous: &MpcSolution, config: &OcpConfig, model: &MpcModel) -> MpcSolution {
    let started = Instant::now();
    let mut guess = previous.shifted();
    // Keep the heading continuous with the stored trajectory.
    let mut q0 = *q0;
    q0[2] = guess.states[0][2] + wrap_angle(q0[2] - guess.states[0][2]);
    guess.degraded = false;
    let mut sol = gauss_newton_step(&q0, target, &guess, config, model);
    sol.latency_s = started.elapsed().as_secs_f64();
    sol
}

/// Per-step solver diagnostics for episode logs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub residual: f64,
    pub latency_s: f64,
    pub degraded: bool,
}

/// Stateful controller wrapping [`rti_step`].
#[derive(Debug, Clone)]
pub struct MpcController {
    pub model: MpcModel,
    pub config: OcpConfig,
    solution: Option<MpcSolution>,
}

impl MpcController {
    pub fn new(model: MpcModel, config: OcpConfig) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        Ok(Self {
            model,
            config,
            solution: None,
        })
    }

    /// Forget the warm start; the next call cold-starts.
    pub fn reset(&mut self) {
        self.solution = None;
    }

    pub fn solution(&self) -> Option<&MpcSolution> {
        self.solution.as_ref()
    }

    pub fn control(&mut self, state: &VesselState, goal: &Goal) -> (Action, SolverDiagnostics) {
        let q0 = state_from_vessel(state);
        let sol = match &self.solution {
            Some(prev) => rti_step(&q0, goal, prev, &self.config, &self.model),
            None => {
                let cold = MpcSolution::cold_start(&q0, &self.model, &self.config);
                // The cold start is already consistent with q0; no shift.
                gauss_newton_step(&q0, goal, &cold, &self.config, &self.model)
            }
        };
        // A degraded solve returns the shifted warm start, so this is its first control.
        let action = sol.first_control();
        let diag = SolverDiagnostics {
            residual: sol.residual,
            latency_s: sol.latency_s,
            degraded: sol.degraded,
        };
        self.solution = Some(sol);
        (action, diag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn model() -> MpcModel {
        MpcModel::from_params(&VesselParams::default(), None)
    }

    #[test]
    fn derivative_examples() {
        let m = model();
        assert_eq!(model_derivative(&State::zeros(), &Control::zeros(), &m), State::zeros());
        let d = model_derivative(&State::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0), &Control::zeros(), &m);
        assert_eq!((d[0], d[1]), (1.0, 0.0));
        let d = model_derivative(&State::new(0.0, 0.0, FRAC_PI_2, 1.0, 0.0, 0.0), &Control::zeros(), &m);
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn model_keeps_only_linear_damping() {
        let mut p = VesselParams::default();
        p.damping_quadratic.surge = 1e6;
        let m = MpcModel::from_params(&p, Some(2.0));
        assert_eq!(m.x_u, 0.0);
        assert_eq!(m.n_r, 2.0);
        let d = model_derivative(&State::new(0.0, 0.0, 0.0, 1.5, 0.0, 0.0), &Control::zeros(), &m);
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn damping_row_of_jacobian() {
        let m = MpcModel { x_u: 3.0, ..model() };
        let (a, _) = continuous_jacobians(&State::zeros(), &Control::zeros(), &m);
        assert_eq!(a[(3, 3)], -3.0 / m.mass);
    }

    #[test]
    fn shift_duplicates_last_node() {
        let m = model();
        let cfg = OcpConfig::default();
        let mut sol = MpcSolution::cold_start(&State::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0), &m, &cfg);
        for (k, u) in sol.controls.iter_mut().enumerate() {
            *u = Control::new(k as f64 / 100.0, -(k as f64) / 100.0);
        }
        let shifted = sol.shifted();
        for k in 0..cfg.nodes - 1 {
            assert_eq!(shifted.controls[k], sol.controls[k + 1]);
            assert_eq!(shifted.states[k], sol.states[k + 1]);
        }
        assert_eq!(shifted.controls[cfg.nodes - 1], sol.controls[cfg.nodes - 1]);
        assert_eq!(shifted.states[cfg.nodes], sol.states[cfg.nodes]);
    }

    #[test]
    fn config_validation() {
        assert!(OcpConfig::default().validate().is_ok());
        assert!(OcpConfig { position_weight: 0.0, ..Default::default() }.validate().is_err());
        assert!(OcpConfig { velocity_weight: -1.0, ..Default::default() }.validate().is_err());
        assert!(OcpConfig { nodes: 0, ..Default::default() }.validate().is_err());
    }
}
