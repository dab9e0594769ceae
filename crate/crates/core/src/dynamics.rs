//! Planar (surge, sway, yaw) rigid-body model of a twin-hull ASV.
//!
//! The body velocities `u, v, r` are referenced to the center of mass, which
//! may sit `com_offset_y` meters to the left of the geometric center. Pose
//! `(x, y, psi)` tracks the geometric center. Hydrodynamic damping is evaluated
//! with the velocity of the geometric center and acts there; thrusters act at
//! their mounts. Both produce yaw moments about the shifted center of mass.
//! Coriolis, added-mass coupling and out-of-plane motion are not modeled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physics step used by the task and by the reference experiments.
pub const PHYSICS_DT: f64 = 0.01;

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    if a > -PI && a <= PI {
        return a;
    }
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Body-frame force/torque triple `(X, Y, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub x: f64,
    pub y: f64,
    pub n: f64,
}

impl Wrench {
    pub const ZERO: Wrench = Wrench { x: 0.0, y: 0.0, n: 0.0 };

    pub fn new(x: f64, y: f64, n: f64) -> Self {
        Self { x, y, n }
    }
}

impl std::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, o: Wrench) -> Wrench {
        Wrench::new(self.x + o.x, self.y + o.y, self.n + o.n)
    }
}

impl std::ops::Neg for Wrench {
    type Output = Wrench;
    fn neg(self) -> Wrench {
        Wrench::new(-self.x, -self.y, -self.n)
    }
}

/// External force/torque acting at the center of mass, body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DisturbanceWrench {
    pub force_x: f64,
    pub force_y: f64,
    pub torque_z: f64,
}

impl DisturbanceWrench {
    pub const ZERO: DisturbanceWrench = DisturbanceWrench {
        force_x: 0.0,
        force_y: 0.0,
        torque_z: 0.0,
    };

    pub fn is_finite(&self) -> bool {
        self.force_x.is_finite() && self.force_y.is_finite() && self.torque_z.is_finite()
    }

    fn as_wrench(&self) -> Wrench {
        Wrench::new(self.force_x, self.force_y, self.torque_z)
    }
}

/// Per-axis damping coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DampingCoefficients {
    pub surge: f64,
    pub sway: f64,
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VesselParams {
    pub mass: f64,
    pub inertia_z: f64,
    /// Lateral center-of-mass shift from the geometric center, positive left.
    pub com_offset_y: f64,
    /// `X_u, Y_v, N_r`
    pub damping_linear: DampingCoefficients,
    /// `X_u|u|, Y_v|v|, N_r|r|`
    pub damping_quadratic: DampingCoefficients,
    pub thruster_separation: f64,
    pub thrust_max_forward: f64,
    pub thrust_max_reverse: f64,
    /// Maximum change of the applied command per second.
    pub thrust_slew_rate: f64,
    pub thrust_gain_left: f64,
    pub thrust_gain_right: f64,
}

impl Default for VesselParams {
    fn default() -> Self {
        let thrust_max_forward = 22.1;
        Self {
            mass: 35.82,
            inertia_z: 8.31,
            com_offset_y: 0.0,
            damping_linear: DampingCoefficients {
                surge: 0.00,
                sway: 99.99,
                yaw: 5.83,
            },
            damping_quadratic: DampingCoefficients {
                surge: 17.26,
                sway: 99.99,
                yaw: 17.34,
            },
            thruster_separation: 0.74,
            thrust_max_forward,
            thrust_max_reverse: 0.6 * thrust_max_forward,
            thrust_slew_rate: 1.0,
            thrust_gain_left: 1.0,
            thrust_gain_right: 1.0,
        }
    }
}

impl VesselParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("inertia_z", self.inertia_z),
            ("thruster_separation", self.thruster_separation),
            ("thrust_slew_rate", self.thrust_slew_rate),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(format!("vessel.{name}"), format!("must be > 0, got {value}")));
            }
        }
        let non_negative = [
            ("damping_linear.surge", self.damping_linear.surge),
            ("damping_linear.sway", self.damping_linear.sway),
            ("damping_linear.yaw", self.damping_linear.yaw),
            ("damping_quadratic.surge", self.damping_quadratic.surge),
            ("damping_quadratic.sway", self.damping_quadratic.sway),
            ("damping_quadratic.yaw", self.damping_quadratic.yaw),
            ("thrust_max_forward", self.thrust_max_forward),
            ("thrust_max_reverse", self.thrust_max_reverse),
        ];
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::invalid(format!("vessel.{name}"), format!("must be >= 0, got {value}")));
            }
        }
        for (name, gain) in [("thrust_gain_left", self.thrust_gain_left), ("thrust_gain_right", self.thrust_gain_right)] {
            if !(gain > 0.0 && gain <= 1.5) {
                return Err(Error::invalid(format!("vessel.{name}"), format!("must lie in (0, 1.5], got {gain}")));
            }
        }
        if !self.com_offset_y.is_finite() {
            return Err(Error::invalid("vessel.com_offset_y", "must be finite"));
        }
        Ok(())
    }

    /// Force produced by one thruster for an applied command in `[-1, 1]`.
    pub fn thrust_force(&self, command: f64, gain: f64) -> f64 {
        let c = command.clamp(-1.0, 1.0);
        let base = if c >= 0.0 {
            self.thrust_max_forward * c
        } else {
            self.thrust_max_reverse * c
        };
        gain * base
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VesselState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub r: f64,
    pub thrust_applied_left: f64,
    pub thrust_applied_right: f64,
}

impl VesselState {
    pub fn at_rest() -> Self {
        Self::default()
    }

    /// Vessel at the origin heading +x with the given surge speed.
    pub fn with_surge(u: f64) -> Self {
        Self { u, ..Self::default() }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.x,
            self.y,
            self.psi,
            self.u,
            self.v,
            self.r,
            self.thrust_applied_left,
            self.thrust_applied_right,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn kinetic_energy(&self, params: &VesselParams) -> f64 {
        0.5 * (params.mass * (self.u * self.u + self.v * self.v) + params.inertia_z * self.r * self.r)
    }

    /// Body velocity of the geometric center (`u + r * com_offset_y`, `v`).
    pub fn center_velocity(&self, params: &VesselParams) -> (f64, f64) {
        (self.u + self.r * params.com_offset_y, self.v)
    }
}

/// Time derivative of the continuous part of [`VesselState`]; the applied
/// thrust is held constant within a step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub r: f64,
}

/// `D(nu) nu` with linear and quadratic terms per axis.
pub fn damping_wrench(nu: (f64, f64, f64), params: &VesselParams) -> Wrench {
    let (u, v, r) = nu;
    let l = &params.damping_linear;
    let q = &params.damping_quadratic;
    Wrench::new(
        l.surge * u + q.surge * u.abs() * u,
        l.sway * v + q.sway * v.abs() * v,
        l.yaw * r + q.yaw * r.abs() * r,
    )
}

/// Thruster wrench about the center of mass for the applied commands in `state`.
pub fn thruster_wrench(state: &VesselState, params: &VesselParams) -> Wrench {
    let f_left = params.thrust_force(state.thrust_applied_left, params.thrust_gain_left);
    let f_right = params.thrust_force(state.thrust_applied_right, params.thrust_gain_right);
    let half = 0.5 * params.thruster_separation;
    // Mounts sit at y = +half (left) and y = -half (right) from the geometric
    // center, i.e. `-com_offset_y` further right relative to the center of mass.
    let surge = f_left + f_right;
    Wrench::new(surge, 0.0, half * (f_right - f_left) + params.com_offset_y * surge)
}

/// Moves each applied command toward its target by at most `thrust_slew_rate * dt`.
pub fn apply_slew(command: (f64, f64), state: &VesselState, dt: f64, params: &VesselParams) -> (f64, f64) {
    let max_step = params.thrust_slew_rate * dt;
    let slew = |applied: f64, target: f64| {
        let target = target.clamp(-1.0, 1.0);
        let delta = target - applied;
        let next = if delta.abs() <= max_step {
            target
        } else {
            applied + max_step.copysign(delta)
        };
        next.clamp(-1.0, 1.0)
    };
    (
        slew(state.thrust_applied_left, command.0),
        slew(state.thrust_applied_right, command.1),
    )
}

pub fn derivative(state: &VesselState, params: &VesselParams, disturbance: &DisturbanceWrench) -> StateDerivative {
    let (uc, vc) = state.center_velocity(params);
    let drag = damping_wrench((uc, vc, state.r), params);
    // Surge drag acts at the geometric center, `com_offset_y` to the right of
    // the center of mass; sway drag has no lever arm for a lateral offset.
    let drag_about_com = Wrench::new(drag.x, drag.y, drag.n + params.com_offset_y * drag.x);
    let tau = thruster_wrench(state, params) + disturbance.as_wrench() + (-drag_about_com);

    let (s, c) = state.psi.sin_cos();
    StateDerivative {
        x: c * uc - s * vc,
        y: s * uc + c * vc,
        psi: state.r,
        u: tau.x / params.mass,
        v: tau.y / params.mass,
        r: tau.n / params.inertia_z,
    }
}

fn offset(state: &VesselState, k: &StateDerivative, h: f64) -> VesselState {
    VesselState {
        x: state.x + h * k.x,
        y: state.y + h * k.y,
        psi: state.psi + h * k.psi,
        u: state.u + h * k.u,
        v: state.v + h * k.v,
        r: state.r + h * k.r,
        ..*state
    }
}

/// One slew update followed by a classical RK4 step of length `dt`.
pub fn step_dynamics(
    state: &VesselState,
    command: (f64, f64),
    params: &VesselParams,
    disturbance: &DisturbanceWrench,
    dt: f64,
) -> Result<VesselState> {
    if !(dt > 0.0 && dt <= 0.1) {
        return Err(Error::Numerical(format!("time step must lie in (0, 0.1], got {dt}")));
    }
    if !state.is_finite() {
        return Err(Error::Numerical(format!("non-finite vessel state {state:?}")));
    }
    if !disturbance.is_finite() {
        return Err(Error::Numerical(format!("non-finite disturbance {disturbance:?}")));
    }
    if !(command.0.is_finite() && command.1.is_finite()) {
        return Err(Error::Numerical(format!("non-finite thrust command {command:?}")));
    }

    let (left, right) = apply_slew(command, state, dt, params);
    let s0 = VesselState {
        thrust_applied_left: left,
        thrust_applied_right: right,
        ..*state
    };

    let k1 = derivative(&s0, params, disturbance);
    let k2 = derivative(&offset(&s0, &k1, 0.5 * dt), params, disturbance);
    let k3 = derivative(&offset(&s0, &k2, 0.5 * dt), params, disturbance);
    let k4 = derivative(&offset(&s0, &k3, dt), params, disturbance);
    let w = dt / 6.0;
    let combine = |a: f64, b1: f64, b2: f64, b3: f64, b4: f64| a + w * (b1 + 2.0 * b2 + 2.0 * b3 + b4);

    let next = VesselState {
        x: combine(s0.x, k1.x, k2.x, k3.x, k4.x),
        y: combine(s0.y, k1.y, k2.y, k3.y, k4.y),
        psi: wrap_angle(combine(s0.psi, k1.psi, k2.psi, k3.psi, k4.psi)),
        u: combine(s0.u, k1.u, k2.u, k3.u, k4.u),
        v: combine(s0.v, k1.v, k2.v, k3.v, k4.v),
        r: combine(s0.r, k1.r, k2.r, k3.r, k4.r),
        ..s0
    };
    if !next.is_finite() {
        return Err(Error::Numerical(format!("integration produced non-finite state from {state:?}")));
    }
    Ok(next)
}
