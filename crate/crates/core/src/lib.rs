//! Simulation and control workbench for a twin-hull autonomous surface
//! vessel chasing floating targets.
//!
//! * [`dynamics`]: planar rigid-body plant with damping, CoM offset and
//!   rate-limited thrusters.
//! * [`task`]: capture episodes, observations, reward, domain randomization.
//! * [`ppo`]: from-scratch actor-critic PPO trainer.
//! * [`mpc`]: real-time-iteration Gauss-Newton MPC baseline.
//! * [`eval`]: metrics, parameter sweeps, degradation tables and plots.
//! * [`config`]: the run configuration file and dotted-path overrides.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod mpc;
pub mod ppo;
pub mod task;

pub use error::{Error, Result};
