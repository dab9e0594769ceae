//! Proximal policy optimization with a tanh-squashed Gaussian policy.

pub mod buffer;
pub mod checkpoint;
pub mod net;
pub mod policy;
pub mod train;

pub use buffer::{gae, normalize_advantages, RolloutBuffer};
pub use policy::{loss_and_grad, Adam, LossCoefficients, LossStats, Minibatch, PolicyNetwork, PolicyOutput};
pub use train::{ppo_update, train, write_curve_csv, CurveRow, TrainConfig, TrainOutcome, TrainingSetup, UpdateStats};
