//! Vectorized rollout collection and the PPO update loop.

use std::collections::VecDeque;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::buffer::RolloutBuffer;
use super::policy::{clip_grad_norm, loss_and_grad, Adam, LossCoefficients, LossStats, Minibatch, PolicyNetwork, ACTION_DIM, OBS_DIM};
use crate::dynamics::VesselParams;
use crate::error::{Error, Result};
use crate::task::{
    curriculum_level, reset, Action, Episode, EpisodeConfig, GoalSpec, ObservationNoise, Observation, RandomizationConfig,
    RewardWeights, TaskConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub num_envs: usize,
    /// Samples per iteration; must be a multiple of `num_envs`.
    pub batch_size: usize,
    pub max_iterations: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub update_epochs: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    /// Completed episodes averaged into each training-curve row.
    pub curve_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_envs: 2048,
            batch_size: 16384,
            max_iterations: 1000,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            learning_rate: 3e-4,
            update_epochs: 4,
            minibatches: 4,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 1.0,
            hidden: vec![128, 128],
            init_log_std: 0.0,
            curve_window: 100,
        }
    }
}

impl TrainConfig {
    pub fn rollout_length(&self) -> usize {
        self.batch_size / self.num_envs.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_envs == 0 {
            return Err(Error::invalid("ppo.num_envs", "must be >= 1"));
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(self.num_envs) {
            return Err(Error::invalid(
                "ppo.batch_size",
                format!("must be a positive multiple of num_envs ({})", self.num_envs),
            ));
        }
        if self.minibatches == 0 || self.minibatches > self.batch_size {
            return Err(Error::invalid("ppo.minibatches", "must lie in [1, batch_size]"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("ppo.hidden", "needs at least one non-empty hidden layer"));
        }
        let coefs = [
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
            ("clip_epsilon", self.clip_epsilon),
            ("learning_rate", self.learning_rate),
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("max_grad_norm", self.max_grad_norm),
            ("init_log_std", self.init_log_std),
        ];
        for (name, v) in coefs {
            if !v.is_finite() {
                return Err(Error::invalid(format!("ppo.{name}"), "must be finite"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::invalid("ppo.gamma", "gamma and gae_lambda must lie in [0, 1]"));
        }
        if self.clip_epsilon < 0.0 || self.learning_rate <= 0.0 {
            return Err(Error::invalid("ppo.learning_rate", "clip_epsilon must be >= 0 and learning_rate > 0"));
        }
        Ok(())
    }
}

/// Everything about the environment a training run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSetup {
    pub task: TaskConfig,
    pub weights: RewardWeights,
    pub randomization: RandomizationConfig,
    pub vessel: VesselParams,
    /// Apply domain randomization following the curriculum.
    pub randomize: bool,
}

impl Default for TrainingSetup {
    fn default() -> Self {
        Self {
            task: TaskConfig::default(),
            weights: RewardWeights::default(),
            randomization: RandomizationConfig::default(),
            vessel: VesselParams::default(),
            randomize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub mean_reward: Option<f64>,
    pub success_rate: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub level: f64,
}

#[derive(Debug, Clone)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

struct EnvSlot {
    episode: Episode,
    rng: ChaCha8Rng,
    obs: Observation,
    episode_return: f64,
}

struct StepReport {
    reward: f64,
    done: bool,
    truncated_obs: Option<Observation>,
    finished: Option<(f64, bool)>,
}

fn new_episode(rng: &mut ChaCha8Rng, setup: &TrainingSetup, level: f64) -> Result<(Episode, Observation)> {
    let level = if setup.randomize { level } else { 0.0 };
    let cfg = EpisodeConfig {
        goal: GoalSpec::Random,
        initial_speed: None,
        params: setup.vessel,
        level,
    };
    let start = reset(rng, &cfg, &setup.randomization)?;
    let noise = ObservationNoise::scaled(&setup.randomization, level);
    let episode = Episode::new(start, noise, setup.task, setup.weights);
    let obs = episode.observe(rng);
    Ok((episode, obs))
}

impl EnvSlot {
    fn new(seed: u64, stream: u64, setup: &TrainingSetup, level: f64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let (episode, obs) = new_episode(&mut rng, setup, level)?;
        Ok(Self {
            episode,
            rng,
            obs,
            episode_return: 0.0,
        })
    }

    fn step(&mut self, action: Action, setup: &TrainingSetup, level: f64) -> Result<StepReport> {
        let out = self.episode.step(action, &mut self.rng)?;
        self.episode_return += out.reward;
        if !out.done {
            self.obs = out.observation;
            return Ok(StepReport {
                reward: out.reward,
                done: false,
                truncated_obs: None,
                finished: None,
            });
        }
        let finished = Some((self.episode_return, out.success));
        let (episode, obs) = new_episode(&mut self.rng, setup, level)?;
        self.episode = episode;
        self.obs = obs;
        self.episode_return = 0.0;
        Ok(StepReport {
            reward: out.reward,
            done: true,
            truncated_obs: out.truncated.then_some(out.observation),
            finished,
        })
    }
}

fn observation_matrix(obs: impl ExactSizeIterator<Item = Observation>) -> Array2<f64> {
    let n = obs.len();
    let mut m = Array2::zeros((n, OBS_DIM));
    for (i, o) in obs.enumerate() {
        for (j, v) in o.to_array().into_iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    m
}

/// Runs `update_epochs` passes of shuffled minibatch PPO updates over `buffer`.
pub fn ppo_update(
    net: &mut PolicyNetwork,
    optimizer: &mut Adam,
    buffer: &RolloutBuffer,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let n = buffer.len();
    if buffer.advantages.len() != n || buffer.returns.len() != n {
        return Err(Error::Numerical("rollout buffer advantages are stale; call finish first".into()));
    }
    let obs = buffer.flat_obs();
    let actions = buffer.flat_actions();
    let old_logp = buffer.flat_log_probs();
    let coef = LossCoefficients {
        clip_epsilon: config.clip_epsilon,
        value_coef: config.value_coef,
        entropy_coef: config.entropy_coef,
    };
    let mb_size = n / config.minibatches;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut acc = LossStats::default();
    let mut count = 0.0;

    for _ in 0..config.update_epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(mb_size).take(config.minibatches) {
            let mb_obs = obs.select(Axis(0), chunk);
            let mb_act = actions.select(Axis(0), chunk);
            let mb_logp: Vec<f64> = chunk.iter().map(|&i| old_logp[i]).collect();
            let mb_adv: Vec<f64> = chunk.iter().map(|&i| buffer.advantages[i]).collect();
            let mb_ret: Vec<f64> = chunk.iter().map(|&i| buffer.returns[i]).collect();
            let batch = Minibatch {
                obs: mb_obs.view(),
                raw_actions: mb_act.view(),
                old_log_probs: &mb_logp,
                advantages: &mb_adv,
                returns: &mb_ret,
            };
            let (stats, mut grads) = loss_and_grad(net, &batch, &coef);
            if !stats.total.is_finite() || !grads.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss (policy {}, value {}, entropy {})",
                    stats.policy, stats.value, stats.entropy
                )));
            }
            clip_grad_norm(&mut grads, config.max_grad_norm);
            optimizer.step(&mut net.params, &grads);
            net.project();
            acc.policy += stats.policy;
            acc.value += stats.value;
            acc.approx_kl += stats.approx_kl;
            acc.clip_fraction += stats.clip_fraction;
            count += 1.0;
        }
    }
    let count = f64::max(count, 1.0);
    Ok(UpdateStats {
        policy_loss: acc.policy / count,
        value_loss: acc.value / count,
        kl: acc.approx_kl / count,
        clip_fraction: acc.clip_fraction / count,
    })
}

pub struct TrainOutcome {
    pub network: PolicyNetwork,
    pub curve: Vec<CurveRow>,
}

/// Trains a fresh policy. `observer` sees every curve row with the current
/// network (for logging and checkpointing); returning an error aborts.
pub fn train(
    setup: &TrainingSetup,
    config: &TrainConfig,
    seed: u64,
    mut observer: impl FnMut(&CurveRow, &PolicyNetwork) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    setup.task.validate()?;
    setup.weights.validate()?;
    setup.randomization.validate()?;
    setup.vessel.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = PolicyNetwork::new(&config.hidden, config.init_log_std, &mut rng);
    let mut curve = Vec::with_capacity(config.max_iterations);
    if config.max_iterations == 0 {
        return Ok(TrainOutcome { network: net, curve });
    }

    let mut optimizer = Adam::new(&net.params, config.learning_rate);
    let env_seed = seed ^ 0x005e_ed0f_e4e5;
    let level_at = |it: usize| if setup.randomize { curriculum_level(it, &setup.randomization) } else { 0.0 };
    let mut slots = (0..config.num_envs)
        .map(|i| EnvSlot::new(env_seed, i as u64, setup, level_at(0)))
        .collect::<Result<Vec<_>>>()?;

    let steps = config.rollout_length();
    let mut recent: VecDeque<(f64, bool)> = VecDeque::with_capacity(config.curve_window);

    for iteration in 0..config.max_iterations {
        let level = level_at(iteration);
        let mut buffer = RolloutBuffer::new(steps, config.num_envs, OBS_DIM, ACTION_DIM);

        for t in 0..steps {
            let raw = observation_matrix(slots.iter().map(|s| s.obs));
            net.obs_norm.update(raw.view());
            let x = net.obs_norm.normalize(raw.view());
            let (means, values) = net.forward_normalized(x.view());
            let (raw_actions, logp) = net.sample(&means, &mut rng);
            buffer.obs.index_axis_mut(Axis(0), t).assign(&x);
            buffer.raw_actions.index_axis_mut(Axis(0), t).assign(&raw_actions);
            buffer.log_probs.row_mut(t).assign(&logp);
            buffer.values.row_mut(t).assign(&values);

            let actions: Vec<Action> = raw_actions
                .rows()
                .into_iter()
                .map(|a| Action::new(a[0].tanh(), a[1].tanh()))
                .collect();
            let reports = slots
                .par_iter_mut()
                .zip(actions.par_iter())
                .map(|(slot, &a)| slot.step(a, setup, level))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Diverged {
                    iteration,
                    reason: e.to_string(),
                })?;

            // Time-limit truncation bootstraps from the final observation.
            let truncated: Vec<(usize, Observation)> = reports
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.truncated_obs.map(|o| (i, o)))
                .collect();
            let mut bootstrap = vec![0.0; config.num_envs];
            if !truncated.is_empty() {
                let m = observation_matrix(truncated.iter().map(|(_, o)| *o));
                let v = net.values_normalized(net.obs_norm.normalize(m.view()).view());
                for (k, (i, _)) in truncated.iter().enumerate() {
                    bootstrap[*i] = v[k];
                }
            }
            for (i, r) in reports.iter().enumerate() {
                buffer.rewards[[t, i]] = r.reward + config.gamma * bootstrap[i];
                buffer.dones[[t, i]] = r.done;
                if let Some(done) = r.finished {
                    if recent.len() == config.curve_window.max(1) {
                        recent.pop_front();
                    }
                    recent.push_back(done);
                }
            }
        }

        let raw = observation_matrix(slots.iter().map(|s| s.obs));
        let last = net.values_normalized(net.obs_norm.normalize(raw.view()).view());
        buffer.last_values = last.to_vec();
        buffer.finish(config.gamma, config.gae_lambda);

        let stats = ppo_update(&mut net, &mut optimizer, &buffer, config, &mut rng).map_err(|e| Error::Diverged {
            iteration,
            reason: e.to_string(),
        })?;
        if !net.params.all_finite() {
            return Err(Error::Diverged {
                iteration,
                reason: "network weights became non-finite".into(),
            });
        }

        let (mean_reward, success_rate) = if recent.is_empty() {
            (None, None)
        } else {
            let n = recent.len() as f64;
            (
                Some(recent.iter().map(|r| r.0).sum::<f64>() / n),
                Some(recent.iter().filter(|r| r.1).count() as f64 / n),
            )
        };
        let row = CurveRow {
            iteration,
            mean_reward,
            success_rate,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            kl: stats.kl,
            clip_fraction: stats.clip_fraction,
            level,
        };
        observer(&row, &net)?;
        curve.push(row);
    }

    Ok(TrainOutcome { network: net, curve })
}

pub fn write_curve_csv<W: std::io::Write>(out: W, curve: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in curve {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<curve>", e))?;
    Ok(())
}
