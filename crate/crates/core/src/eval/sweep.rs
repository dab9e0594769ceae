use std::fmt;
use std::io::{Read, Write};
use std::panic::{self, AssertUnwindSafe};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, EpisodeRecord, Sample};
use crate::dynamics::VesselParams;
use crate::error::{Error, Result};
use crate::mpc::{MpcController, MpcModel, OcpConfig};
use crate::ppo::PolicyNetwork;
use crate::task::{
    reset, Action, Episode, EpisodeConfig, GridCell, ObservationNoise, RandomizationConfig, RewardWeights, TaskConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Rl,
    Mpc,
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Rl => "rl",
            Self::Mpc => "mpc",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rl" => Ok(Self::Rl),
            "mpc" => Ok(Self::Mpc),
            other => Err(Error::invalid("controller", format!("unknown controller {other:?}; valid: rl, mpc"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Lateral CoM offset, m.
    Com,
    /// Linear yaw damping.
    Nr,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Com => "com",
            Self::Nr => "nr",
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Self::Com => (0.0, 0.125),
            Self::Nr => (0.0, 20.0),
        }
    }

    pub fn default_values(&self) -> Vec<f64> {
        match self {
            Self::Com => vec![0.0, 0.025, 0.05, 0.075, 0.1, 0.125],
            Self::Nr => vec![0.0, 4.0, 8.0, 12.0, 16.0, 20.0],
        }
    }

    /// `base` with only the swept parameter replaced.
    pub fn apply(&self, base: &VesselParams, value: f64) -> VesselParams {
        let mut p = *base;
        match self {
            Self::Com => p.com_offset_y = value,
            Self::Nr => p.damping_linear.yaw = value,
        }
        p
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "com" => Ok(Self::Com),
            "nr" => Ok(Self::Nr),
            other => Err(Error::invalid("axis", format!("unknown axis {other:?}; valid: com, nr"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub cells: Vec<GridCell>,
    pub controllers: Vec<ControllerKind>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.axis.bounds();
        if let Some(v) = self.values.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::invalid(
                "sweep.values",
                format!("{v} is outside [{lo}, {hi}] for axis {}", self.axis),
            ));
        }
        for (name, empty) in [
            ("sweep.values", self.values.is_empty()),
            ("sweep.cells", self.cells.is_empty()),
            ("sweep.controllers", self.controllers.is_empty()),
            ("sweep.seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(Error::invalid(name, "must not be empty"));
            }
        }
        Ok(())
    }

    pub fn episode_count(&self) -> usize {
        self.values.len() * self.cells.len() * self.controllers.len() * self.seeds.len()
    }
}

/// Everything an episode needs besides the swept parameter.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    /// Required when RL is among the controllers.
    pub policy: Option<&'a PolicyNetwork>,
    pub mpc: OcpConfig,
    /// Nominal plant; also the model the MPC is built from.
    pub vessel: VesselParams,
    pub task: TaskConfig,
    pub weights: RewardWeights,
}

impl<'a> EvalContext<'a> {
    pub fn new(policy: Option<&'a PolicyNetwork>) -> Self {
        Self {
            policy,
            mpc: OcpConfig::default(),
            vessel: VesselParams::default(),
            task: TaskConfig::default(),
            weights: RewardWeights::default(),
        }
    }
}

/// Closed-loop controller over full episode state.
pub trait Controller {
    /// Returns the action and whether the solver ran degraded.
    fn act(&mut self, episode: &Episode, rng: &mut ChaCha8Rng) -> Result<(Action, bool)>;
}

/// Deterministic policy on noiseless observations.
pub struct RlController<'a> {
    pub policy: &'a PolicyNetwork,
}

impl Controller for RlController<'_> {
    fn act(&mut self, episode: &Episode, rng: &mut ChaCha8Rng) -> Result<(Action, bool)> {
        let obs = episode.observe(rng);
        Ok((self.policy.act(&obs, true, rng)?, false))
    }
}

impl Controller for MpcController {
    fn act(&mut self, episode: &Episode, _rng: &mut ChaCha8Rng) -> Result<(Action, bool)> {
        let (action, diag) = self.control(&episode.state, &episode.goal);
        Ok((action, diag.degraded))
    }
}

fn make_controller<'a>(kind: ControllerKind, ctx: &EvalContext<'a>) -> Result<Box<dyn Controller + 'a>> {
    match kind {
        ControllerKind::Rl => {
            let policy = ctx
                .policy
                .ok_or_else(|| Error::invalid("controllers", "rl requested but no policy checkpoint was given"))?;
            Ok(Box::new(RlController { policy }))
        }
        ControllerKind::Mpc => {
            let model = MpcModel::from_params(&ctx.vessel, ctx.mpc.n_r_override);
            Ok(Box::new(MpcController::new(model, ctx.mpc)?))
        }
    }
}

/// Runs one noiseless, unrandomized episode on `params`.
pub fn run_episode(
    controller: &mut dyn Controller,
    name: &str,
    cell: &GridCell,
    params: &VesselParams,
    task: TaskConfig,
    weights: RewardWeights,
    seed: u64,
) -> Result<EpisodeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = EpisodeConfig {
        goal: cell.goal_spec(),
        initial_speed: Some(cell.initial_speed),
        params: *params,
        level: 0.0,
    };
    let start = reset(&mut rng, &config, &RandomizationConfig::none())?;
    let mut episode = Episode::new(start, ObservationNoise::default(), task, weights);
    let mut record = EpisodeRecord {
        controller: name.to_string(),
        cell: *cell,
        com_offset_y: params.com_offset_y,
        n_r: params.damping_linear.yaw,
        disturbance: episode.disturbance,
        samples: vec![Sample::new(0.0, &episode.state, Action::default())],
        actions: Vec::new(),
        success: false,
        time_to_goal: None,
        degraded_steps: 0,
        error: None,
    };
    let mut substeps = 0usize;
    loop {
        let (action, degraded) = controller.act(&episode, &mut rng)?;
        record.degraded_steps += usize::from(degraded);
        let out = episode.step(action, &mut rng)?;
        let applied = Action::new(action.left, action.right);
        record.actions.push(applied);
        for s in &episode.substep_states {
            substeps += 1;
            record.samples.push(Sample::new(substeps as f64 * task.physics_dt, s, applied));
        }
        if out.done {
            record.success = out.success;
            record.time_to_goal = episode.success_time();
            return Ok(record);
        }
    }
}

/// Like [`run_episode`], but a panic or error becomes a failed record.
pub fn run_episode_guarded(
    kind: ControllerKind,
    ctx: &EvalContext<'_>,
    cell: &GridCell,
    params: &VesselParams,
    seed: u64,
) -> EpisodeRecord {
    let attempt = panic::catch_unwind(AssertUnwindSafe(|| {
        let mut controller = make_controller(kind, ctx)?;
        run_episode(controller.as_mut(), kind.as_str(), cell, params, ctx.task, ctx.weights, seed)
    }));
    let error = match attempt {
        Ok(Ok(record)) => return record,
        Ok(Err(e)) => e.to_string(),
        Err(payload) => payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".to_string()),
    };
    EpisodeRecord {
        controller: kind.as_str().to_string(),
        cell: *cell,
        com_offset_y: params.com_offset_y,
        n_r: params.damping_linear.yaw,
        disturbance: Default::default(),
        samples: Vec::new(),
        actions: Vec::new(),
        success: false,
        time_to_goal: None,
        degraded_steps: 0,
        error: Some(error),
    }
}

/// One row of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub controller: String,
    pub sweep_axis: String,
    pub sweep_value: f64,
    pub goal_d: f64,
    pub goal_bearing_deg: f64,
    pub v0: f64,
    pub seed: u64,
    pub success: bool,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    #[serde(rename = "T_norm")]
    pub t_norm: Option<f64>,
    pub delta_d: Option<f64>,
    #[serde(rename = "E_acc_norm")]
    pub e_acc_norm: Option<f64>,
    pub solver_degraded_steps: usize,
}

impl SweepRow {
    pub fn from_record(record: &EpisodeRecord, axis: SweepAxis, value: f64, seed: u64, d_threshold: f64) -> Self {
        let m = compute_metrics(record, d_threshold);
        Self {
            controller: record.controller.clone(),
            sweep_axis: axis.as_str().to_string(),
            sweep_value: value,
            goal_d: record.cell.distance,
            goal_bearing_deg: record.cell.bearing_deg,
            v0: record.cell.initial_speed,
            seed,
            success: m.success,
            t: if m.success { record.time_to_goal } else { None },
            t_norm: m.t_norm,
            delta_d: m.delta_d,
            e_acc_norm: m.e_acc_norm,
            solver_degraded_steps: record.degraded_steps,
        }
    }
}

/// Runs every (controller, value, cell, seed) episode in parallel on the
/// current rayon pool. Row order is deterministic.
pub fn run_sweep(spec: &SweepSpec, ctx: &EvalContext<'_>) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    if spec.controllers.contains(&ControllerKind::Rl) && ctx.policy.is_none() {
        return Err(Error::invalid("controllers", "rl requested but no policy checkpoint was given"));
    }
    let mut jobs = Vec::with_capacity(spec.episode_count());
    for &kind in &spec.controllers {
        for &value in &spec.values {
            for cell in &spec.cells {
                for &seed in &spec.seeds {
                    jobs.push((kind, value, *cell, seed));
                }
            }
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(kind, value, cell, seed)| {
            let params = spec.axis.apply(&ctx.vessel, value);
            let record = run_episode_guarded(kind, ctx, &cell, &params, seed);
            SweepRow::from_record(&record, spec.axis, value, seed, ctx.weights.d_threshold)
        })
        .collect();
    Ok(rows)
}

pub fn write_rows_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<sweep csv>", e))?;
    Ok(())
}

pub fn read_rows_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<std::result::Result<Vec<SweepRow>, _>>()?;
    Ok(rows)
}

pub fn write_summary_json<W: Write>(out: W, entries: &[SummaryEntry]) -> Result<()> {
    serde_json::to_writer_pretty(out, entries)?;
    Ok(())
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub controller: String,
    pub sweep_axis: String,
    pub sweep_value: f64,
    pub episodes: usize,
    pub success_rate: f64,
    /// Over successful episodes only.
    pub t_norm: Option<Stat>,
    pub delta_d: Option<Stat>,
    pub e_acc_norm: Option<Stat>,
}

/// Groups rows by (controller, axis, value) in order of first appearance.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryEntry> {
    let mut groups: Vec<((String, String, f64), Vec<&SweepRow>)> = Vec::new();
    for row in rows {
        let key = (row.controller.clone(), row.sweep_axis.clone(), row.sweep_value);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(row),
            None => groups.push((key, vec![row])),
        }
    }
    groups
        .into_iter()
        .map(|((controller, sweep_axis, sweep_value), members)| {
            let ok: Vec<&&SweepRow> = members.iter().filter(|r| r.success).collect();
            let collect = |f: fn(&SweepRow) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
            SummaryEntry {
                controller,
                sweep_axis,
                sweep_value,
                episodes: members.len(),
                success_rate: ok.len() as f64 / members.len() as f64,
                t_norm: Stat::of(&collect(|r| r.t_norm)),
                delta_d: Stat::of(&collect(|r| r.delta_d)),
                e_acc_norm: Stat::of(&collect(|r| r.e_acc_norm)),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_names() {
        assert_eq!("com".parse::<SweepAxis>().unwrap(), SweepAxis::Com);
        assert_eq!("nr".parse::<SweepAxis>().unwrap(), SweepAxis::Nr);
        let err = "yaw".parse::<SweepAxis>().unwrap_err().to_string();
        assert!(err.contains("com") && err.contains("nr"));
        assert_eq!("mpc".parse::<ControllerKind>().unwrap(), ControllerKind::Mpc);
        assert!("pid".parse::<ControllerKind>().is_err());
    }

    #[test]
    fn sweep_origin_is_nominal() {
        let base = VesselParams::default();
        assert_eq!(SweepAxis::Com.apply(&base, 0.0), base);
        assert_eq!(SweepAxis::Nr.apply(&base, 5.83), base);
    }

    #[test]
    fn values_outside_bounds_rejected() {
        let spec = SweepSpec {
            axis: SweepAxis::Com,
            values: vec![0.2],
            cells: crate::task::evaluation_grid(),
            controllers: vec![ControllerKind::Mpc],
            seeds: vec![0],
        };
        assert!(spec.validate().is_err());
        assert!(SweepSpec { values: SweepAxis::Com.default_values(), ..spec.clone() }.validate().is_ok());
        assert!(SweepSpec { seeds: vec![], ..spec }.validate().is_err());
    }

    #[test]
    fn stat_is_population() {
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert!(Stat::of(&[]).is_none());
    }
}
