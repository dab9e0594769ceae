use serde::{Deserialize, Serialize};

use crate::dynamics::{DisturbanceWrench, VesselState};
use crate::task::{Action, GridCell};

/// One point of an episode's time series, at physics-substep resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub r: f64,
    /// Command in effect over the interval ending at `t`.
    pub left: f64,
    pub right: f64,
}

impl Sample {
    pub fn new(t: f64, s: &VesselState, command: Action) -> Self {
        Self {
            t,
            x: s.x,
            y: s.y,
            psi: s.psi,
            u: s.u,
            v: s.v,
            r: s.r,
            left: command.left,
            right: command.right,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub controller: String,
    pub cell: GridCell,
    pub com_offset_y: f64,
    pub n_r: f64,
    pub disturbance: DisturbanceWrench,
    /// Starts at `t = 0` and ends at the first entry into the success
    /// radius, or at the time limit.
    pub samples: Vec<Sample>,
    /// One entry per control period.
    pub actions: Vec<Action>,
    pub success: bool,
    /// Time to goal, s.
    pub time_to_goal: Option<f64>,
    pub degraded_steps: usize,
    /// Set when the episode aborted (panic or non-finite state).
    pub error: Option<String>,
}

impl EpisodeRecord {
    /// Polyline length of the recorded path.
    pub fn path_length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
            .sum()
    }
}

/// Metrics of one episode; `None` unless the episode succeeded.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsRow {
    pub success: bool,
    /// s/m.
    pub t_norm: Option<f64>,
    /// m.
    pub delta_d: Option<f64>,
    /// 1/m.
    pub e_acc_norm: Option<f64>,
}

pub fn compute_metrics(record: &EpisodeRecord, d_threshold: f64) -> MetricsRow {
    let t = match (record.success, record.time_to_goal) {
        (true, Some(t)) => t,
        _ => return MetricsRow::default(),
    };
    let d = record.cell.distance;
    let effort: f64 = record.actions.iter().map(|a| a.left.abs() + a.right.abs()).sum();
    MetricsRow {
        success: true,
        t_norm: Some(t / d),
        delta_d: Some(record.path_length() - (d - d_threshold)),
        e_acc_norm: Some(effort / d),
    }
}
