//! Episode metrics, disturbance sweeps over the goal grid, degradation
//! tables and plots.

pub mod metrics;
pub mod plot;
pub mod report;
pub mod sweep;

pub use metrics::{compute_metrics, EpisodeRecord, MetricsRow, Sample};
pub use plot::{emit_sweep_plots, trajectory_plot, trajectory_subset};
pub use report::{
    degradation_table, format_table, percent_change, write_degradation_json, DegradationReport,
    DegradationRow,
};
pub use sweep::{
    read_rows_csv, run_episode, run_episode_guarded, run_sweep, summarize, write_rows_csv, Controller, ControllerKind,
    EvalContext, RlController, Stat, SummaryEntry, SweepAxis, SweepRow, SweepSpec, write_summary_json,
};
