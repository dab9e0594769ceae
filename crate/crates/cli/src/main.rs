//! `asv`: train the PPO agent, run disturbance sweeps, build degradation
//! tables and plots.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use asv_core::config::RunConfig;
use asv_core::eval::{
    degradation_table, emit_sweep_plots, format_table, read_rows_csv, run_episode_guarded, run_sweep, summarize,
    trajectory_plot, trajectory_subset, write_degradation_json, write_rows_csv, write_summary_json, ControllerKind,
    DegradationReport, EvalContext, SweepAxis, SweepRow, SweepSpec,
};
use asv_core::ppo::{self, checkpoint, PolicyNetwork};
use asv_core::task::{evaluation_grid, GridCell};
use asv_core::Error;

/// Relative output directories are resolved under this directory when set.
const OUTPUT_ROOT_ENV: &str = "ASV_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "asv", version, about = "Twin-hull ASV capture task: PPO training, RTI-MPC baseline, robustness sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults are used for anything it omits.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config field, e.g. --set ppo.max_iterations=10 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Root seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Com,
    Nr,
}

impl From<Axis> for SweepAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::Com => SweepAxis::Com,
            Axis::Nr => SweepAxis::Nr,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Ctl {
    Rl,
    Mpc,
}

impl From<Ctl> for ControllerKind {
    fn from(c: Ctl) -> Self {
        match c {
            Ctl::Rl => ControllerKind::Rl,
            Ctl::Mpc => ControllerKind::Mpc,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes policy.ckpt, curve.csv and the resolved config.
    Train {
        #[command(flatten)]
        common: Common,
        /// Skip the deterministic evaluation over the nominal goal grid.
        #[arg(long)]
        no_eval: bool,
    },
    /// Run both controllers over the goal grid for each sweep value.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parameter to sweep.
        #[arg(long, value_enum)]
        axis: Axis,
        /// Controllers to evaluate (defaults to `sweep.controllers`).
        #[arg(long, value_enum, value_delimiter = ',')]
        controllers: Vec<Ctl>,
        /// Policy checkpoint, required when rl is evaluated.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Degradation table from sweep CSVs. With two files the first is the
    /// nominal condition; with one, rows at the baseline value are nominal.
    Report {
        #[arg(required = true, num_args = 1..=2, value_name = "CSV")]
        csvs: Vec<PathBuf>,
        /// Nominal sweep value for single-file mode (default: first value in the file).
        #[arg(long)]
        baseline: Option<f64>,
        /// Also write degradation.txt/.json and plots here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Metric panels from a sweep CSV, and optionally trajectory plots.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Sweep CSV to draw the metric panels from.
        #[arg(long, value_name = "CSV")]
        metrics: Option<PathBuf>,
        /// Draw overhead trajectories for the goal subset {3,6,9} m x {-45,0,45} deg.
        #[arg(long)]
        trajectories: bool,
        /// Policy checkpoint for rl trajectories.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Disturb the plant for the trajectories, e.g. --axis com --value 0.125.
        #[arg(long, value_enum, requires = "value")]
        axis: Option<Axis>,
        #[arg(long, requires = "axis")]
        value: Option<f64>,
    },
}

/// Maps errors to exit codes: 2 for configuration problems, 1 otherwise.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig { .. } => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    if let Some(p) = &common.config {
        if !p.exists() {
            return Err(usage(format!("config file not found: {}", p.display())));
        }
    }
    let mut config = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output.dir = out.clone();
    }
    if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
        if config.output.dir.is_relative() {
            config.output.dir = Path::new(&root).join(&config.output.dir);
        }
    }
    Ok(config)
}

fn init_pool(jobs: Option<usize>) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(usage("--jobs must be >= 1"));
        }
        builder = builder.num_threads(n);
    }
    // Ignore the error from a pool that is already initialized.
    let _ = builder.build_global();
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}

fn load_policy(path: Option<&Path>, config: &RunConfig) -> CliResult<PolicyNetwork> {
    let path = path.ok_or_else(|| usage("rl needs --checkpoint"))?;
    Ok(checkpoint::load(path, Some(&config.ppo.hidden))?)
}

fn eval_context<'a>(config: &RunConfig, policy: Option<&'a PolicyNetwork>) -> EvalContext<'a> {
    EvalContext {
        policy,
        mpc: config.mpc,
        vessel: config.vessel,
        task: config.task,
        weights: config.reward,
    }
}

fn cmd_train(common: &Common, no_eval: bool) -> CliResult<()> {
    let config = load_config(common)?;
    init_pool(common.jobs)?;
    let dir = &config.output.dir;
    config.echo_to(dir)?;
    let every = (config.ppo.max_iterations / 20).max(1);
    let outcome = ppo::train(&config.training_setup(), &config.ppo, config.seed, |row, _| {
        if row.iteration % every == 0 || row.iteration + 1 == config.ppo.max_iterations {
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
            eprintln!(
                "iteration {:>5}  reward {:>9}  success {:>6}  level {:.2}",
                row.iteration,
                fmt(row.mean_reward),
                fmt(row.success_rate),
                row.level
            );
        }
        Ok(())
    })?;
    let ckpt = dir.join("policy.ckpt");
    checkpoint::save(&outcome.network, &ckpt)?;
    ppo::write_curve_csv(create(&dir.join("curve.csv"))?, &outcome.curve)?;
    if let Some(last) = outcome.curve.last().and_then(|r| r.success_rate) {
        println!("final training success rate: {last:.3}");
    }
    println!("checkpoint: {}", ckpt.display());
    if no_eval {
        return Ok(());
    }

    let spec = SweepSpec {
        axis: SweepAxis::Com,
        values: vec![config.vessel.com_offset_y],
        cells: evaluation_grid(),
        controllers: vec![ControllerKind::Rl],
        seeds: vec![config.seed],
    };
    let rows = run_sweep(&spec, &eval_context(&config, Some(&outcome.network)))?;
    let rate = rows.iter().filter(|r| r.success).count() as f64 / rows.len() as f64;
    println!("nominal grid success rate: {rate:.3} ({} goals)", rows.len());
    Ok(())
}

fn cmd_sweep(common: &Common, axis: Axis, controllers: &[Ctl], checkpoint: Option<&Path>) -> CliResult<()> {
    let config = load_config(common)?;
    init_pool(common.jobs)?;
    let axis = SweepAxis::from(axis);
    let controllers: Vec<ControllerKind> = if controllers.is_empty() {
        config.sweep.controllers.clone()
    } else {
        controllers.iter().map(|&c| c.into()).collect()
    };
    let policy = if controllers.contains(&ControllerKind::Rl) {
        Some(load_policy(checkpoint, &config)?)
    } else {
        None
    };
    let spec = SweepSpec {
        axis,
        values: config.sweep.values(axis).to_vec(),
        cells: evaluation_grid(),
        controllers,
        seeds: config.sweep.seeds.clone(),
    };
    spec.validate()?;
    let dir = &config.output.dir;
    config.echo_to(dir)?;
    eprintln!("running {} episodes", spec.episode_count());
    let rows = run_sweep(&spec, &eval_context(&config, policy.as_ref()))?;
    let csv_path = dir.join(format!("sweep_{}.csv", axis.as_str()));
    write_rows_csv(create(&csv_path)?, &rows)?;
    let summary = summarize(&rows);
    write_summary_json(create(&dir.join(format!("sweep_{}_summary.json", axis.as_str())))?, &summary)?;
    for s in &summary {
        println!(
            "{:<4} {}={:<6} success {:.3}  T_norm {}",
            s.controller,
            s.sweep_axis,
            s.sweep_value,
            s.success_rate,
            s.t_norm.map_or("-".to_string(), |t| format!("{:.3}", t.mean))
        );
    }
    println!("rows: {} -> {}", rows.len(), csv_path.display());
    Ok(())
}

fn read_csv(path: &Path) -> CliResult<Vec<SweepRow>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let rows = read_rows_csv(f)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{} has no rows", path.display())).into());
    }
    Ok(rows)
}

fn cmd_report(csvs: &[PathBuf], baseline: Option<f64>, out: Option<&Path>) -> CliResult<()> {
    let mut tables = Vec::new();
    let all_rows: Vec<SweepRow>;
    if let [nominal, disturbed] = csvs {
        let (a, b) = (read_csv(nominal)?, read_csv(disturbed)?);
        tables.push((None, degradation_table(&a, &b)?));
        all_rows = a.into_iter().chain(b).collect();
    } else {
        let rows = read_csv(&csvs[0])?;
        let base = baseline.unwrap_or(rows[0].sweep_value);
        let nominal: Vec<SweepRow> = rows.iter().filter(|r| r.sweep_value == base).cloned().collect();
        if nominal.is_empty() {
            return Err(usage(format!("no rows at baseline value {base}")));
        }
        let mut values: Vec<f64> = Vec::new();
        for r in &rows {
            if r.sweep_value != base && !values.contains(&r.sweep_value) {
                values.push(r.sweep_value);
            }
        }
        for v in values {
            let disturbed: Vec<SweepRow> = rows.iter().filter(|r| r.sweep_value == v).cloned().collect();
            tables.push((Some(v), degradation_table(&nominal, &disturbed)?));
        }
        all_rows = rows;
    }
    let mut text = String::new();
    for (value, table) in &tables {
        if let Some(v) = value {
            text.push_str(&format!("\n{} = {v}\n", all_rows[0].sweep_axis));
        }
        text.push_str(&format_table(table));
    }
    print!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        std::fs::write(dir.join("degradation.txt"), &text).map_err(|e| Error::io(dir, e))?;
        let json: Vec<DegradationReport> = tables
            .into_iter()
            .map(|(sweep_value, rows)| DegradationReport { sweep_value, rows })
            .collect();
        write_degradation_json(create(&dir.join("degradation.json"))?, &json)?;
        emit_sweep_plots(&summarize(&all_rows), dir)?;
    }
    Ok(())
}

fn cmd_plot(
    common: &Common,
    metrics: Option<&Path>,
    trajectories: bool,
    checkpoint: Option<&Path>,
    disturb: Option<(Axis, f64)>,
) -> CliResult<()> {
    if metrics.is_none() && !trajectories {
        return Err(usage("nothing to plot: pass --metrics and/or --trajectories"));
    }
    let config = load_config(common)?;
    init_pool(common.jobs)?;
    let dir = &config.output.dir;
    if let Some(csv) = metrics {
        for f in emit_sweep_plots(&summarize(&read_csv(csv)?), dir)? {
            println!("{}", f.display());
        }
    }
    if trajectories {
        let policy = match checkpoint {
            Some(p) => Some(checkpoint::load(p, Some(&config.ppo.hidden))?),
            None => None,
        };
        let ctx = eval_context(&config, policy.as_ref());
        let params = match disturb {
            Some((axis, value)) => SweepAxis::from(axis).apply(&config.vessel, value),
            None => config.vessel,
        };
        let kinds: Vec<ControllerKind> = config
            .sweep
            .controllers
            .iter()
            .copied()
            .filter(|k| *k != ControllerKind::Rl || policy.is_some())
            .collect();
        if kinds.is_empty() {
            return Err(usage("no controller to draw: rl needs --checkpoint"));
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for kind in kinds {
            let records: Vec<_> = trajectory_subset()
                .into_iter()
                .map(|(distance, bearing_deg)| {
                    let cell = GridCell {
                        distance,
                        bearing_deg,
                        initial_speed: 0.0,
                    };
                    run_episode_guarded(kind, &ctx, &cell, &params, config.seed)
                })
                .collect();
            let title = format!(
                "{} trajectories (CoM {} m, N_r {})",
                kind.as_str().to_uppercase(),
                params.com_offset_y,
                params.damping_linear.yaw
            );
            let path = dir.join(format!("trajectories_{}.svg", kind.as_str()));
            std::fs::write(&path, trajectory_plot(&title, &records)?).map_err(|e| Error::io(&path, e))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { common, no_eval } => cmd_train(&common, no_eval),
        Command::Sweep {
            common,
            axis,
            controllers,
            checkpoint,
        } => cmd_sweep(&common, axis, &controllers, checkpoint.as_deref()),
        Command::Report { csvs, baseline, out } => cmd_report(&csvs, baseline, out.as_deref()),
        Command::Plot {
            common,
            metrics,
            trajectories,
            checkpoint,
            axis,
            value,
        } => cmd_plot(
            &common,
            metrics.as_deref(),
            trajectories,
            checkpoint.as_deref(),
            axis.zip(value),
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
