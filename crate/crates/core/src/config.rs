//! Run configuration: one TOML file with a section per component, plus
//! `section.key=value` overrides applied before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::VesselParams;
use crate::error::{Error, Result};
use crate::eval::{ControllerKind, SweepAxis};
use crate::mpc::OcpConfig;
use crate::ppo::{TrainConfig, TrainingSetup};
use crate::task::{RandomizationConfig, RewardWeights, TaskConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Lateral CoM offsets, m.
    pub com_values: Vec<f64>,
    pub nr_values: Vec<f64>,
    pub controllers: Vec<ControllerKind>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            com_values: SweepAxis::Com.default_values(),
            nr_values: SweepAxis::Nr.default_values(),
            controllers: vec![ControllerKind::Rl, ControllerKind::Mpc],
            seeds: vec![0],
        }
    }
}

impl SweepConfig {
    pub fn values(&self, axis: SweepAxis) -> &[f64] {
        match axis {
            SweepAxis::Com => &self.com_values,
            SweepAxis::Nr => &self.nr_values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Train with domain randomization and the curriculum.
    pub randomize: bool,
    pub vessel: VesselParams,
    pub reward: RewardWeights,
    pub randomization: RandomizationConfig,
    pub task: TaskConfig,
    pub ppo: TrainConfig,
    pub mpc: OcpConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            randomize: true,
            vessel: VesselParams::default(),
            reward: RewardWeights::default(),
            randomization: RandomizationConfig::default(),
            task: TaskConfig::default(),
            ppo: TrainConfig::default(),
            mpc: OcpConfig::default(),
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `a.b.c=value` to `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::invalid(assignment, "override must look like section.key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::invalid(path, "empty key in dotted path"));
    }
    let mut node = table;
    for key in &keys[..keys.len() - 1] {
        let entry = node
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::invalid(path, format!("{key} is not a section")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Recursively overlays `top` onto `base`; non-table values replace.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when `None`), applies overrides, validates.
    /// Partial sections are merged over the defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&RunConfig::default().to_toml()?)
            .map_err(|e| Error::Data(format!("default config does not round-trip: {e}")))?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let file = toml::from_str::<toml::Table>(&text)
                .map_err(|e| Error::invalid(p.display().to_string(), e.to_string().trim().to_string()))?;
            merge(&mut table, file);
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = toml::from_str(&table.to_string())
            .map_err(|e| Error::invalid("config", e.to_string().trim().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.vessel.validate()?;
        self.reward.validate()?;
        self.randomization.validate()?;
        self.task.validate()?;
        self.ppo.validate()?;
        self.mpc.validate()?;
        for axis in [SweepAxis::Com, SweepAxis::Nr] {
            let (lo, hi) = axis.bounds();
            if let Some(v) = self.sweep.values(axis).iter().find(|v| !(lo..=hi).contains(*v)) {
                return Err(Error::invalid(
                    format!("sweep.{}_values", axis.as_str()),
                    format!("{v} is outside [{lo}, {hi}]"),
                ));
            }
        }
        if self.sweep.seeds.is_empty() {
            return Err(Error::invalid("sweep.seeds", "must not be empty"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Data(format!("cannot serialize config: {e}")))
    }

    /// Writes the resolved config as `config.resolved.toml` in `dir`.
    pub fn echo_to(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.resolved.toml");
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn training_setup(&self) -> TrainingSetup {
        TrainingSetup {
            task: self.task,
            weights: self.reward,
            randomization: self.randomization,
            vessel: self.vessel,
            randomize: self.randomize,
        }
    }
}
