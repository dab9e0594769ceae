use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::sweep::{Stat, SweepRow};
use crate::error::{Error, Result};

/// Metrics in the order of the degradation table.
pub const METRICS: [&str; 3] = ["T_norm", "E_acc_norm", "delta_d"];

fn metric(row: &SweepRow, name: &str) -> Option<f64> {
    match name {
        "T_norm" => row.t_norm,
        "E_acc_norm" => row.e_acc_norm,
        "delta_d" => row.delta_d,
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationRow {
    pub controller: String,
    pub metric: String,
    /// Mean over successful episodes.
    pub nominal: Option<f64>,
    pub disturbed: Option<f64>,
    /// `100 (disturbed - nominal) / nominal`; undefined for a zero or
    /// missing nominal mean.
    pub percent: Option<f64>,
}

pub fn percent_change(nominal: f64, disturbed: f64) -> Option<f64> {
    if nominal == 0.0 || !nominal.is_finite() || !disturbed.is_finite() {
        None
    } else {
        Some(100.0 * (disturbed - nominal) / nominal)
    }
}

type GoalKey = (u64, u64, u64, u64);

fn goal_set<'a>(rows: impl Iterator<Item = &'a SweepRow>) -> BTreeSet<GoalKey> {
    rows.map(|r| (r.goal_d.to_bits(), r.goal_bearing_deg.to_bits(), r.v0.to_bits(), r.seed))
        .collect()
}

fn controllers(rows: &[SweepRow]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows {
        if !out.contains(&r.controller) {
            out.push(r.controller.clone());
        }
    }
    out
}

/// Compares each controller against itself under the two conditions.
pub fn degradation_table(nominal: &[SweepRow], disturbed: &[SweepRow]) -> Result<Vec<DegradationRow>> {
    if nominal.is_empty() || disturbed.is_empty() {
        return Err(Error::Data("degradation table needs non-empty nominal and disturbed rows".into()));
    }
    let names = controllers(nominal);
    if names != controllers(disturbed) {
        return Err(Error::Data(format!(
            "controller sets differ: nominal {:?}, disturbed {:?}",
            names,
            controllers(disturbed)
        )));
    }
    let mut table = Vec::new();
    for name in &names {
        let nom: Vec<&SweepRow> = nominal.iter().filter(|r| &r.controller == name).collect();
        let dis: Vec<&SweepRow> = disturbed.iter().filter(|r| &r.controller == name).collect();
        if goal_set(nom.iter().copied()) != goal_set(dis.iter().copied()) {
            return Err(Error::Data(format!("goal sets of controller {name} differ between the two inputs")));
        }
        for m in METRICS {
            let mean = |rows: &[&SweepRow]| {
                let values: Vec<f64> = rows.iter().filter(|r| r.success).filter_map(|r| metric(r, m)).collect();
                Stat::of(&values).map(|s| s.mean)
            };
            let (a, b) = (mean(&nom), mean(&dis));
            let percent = match (a, b) {
                (Some(a), Some(b)) => percent_change(a, b),
                _ => None,
            };
            table.push(DegradationRow {
                controller: name.clone(),
                metric: m.to_string(),
                nominal: a,
                disturbed: b,
                percent,
            });
        }
    }
    Ok(table)
}

/// One degradation table; `sweep_value` names the disturbed condition when
/// several are compared against one baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationReport {
    pub sweep_value: Option<f64>,
    pub rows: Vec<DegradationRow>,
}

pub fn write_degradation_json<W: std::io::Write>(out: W, value: &[DegradationReport]) -> Result<()> {
    serde_json::to_writer_pretty(out, value)?;
    Ok(())
}

/// Plain-text rendering: `Agent | Metric | Normal | Disturbed | Degradation %`.
pub fn format_table(rows: &[DegradationRow]) -> String {
    let cell = |v: Option<f64>, digits: usize| match v {
        Some(v) => format!("{v:.digits$}"),
        None => "undefined".to_string(),
    };
    let mut out = String::new();
    let _ = writeln!(out, "{:<6} | {:<10} | {:>10} | {:>10} | {:>13}", "Agent", "Metric", "Normal", "Disturbed", "Degradation %");
    let _ = writeln!(out, "{}", "-".repeat(61));
    for r in rows {
        let _ = writeln!(
            out,
            "{:<6} | {:<10} | {:>10} | {:>10} | {:>13}",
            r.controller.to_uppercase(),
            r.metric,
            cell(r.nominal, 3),
            cell(r.disturbed, 3),
            cell(r.percent, 2)
        );
    }
    out
}
