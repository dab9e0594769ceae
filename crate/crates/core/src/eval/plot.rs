//! Deterministic SVG output: metric-vs-sweep panels and overhead trajectories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::EpisodeRecord;
use super::sweep::{Stat, SummaryEntry};
use crate::error::{Error, Result};

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 30.0, 45.0); // left, right, top, bottom

/// Point with symmetric error bar.
type Point = (f64, f64, f64);

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let pad = |a: f64, b: f64| {
            if !(a.is_finite() && b.is_finite()) {
                (0.0, 1.0)
            } else if b - a < 1e-12 {
                (a - 0.5, b + 0.5)
            } else {
                let m = 0.05 * (b - a);
                (a - m, b + m)
            }
        };
        Self {
            x: pad(x0, x1),
            y: pad(y0, y1),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN.0 + (x - self.x.0) / (self.x.1 - self.x.0) * (W - MARGIN.0 - MARGIN.1)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN.3 - (y - self.y.0) / (self.y.1 - self.y.0) * (H - MARGIN.2 - MARGIN.3)
    }

    fn axes(&self, svg: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (MARGIN.0, W - MARGIN.1, MARGIN.2, H - MARGIN.3);
        let _ = writeln!(svg, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
        for i in 0..=4 {
            let fx = self.x.0 + (self.x.1 - self.x.0) * i as f64 / 4.0;
            let fy = self.y.0 + (self.y.1 - self.y.0) * i as f64 / 4.0;
            let (x, y) = (self.px(fx), self.py(fy));
            let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{b}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, b + 4.0);
            let _ = writeln!(svg, r#"<text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="middle">{fx:.3}</text>"#, b + 16.0);
            let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{y:.2}" x2="{l}" y2="{y:.2}" stroke="black"/>"#, l - 4.0);
            let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{fy:.3}</text>"#, l - 6.0, y + 3.0);
        }
        let _ = writeln!(svg, r#"<text x="{:.2}" y="18" font-size="13" text-anchor="middle">{title}</text>"#, W / 2.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{xlabel}</text>"#, (l + r) / 2.0, H - 8.0);
        let _ = writeln!(
            svg,
            r#"<text x="14" y="{:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 14 {:.2})">{ylabel}</text>"#,
            (t + b) / 2.0,
            (t + b) / 2.0
        );
    }
}

fn header() -> String {
    format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#) + "\n"
}

fn legend(svg: &mut String, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN.2 + 14.0 + 14.0 * i as f64;
        let x = W - MARGIN.1 - 70.0;
        let c = COLORS[i % COLORS.len()];
        let _ = writeln!(svg, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{c}" stroke-width="2"/>"#, x + 16.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="10">{name}</text>"#, x + 20.0, y + 3.0);
    }
}

/// One panel with a mean line and +-std bars per series.
pub fn metric_panel(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<Point>)]) -> Result<String> {
    if series.iter().all(|(_, pts)| pts.is_empty()) {
        return Err(Error::Data(format!("nothing to plot for {title}")));
    }
    let frame = Frame::fit(
        series
            .iter()
            .flat_map(|(_, pts)| pts.iter().flat_map(|&(x, m, s)| [(x, m - s), (x, m + s)])),
    );
    let mut svg = header();
    frame.axes(&mut svg, title, xlabel, ylabel);
    for (i, (_, pts)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, m, _)| format!("{:.2},{:.2}", frame.px(x), frame.py(m))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, path.join(" "));
        for &(x, m, s) in pts {
            let (px, lo, hi) = (frame.px(x), frame.py(m - s), frame.py(m + s));
            let _ = writeln!(svg, r#"<line x1="{px:.2}" y1="{lo:.2}" x2="{px:.2}" y2="{hi:.2}" stroke="{c}"/>"#);
            let _ = writeln!(svg, r#"<circle cx="{px:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, frame.py(m));
        }
    }
    legend(&mut svg, &series.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>());
    svg.push_str("</svg>\n");
    Ok(svg)
}

type Extract = fn(&SummaryEntry) -> Option<Stat>;

/// Panels as `(file stem, title, extractor)`.
pub const PANELS: [(&str, &str, Extract); 4] = [
    ("success_rate", "Success rate", |e| Some(Stat { mean: e.success_rate, std: 0.0 })),
    ("t_norm", "T_norm [s/m]", |e| e.t_norm),
    ("delta_d", "delta_d [m]", |e| e.delta_d),
    ("e_acc_norm", "E_acc_norm [1/m]", |e| e.e_acc_norm),
];

/// Writes the four metric panels and the summary CSV they are drawn from.
pub fn emit_sweep_plots(entries: &[SummaryEntry], dir: &Path) -> Result<Vec<PathBuf>> {
    if entries.is_empty() {
        return Err(Error::Data("empty selection: no summary entries to plot".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let axis = entries[0].sweep_axis.clone();
    let xlabel = match axis.as_str() {
        "com" => "CoM offset [m]",
        "nr" => "N_r",
        other => other,
    };
    let mut names: Vec<String> = Vec::new();
    for e in entries {
        if !names.contains(&e.controller) {
            names.push(e.controller.clone());
        }
    }
    let mut written = Vec::new();
    for (stem, title, extract) in PANELS {
        let series: Vec<(String, Vec<Point>)> = names
            .iter()
            .map(|n| {
                let pts = entries
                    .iter()
                    .filter(|e| &e.controller == n)
                    .filter_map(|e| extract(e).map(|s| (e.sweep_value, s.mean, s.std)))
                    .collect();
                (n.clone(), pts)
            })
            .collect();
        let svg = metric_panel(title, xlabel, title, &series)?;
        let path = dir.join(format!("{stem}.svg"));
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "controller",
        "sweep_axis",
        "sweep_value",
        "episodes",
        "success_rate",
        "T_norm_mean",
        "T_norm_std",
        "delta_d_mean",
        "delta_d_std",
        "E_acc_norm_mean",
        "E_acc_norm_std",
    ])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for e in entries {
        w.write_record([
            e.controller.clone(),
            e.sweep_axis.clone(),
            e.sweep_value.to_string(),
            e.episodes.to_string(),
            e.success_rate.to_string(),
            opt(e.t_norm.map(|s| s.mean)),
            opt(e.t_norm.map(|s| s.std)),
            opt(e.delta_d.map(|s| s.mean)),
            opt(e.delta_d.map(|s| s.std)),
            opt(e.e_acc_norm.map(|s| s.mean)),
            opt(e.e_acc_norm.map(|s| s.std)),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// Goal subset drawn in trajectory plots: distances {3, 6, 9} m x bearings {-45, 0, 45} deg.
pub fn trajectory_subset() -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for d in [3.0, 6.0, 9.0] {
        for b in [-45.0, 0.0, 45.0] {
            out.push((d, b));
        }
    }
    out
}

/// Overhead view of recorded paths (x forward, y left), colored by controller.
pub fn trajectory_plot(title: &str, records: &[EpisodeRecord]) -> Result<String> {
    if records.iter().all(|r| r.samples.is_empty()) {
        return Err(Error::Data("empty selection: no trajectories to plot".into()));
    }
    let goals: Vec<(f64, f64)> = records
        .iter()
        .map(|r| {
            let b = r.cell.bearing_deg.to_radians();
            (r.cell.distance * b.cos(), r.cell.distance * b.sin())
        })
        .collect();
    // Plot y to the left, so screen x is -y and screen y is x.
    let frame = Frame::fit(
        records
            .iter()
            .flat_map(|r| r.samples.iter().map(|s| (-s.y, s.x)))
            .chain(goals.iter().map(|&(gx, gy)| (-gy, gx))),
    );
    let mut svg = header();
    frame.axes(&mut svg, title, "-y [m]", "x [m]");
    let mut names: Vec<String> = Vec::new();
    for (r, &(gx, gy)) in records.iter().zip(&goals) {
        if !names.contains(&r.controller) {
            names.push(r.controller.clone());
        }
        let i = names.iter().position(|n| n == &r.controller).unwrap_or(0);
        let c = COLORS[i % COLORS.len()];
        let pts: Vec<String> = r
            .samples
            .iter()
            .map(|s| format!("{:.2},{:.2}", frame.px(-s.y), frame.py(s.x)))
            .collect();
        let dash = if r.success { "" } else { r#" stroke-dasharray="4 3""# };
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.2"{dash}/>"#, pts.join(" "));
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="black"/>"#, frame.px(-gy), frame.py(gx));
    }
    legend(&mut svg, &names);
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(controller: &str, value: f64) -> SummaryEntry {
        SummaryEntry {
            controller: controller.into(),
            sweep_axis: "com".into(),
            sweep_value: value,
            episodes: 10,
            success_rate: 0.9,
            t_norm: Some(Stat { mean: 1.1, std: 0.1 }),
            delta_d: Some(Stat { mean: 0.2, std: 0.05 }),
            e_acc_norm: Some(Stat { mean: 30.0, std: 2.0 }),
        }
    }

    #[test]
    fn four_panels_two_series() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        for v in [0.0, 0.025, 0.05, 0.075, 0.1, 0.125] {
            entries.push(entry("rl", v));
            entries.push(entry("mpc", v));
        }
        let files = emit_sweep_plots(&entries, dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        for f in &files[..4] {
            let svg = std::fs::read_to_string(f).unwrap();
            assert_eq!(svg.matches("<polyline").count(), 2);
        }
        let again = tempfile::tempdir().unwrap();
        emit_sweep_plots(&entries, again.path()).unwrap();
        for f in &files {
            let name = f.file_name().unwrap();
            assert_eq!(std::fs::read(f).unwrap(), std::fs::read(again.path().join(name)).unwrap());
        }
    }

    #[test]
    fn empty_selection_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_sweep_plots(&[], dir.path()).is_err());
        assert!(trajectory_plot("t", &[]).is_err());
    }

    #[test]
    fn subset_is_nine_goals() {
        assert_eq!(trajectory_subset().len(), 9);
    }
}
