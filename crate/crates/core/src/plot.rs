//! Plot-ready CSV files: one α–log ρ scatter per (σ, m, l) panel with its
//! fitted line, and hit-rate bars per k.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::attack::AttackMode;
use crate::error::{Error, Result};
use crate::harness::{fit_group, format_real, group_records, EvalRecord, HitRateRow};
use crate::theory::{fit_relationship, TheoryFit};

pub const SCATTER_HEADER: &str = "alpha,log_rho,kind";

/// Scatter rows plus two `fit` rows spanning the observed x-range.
pub fn scatter_csv(points: &[(f64, f64)], fit: Option<&TheoryFit>) -> String {
    let mut out = format!("{SCATTER_HEADER}\n");
    for (x, y) in points {
        let _ = writeln!(out, "{x},{y},point");
    }
    if let Some(fit) = fit {
        let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi.is_finite() {
            for x in [lo, hi] {
                let _ = writeln!(out, "{x},{},fit", fit.predict(x));
            }
        }
    }
    out
}

/// Parses the `point` rows of a scatter file.
pub fn read_scatter_points(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SCATTER_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing scatter header".into(),
            })
        }
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse {
            line: i + 1,
            message: format!("bad scatter row `{line}`"),
        };
        if fields.len() != 3 {
            return Err(bad());
        }
        if fields[2] == "point" {
            let x = fields[0].parse().map_err(|_| bad())?;
            let y = fields[1].parse().map_err(|_| bad())?;
            points.push((x, y));
        }
    }
    Ok(points)
}

/// Writes a scatter panel, fitting a line when the points allow one.
pub fn write_scatter(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    if points.is_empty() {
        warn!("{} has no plottable points", path.display());
    }
    let fit = fit_relationship(points).ok();
    fs::write(path, scatter_csv(points, fit.as_ref())).map_err(|e| Error::io(path, e))
}

fn panel_name(prefix: &str, sigma: &str, m: usize, l: usize) -> String {
    format!("{prefix}_sigma-{sigma}_m-{m}_l-{l}.csv")
}

/// Writes one scatter file per (σ, m, l) group and one hit-rate file per
/// group that has attacks. Returns the written paths.
pub fn emit_plot_data(records: &[EvalRecord], hit_rates: &[HitRateRow], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for ((sigma, m, l), group) in group_records(records) {
        let points: Vec<(f64, f64)> = group
            .iter()
            .filter_map(|r| r.log_rho().map(|y| (r.alpha, y)))
            .collect();
        let (fit, ..) = fit_group(group.iter().copied());
        if points.is_empty() {
            warn!("panel σ={sigma} m={m} l={l} is empty after dropping ρ = 0");
        }
        let path = dir.join(panel_name("scatter", &sigma, m, l));
        fs::write(&path, scatter_csv(&points, fit.as_ref())).map_err(|e| Error::io(&path, e))?;
        written.push(path);

        let bars: Vec<&HitRateRow> = hit_rates
            .iter()
            .filter(|h| format_real(h.sigma) == sigma && h.m == m && h.l == l)
            .collect();
        if bars.is_empty() {
            continue;
        }
        let mut ks: Vec<usize> = bars.iter().map(|h| h.k).collect();
        ks.dedup();
        let mut out = String::from("k,standard,conservative\n");
        for k in ks {
            let rate = |mode| {
                bars.iter()
                    .find(|h| h.k == k && h.mode == mode)
                    .map(|h| h.rate().to_string())
                    .unwrap_or_default()
            };
            let _ = writeln!(out, "{k},{},{}", rate(AttackMode::Standard), rate(AttackMode::Conservative));
        }
        let path = dir.join(panel_name("hitrate", &sigma, m, l));
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
