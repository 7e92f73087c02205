//! Run-directory layout: CSV tables, JSON summaries and SVG plots.
//!
//! ```text
//! snapshots.csv    t,x,omega,phi,omega_minus_phi
//! diagnostics.csv  time,slope_origin,norm_p,norm_x_pm1,barrier_margin,dt,velocity_min,neg_ux_origin
//! summary.json     see RunSummary
//! config.json      {"version": ..., "config": RunConfig with every field explicit}
//! profiles_<t>.svg ω and φ at selected snapshots
//! diagnostics.svg  ln ω_x(0) against ln ω_x(0)|_{t=0} + ∫ -u_x(0) dt
//! ```

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{ResolvedRun, RunConfig};
use crate::plot::{self, Series};
use crate::transport::{DiagnosticsRecord, RunResult, Snapshot, StopReason};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SNAPSHOTS: &str = "snapshots.csv";
pub const DIAGNOSTICS: &str = "diagnostics.csv";
pub const SUMMARY: &str = "summary.json";
pub const CONFIG: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRow {
    pub t: f64,
    pub x: f64,
    pub omega: f64,
    pub phi: f64,
    pub omega_minus_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StampedConfig {
    pub version: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub stop_reason: StopReason,
    pub stop_time: f64,
    /// Stop time when the run ended by slope blowup or resolution loss.
    pub detected_blowup_time: Option<f64>,
    pub steps: usize,
    pub n_particles: usize,
    pub snapshots: usize,
    pub t_singular: f64,
    pub a0: f64,
    pub c0: f64,
    pub c_estimate: Option<f64>,
    pub margin_epsilon: f64,
    pub min_barrier_margin: Option<f64>,
    pub final_slope_origin: f64,
}

pub fn summarize(resolved: &ResolvedRun, result: &RunResult) -> RunSummary {
    let detected = matches!(result.stop_reason, StopReason::SlopeBlowup | StopReason::ResolutionExhausted).then_some(result.stop_time);
    let min_margin = result
        .diagnostics
        .iter()
        .map(|d| d.barrier_margin)
        .filter(|m| !m.is_nan())
        .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |a| a.min(m))));
    RunSummary {
        version: VERSION.to_string(),
        stop_reason: result.stop_reason,
        stop_time: result.stop_time,
        detected_blowup_time: detected,
        steps: result.steps,
        n_particles: resolved.initial.len(),
        snapshots: result.snapshots.len(),
        t_singular: resolved.barrier.t_singular,
        a0: resolved.barrier.a0,
        c0: resolved.barrier.c0,
        c_estimate: resolved.scan.as_ref().map(|s| s.c_estimate),
        margin_epsilon: resolved.params.margin_epsilon,
        min_barrier_margin: min_margin,
        final_slope_origin: result.diagnostics.last().map_or(f64::NAN, |d| d.slope_origin),
    }
}

pub fn write_snapshots(path: &Path, snapshots: &[Snapshot]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for s in snapshots {
        for i in 0..s.positions.len() {
            w.serialize(SnapshotRow {
                t: s.time,
                x: s.positions[i],
                omega: s.values[i],
                phi: s.phi[i],
                omega_minus_phi: s.values[i] - s.phi[i],
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Regroups rows into snapshots by consecutive equal `t`.
pub fn read_snapshots(path: &Path) -> Result<Vec<Snapshot>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out: Vec<Snapshot> = Vec::new();
    for row in r.deserialize() {
        let row: SnapshotRow = row.with_context(|| format!("reading {}", path.display()))?;
        match out.last_mut() {
            Some(s) if s.time == row.t => {
                s.positions.push(row.x);
                s.values.push(row.omega);
                s.phi.push(row.phi);
            }
            _ => out.push(Snapshot {
                time: row.t,
                positions: vec![row.x],
                values: vec![row.omega],
                phi: vec![row.phi],
            }),
        }
    }
    if let Some(n) = out.first().map(|s| s.positions.len()) {
        if out.iter().any(|s| s.positions.len() != n) {
            bail!("{}: snapshots have differing particle counts", path.display());
        }
    }
    Ok(out)
}

pub fn write_diagnostics(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize()
        .map(|row| row.with_context(|| format!("reading {}", path.display())))
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_config(path: &Path) -> Result<StampedConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Indices of the first, middle and last snapshot.
fn plotted(n: usize) -> Vec<usize> {
    let mut v = vec![0, n / 2, n.saturating_sub(1)];
    v.dedup();
    v
}

fn profile_svg(s: &Snapshot, x_plot: f64) -> String {
    let pick = |vals: &[f64]| -> Vec<(f64, f64)> {
        s.positions
            .iter()
            .zip(vals)
            .filter(|(x, _)| **x <= x_plot)
            .map(|(&x, &v)| (x, v))
            .collect()
    };
    plot::line_plot(
        &format!("profiles at t = {:.6}", s.time),
        "x",
        "value",
        &[
            Series {
                label: "omega",
                color: "#1f4e9c",
                points: pick(&s.values),
            },
            Series {
                label: "phi",
                color: "#c0392b",
                points: pick(&s.phi),
            },
        ],
    )
}

fn diagnostics_svg(records: &[DiagnosticsRecord]) -> String {
    let log_slope: Vec<(f64, f64)> = records.iter().map(|r| (r.time, r.slope_origin.ln())).collect();
    let mut acc = records.first().map_or(0.0, |r| r.slope_origin.ln());
    let mut predicted = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if i > 0 {
            let q = &records[i - 1];
            acc += 0.5 * (r.time - q.time) * (r.neg_ux_origin + q.neg_ux_origin);
        }
        predicted.push((r.time, acc));
    }
    plot::line_plot(
        "origin slope",
        "t",
        "ln slope",
        &[
            Series {
                label: "ln omega_x(t, 0)",
                color: "#1f4e9c",
                points: log_slope,
            },
            Series {
                label: "ln omega_x(0, 0) + int -u_x(0) dt",
                color: "#c0392b",
                points: predicted,
            },
        ],
    )
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_run(dir: &Path, resolved: &ResolvedRun, result: &RunResult) -> Result<RunSummary> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_snapshots(&dir.join(SNAPSHOTS), &result.snapshots)?;
    write_diagnostics(&dir.join(DIAGNOSTICS), &result.diagnostics)?;
    let summary = summarize(resolved, result);
    write_json(&dir.join(SUMMARY), &summary)?;
    write_json(
        &dir.join(CONFIG),
        &StampedConfig {
            version: VERSION.to_string(),
            config: resolved.explicit_config(),
        },
    )?;
    let x_plot = 4.0 * resolved.barrier.a0;
    for k in plotted(result.snapshots.len()) {
        let s = &result.snapshots[k];
        fs::write(dir.join(format!("profiles_{:.6}.svg", s.time)), profile_svg(s, x_plot))?;
    }
    if !result.diagnostics.is_empty() {
        fs::write(dir.join("diagnostics.svg"), diagnostics_svg(&result.diagnostics))?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_snapshots() -> Vec<Snapshot> {
        (0..3)
            .map(|k| Snapshot {
                time: 0.1 * k as f64,
                positions: vec![0.0, 0.5, 1.0 / 3.0 + k as f64],
                values: vec![0.0, 0.25, 1.0],
                phi: vec![0.0, 0.125, f64::NAN],
            })
            .collect()
    }

    #[test]
    fn snapshots_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(SNAPSHOTS);
        let s = sample_snapshots();
        write_snapshots(&path, &s).unwrap();
        let back = read_snapshots(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in s.iter().zip(&back) {
            assert_eq!(a.time, b.time);
            assert_eq!(a.positions, b.positions);
            assert_eq!(a.values, b.values);
            assert_eq!(a.phi[..2], b.phi[..2]);
            assert!(b.phi[2].is_nan());
        }
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,x,omega,phi,omega_minus_phi\n"));
    }

    #[test]
    fn diagnostics_header_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(DIAGNOSTICS);
        let r = DiagnosticsRecord {
            time: 0.0,
            slope_origin: 1.0,
            norm_p: 2.0,
            norm_x_pm1: 3.0,
            barrier_margin: 4.0,
            dt: 0.01,
            velocity_min: -5.0,
            neg_ux_origin: 6.0,
        };
        write_diagnostics(&path, &[r, r]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("time,slope_origin,norm_p,norm_x_pm1,barrier_margin,dt,velocity_min,neg_ux_origin\n"));
        assert_eq!(read_diagnostics(&path).unwrap(), vec![r, r]);
    }

    #[test]
    fn plotted_indices() {
        assert_eq!(plotted(1), vec![0]);
        assert_eq!(plotted(2), vec![0, 1]);
        assert_eq!(plotted(9), vec![0, 4, 8]);
    }
}
