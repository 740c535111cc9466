//! Trajectory CSV, switch events and run summary files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::sim::{SwitchEvent, TrajectoryLog};

/// Twelve significant digits in exponent form, independent of locale.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else {
        format!("{v}")
    }
}

pub fn csv_header(log: &TrajectoryLog) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..log.n).map(|i| format!("x{i}")));
    cols.extend((0..log.n).map(|i| format!("xm{i}")));
    cols.extend(["e_normP", "eps", "rho", "phi", "mode"].map(String::from));
    cols.extend((0..log.p).map(|i| format!("u{i}")));
    if let Some(s) = log.samples.first() {
        if s.v.is_some() {
            cols.push("V".into());
            cols.push("V_theta".into());
        }
        if s.gains.is_some() {
            let per_mode = log.p * log.n + log.p * log.p + log.p;
            for m in 1..=log.modes {
                for k in 0..per_mode {
                    cols.push(gain_column(m, k, log.n, log.p));
                }
            }
        }
    }
    cols.join(",")
}

fn gain_column(mode: usize, k: usize, n: usize, p: usize) -> String {
    let (a, b) = (p * n, p * p);
    if k < a {
        format!("Kx{mode}_{}_{}", k % p, k / p)
    } else if k < a + b {
        let k = k - a;
        format!("Kr{mode}_{}_{}", k % p, k / p)
    } else {
        format!("Kf{mode}_{}", k - a - b)
    }
}

/// Trajectory CSV; modes are written 1-based.
pub fn trajectory_csv(log: &TrajectoryLog) -> String {
    let mut out = csv_header(log);
    out.push('\n');
    for s in &log.samples {
        let mut row: Vec<String> = Vec::with_capacity(16);
        row.push(fmt_num(s.t));
        row.extend(s.x.iter().map(|v| fmt_num(*v)));
        row.extend(s.xm.iter().map(|v| fmt_num(*v)));
        for v in [s.e_norm, s.eps, s.rho, s.phi] {
            row.push(fmt_num(v));
        }
        row.push((s.mode + 1).to_string());
        row.extend(s.u.iter().map(|v| fmt_num(*v)));
        if let (Some(v), Some(vt)) = (s.v, s.v_theta) {
            row.push(fmt_num(v));
            row.push(fmt_num(vt));
        }
        if let Some(g) = &s.gains {
            row.extend(g.iter().map(|v| fmt_num(*v)));
        }
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

#[derive(Serialize)]
struct EventRecord {
    time: f64,
    from: usize,
    to: usize,
    dwell: f64,
    dwell_violation: bool,
    boundary_residual: f64,
    e_norm_before: f64,
    e_norm_after: f64,
    eps_before: f64,
    eps_after: f64,
    phi_before: f64,
    phi_after: f64,
}

/// Events as JSON with 1-based modes.
pub fn events_json(events: &[SwitchEvent]) -> String {
    let recs: Vec<EventRecord> = events
        .iter()
        .map(|e| EventRecord {
            time: e.t,
            from: e.from + 1,
            to: e.to + 1,
            dwell: e.dwell,
            dwell_violation: e.dwell_violation,
            boundary_residual: e.boundary_residual,
            e_norm_before: e.e_norm_before,
            e_norm_after: e.e_norm_after,
            eps_before: e.eps_before,
            eps_after: e.eps_after,
            phi_before: e.phi_before,
            phi_after: e.phi_after,
        })
        .collect();
    serde_json::to_string_pretty(&recs).expect("events serialize") + "\n"
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

/// Writes `trajectory.csv`, `events.json` and `summary.json` into `dir`.
pub fn write_run(dir: &Path, log: &TrajectoryLog) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("trajectory.csv"), trajectory_csv(log))?;
    fs::write(dir.join("events.json"), events_json(&log.events))?;
    fs::write(dir.join("summary.json"), to_json(&log.summary))?;
    Ok(())
}
