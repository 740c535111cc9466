//! Command-line front end. Exit codes: 0 success, 1 certificate conditions
//! failed, 2 invalid usage or input, 3 simulation aborted or a monitor failed.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::certify::Verdict;
use crate::error::{Error, Result};
use crate::output::{self, fmt_num};
use crate::scenario::{paper_example, robust_example, Prepared, Scenario};
use crate::sim::{run, Summary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CERTIFICATE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_MONITOR: i32 = 3;

/// Environment variable bounding the sweep worker pool.
pub const WORKERS_ENV: &str = "PWA_MRAC_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "pwa-mrac",
    version,
    about = "Adaptive tracking control of piecewise affine systems with prescribed performance"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the Lyapunov equations and check the stability conditions.
    Certify {
        scenario: PathBuf,
        #[command(flatten)]
        common: CertifyArgs,
    },
    /// Run a closed-loop simulation and write trajectory, events and summary.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Run independent simulations over a parameter grid.
    Sweep {
        scenario: PathBuf,
        /// e.g. "h=0.05,0.12,0.24;g=0.01"
        #[arg(long)]
        grid: String,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
    },
    /// The built-in two-mass spring-damper example.
    PaperExample {
        #[arg(value_enum, default_value = "simulate")]
        action: ExampleAction,
        /// Robust law with projection and a bounded random disturbance.
        #[arg(long)]
        robust: bool,
        /// Disturbance bound for --robust.
        #[arg(long = "d-bar", default_value_t = 0.002)]
        d_bar: f64,
        #[command(flatten)]
        sim: SimArgs,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ExampleAction {
    Certify,
    Simulate,
    /// Print the scenario file.
    Scenario,
}

#[derive(Debug, Args)]
struct CertifyArgs {
    /// Print the certificate as JSON.
    #[arg(long)]
    json: bool,
    /// Override a scalar, e.g. --set h=0.3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulate even when certificate conditions fail.
    #[arg(long)]
    force: bool,
    /// Treat dwell-time violations as errors.
    #[arg(long = "strict-dwell")]
    strict_dwell: bool,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// Monitor the Lyapunov function using the matching gains.
    #[arg(long = "oracle-v")]
    oracle_v: bool,
    /// Add every mode's gains to the trajectory CSV.
    #[arg(long)]
    gains: bool,
    #[arg(long)]
    json: bool,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INPUT
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Certify { scenario, common } => {
            let mut sc = Scenario::load(&scenario)?;
            apply_sets(&mut sc, &common.set)?;
            cmd_certify(&sc, common.json, out)
        }
        Command::Simulate { scenario, sim } => {
            let sc = Scenario::load(&scenario)?;
            let dir = sim.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            cmd_simulate(sc, &sim, &dir, out, err)
        }
        Command::Sweep {
            scenario,
            grid,
            out: csv,
            dt,
            t_end,
        } => {
            let mut sc = Scenario::load(&scenario)?;
            if let Some(v) = dt {
                sc.integration.dt = v;
            }
            if let Some(v) = t_end {
                sc.integration.t_end = v;
            }
            cmd_sweep(&sc, &grid, csv.as_deref(), out)
        }
        Command::PaperExample {
            action,
            robust,
            d_bar,
            sim,
        } => {
            let mut sc = if robust {
                robust_example(0, d_bar)
            } else {
                paper_example()
            };
            match action {
                ExampleAction::Scenario => {
                    apply_sets(&mut sc, &sim.set)?;
                    write!(out, "{}", sc.to_json())?;
                    writeln!(out)?;
                    Ok(EXIT_OK)
                }
                ExampleAction::Certify => {
                    apply_sets(&mut sc, &sim.set)?;
                    cmd_certify(&sc, sim.json, out)
                }
                ExampleAction::Simulate => {
                    let dir = sim.out.clone().unwrap_or_else(|| PathBuf::from("out/paper-example"));
                    cmd_simulate(sc, &sim, &dir, out, err)
                }
            }
        }
    }
}

fn apply_sets(sc: &mut Scenario, sets: &[String]) -> Result<()> {
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("--set expects KEY=VALUE, got `{s}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("--set {k}: `{v}` is not a number")))?;
        sc.set(k.trim(), v)?;
    }
    sc.validate()
}

#[derive(Serialize)]
struct ConditionDoc<'a> {
    name: &'a str,
    passed: bool,
    margin: f64,
}

#[derive(Serialize)]
struct CertificateDoc<'a> {
    passed: bool,
    report: &'a crate::scenario::NormalizationReport,
    kappa: &'a [f64],
    h_max: f64,
    conditions: Vec<ConditionDoc<'a>>,
    tau_d: Option<f64>,
    disturbance_c: Option<f64>,
    common_p: Option<crate::scenario::Matrix>,
    notes: &'a [String],
}

fn certificate_doc(prep: &Prepared) -> CertificateDoc<'_> {
    let v: &Verdict = &prep.verdict;
    CertificateDoc {
        passed: v.passed(),
        report: &prep.report,
        kappa: &prep.certificate.kappa_list,
        h_max: prep.certificate.h_max,
        conditions: v
            .conditions
            .iter()
            .map(|c| ConditionDoc {
                name: &c.name,
                passed: c.passed,
                margin: c.margin,
            })
            .collect(),
        tau_d: v.tau_d,
        disturbance_c: v.disturbance_c,
        common_p: prep.common_p.as_ref().map(crate::scenario::to_rows),
        notes: &v.notes,
    }
}

/// Certificate document as written to `certificate.json`.
pub fn certificate_json(prep: &Prepared) -> String {
    output::to_json(&certificate_doc(prep))
}

fn print_certificate(prep: &Prepared, out: &mut dyn Write) -> Result<()> {
    let r = &prep.report;
    let c = &prep.certificate;
    writeln!(
        out,
        "scenario: {}",
        if r.name.is_empty() { "(unnamed)" } else { &r.name }
    )?;
    writeln!(out, "  n = {}, p = {}, modes = {}, law = {}", r.n, r.p, r.modes, r.law)?;
    for (i, p) in c.p_list.iter().enumerate() {
        writeln!(out, "  P_{} =", i + 1)?;
        for row in p.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>12.4}")).collect();
            writeln!(out, "    [{}]", cells.join(" "))?;
        }
    }
    writeln!(out, "  mu = {:.6}, sqrt(mu) = {:.6}", c.mu, c.sqrt_mu)?;
    writeln!(out, "  alpha_m = {:.6}, h_max = alpha_m/2 = {:.6}", c.alpha_m, c.h_max)?;
    writeln!(out, "  reference dwell ln(mu)/alpha_m = {:.6} s", c.reference_dwell())?;
    writeln!(out, "  eps0 = {}", r.eps0)?;
    for n in &r.notes {
        writeln!(out, "  note: {n}")?;
    }
    writeln!(out, "conditions:")?;
    write!(out, "{}", prep.verdict)?;
    writeln!(out, "verdict: {}", if prep.verdict.passed() { "PASS" } else { "FAIL" })?;
    Ok(())
}

pub fn cmd_certify(sc: &Scenario, json: bool, out: &mut dyn Write) -> Result<i32> {
    let prep = Prepared::new(sc)?;
    if json {
        write!(out, "{}", certificate_json(&prep))?;
    } else {
        print_certificate(&prep, out)?;
    }
    Ok(if prep.verdict.passed() {
        EXIT_OK
    } else {
        EXIT_CERTIFICATE
    })
}

fn cmd_simulate(mut sc: Scenario, args: &SimArgs, dir: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    if let Some(v) = args.dt {
        sc.integration.dt = v;
    }
    if let Some(v) = args.t_end {
        sc.integration.t_end = v;
    }
    apply_sets(&mut sc, &args.set)?;
    let prep = Prepared::new(&sc)?;
    print_certificate(&prep, out)?;
    if !prep.verdict.passed() {
        if !args.force {
            writeln!(err, "certificate conditions failed; use --force to simulate anyway")?;
            return Ok(EXIT_CERTIFICATE);
        }
        writeln!(
            err,
            "warning: certificate conditions failed; simulating because of --force"
        )?;
    }
    let (cl, state) = prep.closed_loop(args.oracle_v)?;
    let mut opts = prep.sim_options();
    opts.strict_dwell = args.strict_dwell;
    opts.record_v = args.oracle_v;
    opts.record_gains = args.gains;
    let (log, failure) = match run(&cl, state, &opts) {
        Ok(log) => (log, None),
        Err(f) => (f.log, Some(f.error)),
    };
    output::write_run(dir, &log)?;
    fs_write(&dir.join("certificate.json"), &certificate_json(&prep))?;
    if args.json {
        write!(out, "{}", output::to_json(&log.summary))?;
    } else {
        print_summary(&log.summary, out)?;
    }
    writeln!(out, "wrote {}", dir.display())?;
    if let Some(e) = failure {
        writeln!(err, "simulation aborted: {e}")?;
        return Ok(EXIT_MONITOR);
    }
    Ok(if log.summary.monitors_passed {
        EXIT_OK
    } else {
        EXIT_MONITOR
    })
}

fn fs_write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

fn print_summary(s: &Summary, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "summary:")?;
    writeln!(out, "  t = [{}, {}], samples = {}", s.t_start, s.t_reached, s.samples)?;
    writeln!(out, "  max |e|_P / bound = {:.6}", s.max_ratio)?;
    writeln!(out, "  max |e|_P = {:.6e}", s.max_e_norm)?;
    writeln!(out, "  max phi = {:.6}", s.max_phi)?;
    writeln!(out, "  min (bound - |e|_P) = {:.6}", s.min_barrier_margin)?;
    writeln!(out, "  min (rho - eps) = {}", opt(s.min_envelope_margin))?;
    writeln!(
        out,
        "  switches = {}, min dwell = {}, tau_D = {}, dwell violations = {}",
        s.switch_count,
        opt(s.min_dwell),
        opt(s.tau_d),
        s.dwell_violations
    )?;
    if let Some(v) = s.v_max_increase {
        writeln!(out, "  max V increase / (1 + V) = {v:.3e}")?;
    }
    if s.clip_events > 0 || s.max_clip > 0.0 {
        writeln!(
            out,
            "  gain clipping: max {:.3e}, {} steps above tolerance",
            s.max_clip, s.clip_events
        )?;
    }
    if s.halvings > 0 {
        writeln!(
            out,
            "  step halvings = {}, accepted at the refinement limit = {}",
            s.halvings, s.unresolved_steps
        )?;
    }
    if let Some(f) = &s.failure {
        writeln!(out, "  failure: {f}")?;
    }
    writeln!(out, "  monitors: {}", if s.monitors_passed { "PASS" } else { "FAIL" })?;
    Ok(())
}

/// Cartesian product of `key=v1,v2;key2=...`.
pub fn parse_grid(spec: &str) -> Result<Vec<Vec<(String, f64)>>> {
    let mut axes: Vec<(String, Vec<f64>)> = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, vs) = part
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("grid axis `{part}` must look like key=v1,v2")))?;
        let values = vs
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Validation(format!("grid axis {k}: `{v}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.is_empty() {
            return Err(Error::Validation(format!("grid axis {k} has no values")));
        }
        axes.push((k.trim().to_string(), values));
    }
    if axes.is_empty() {
        return Err(Error::Validation("empty grid".into()));
    }
    let mut points: Vec<Vec<(String, f64)>> = vec![Vec::new()];
    for (k, values) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((k.clone(), *v));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub params: Vec<(String, f64)>,
    pub certified: Option<bool>,
    pub tau_d: Option<f64>,
    pub status: String,
    pub summary: Option<Summary>,
}

fn sweep_point(base: &Scenario, params: &[(String, f64)]) -> SweepRow {
    let mut row = SweepRow {
        params: params.to_vec(),
        certified: None,
        tau_d: None,
        status: String::new(),
        summary: None,
    };
    let mut sc = base.clone();
    let prepared = params
        .iter()
        .try_for_each(|(k, v)| sc.set(k, *v))
        .and_then(|_| Prepared::new(&sc));
    let prep = match prepared {
        Ok(p) => p,
        Err(e) => {
            row.status = format!("invalid: {e}");
            return row;
        }
    };
    row.certified = Some(prep.verdict.passed());
    row.tau_d = prep.certificate.tau_d;
    if !prep.verdict.passed() {
        let failed: Vec<&str> = prep.verdict.failures().map(|c| c.name.as_str()).collect();
        row.status = format!("certificate-fail: {}", failed.join("; "));
        return row;
    }
    let result = prep
        .closed_loop(false)
        .map(|(cl, state)| run(&cl, state, &prep.sim_options()));
    match result {
        Ok(Ok(log)) => {
            row.status = if log.summary.monitors_passed {
                "ok"
            } else {
                "monitor-fail"
            }
            .into();
            row.summary = Some(log.summary);
        }
        Ok(Err(f)) => {
            row.status = format!("aborted: {}", f.error);
            row.summary = Some(f.log.summary);
        }
        Err(e) => row.status = format!("setup-fail: {e}"),
    }
    row
}

fn worker_count() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|n| *n > 0)
}

/// Runs every grid point; rows keep grid order.
pub fn sweep(base: &Scenario, grid: &[Vec<(String, f64)>]) -> Result<Vec<SweepRow>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Validation(format!("worker pool: {e}")))?;
    Ok(pool.install(|| grid.par_iter().map(|p| sweep_point(base, p)).collect()))
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let Some(first) = rows.first() else {
        return out;
    };
    let mut header: Vec<String> = first.params.iter().map(|(k, _)| k.clone()).collect();
    header.extend(
        [
            "certified",
            "tau_d",
            "max_ratio",
            "min_rho_minus_eps",
            "max_phi",
            "switches",
            "min_dwell",
            "status",
        ]
        .map(String::from),
    );
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        let mut cells: Vec<String> = r.params.iter().map(|(_, v)| fmt_num(*v)).collect();
        cells.push(
            r.certified
                .map_or("-".into(), |c| if c { "pass" } else { "fail" }.into()),
        );
        cells.push(r.tau_d.map_or("-".into(), fmt_num));
        let s = r.summary.as_ref();
        cells.push(s.map_or("-".into(), |s| fmt_num(s.max_ratio)));
        cells.push(s.and_then(|s| s.min_envelope_margin).map_or("-".into(), fmt_num));
        cells.push(s.map_or("-".into(), |s| fmt_num(s.max_phi)));
        cells.push(s.map_or("-".into(), |s| s.switch_count.to_string()));
        cells.push(s.and_then(|s| s.min_dwell).map_or("-".into(), fmt_num));
        cells.push(format!("\"{}\"", r.status.replace('"', "'")));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn cmd_sweep(sc: &Scenario, grid: &str, csv: Option<&Path>, out: &mut dyn Write) -> Result<i32> {
    let points = parse_grid(grid)?;
    let rows = sweep(sc, &points)?;
    let table = sweep_table(&rows);
    write!(out, "{table}")?;
    if let Some(path) = csv {
        fs_write(path, &table)?;
    }
    let ok = rows
        .iter()
        .filter(|r| r.certified == Some(true))
        .all(|r| r.status == "ok");
    let invalid = rows.iter().any(|r| r.certified.is_none());
    Ok(if invalid {
        EXIT_INPUT
    } else if ok {
        EXIT_OK
    } else {
        EXIT_MONITOR
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cartesian() {
        let g = parse_grid("h=0.05,0.12;g=0.01").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[1], vec![("h".to_string(), 0.12), ("g".to_string(), 0.01)]);
        assert!(parse_grid("h").is_err());
        assert!(parse_grid("h=a").is_err());
        assert!(parse_grid("").is_err());
    }
}
