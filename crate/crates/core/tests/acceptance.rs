//! Acceptance suite for the mass-spring example and the library invariants.
//! Runs without the libtest harness so every criterion prints one line.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pwa_mrac::adapt::ModeGains;
use pwa_mrac::certify::{check_theorem2, compute_mu, dwell_time_bound, solve_lyapunov};
use pwa_mrac::envelope::{lemma3_indicator, lemma3_zeta};
use pwa_mrac::mass_spring;
use pwa_mrac::scenario::{paper_example, robust_example, InitialGainsSpec, Prepared, Scenario};
use pwa_mrac::sim::{closed_loop_derivative, error_derivative_matching_form, run, SimOptions};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn lyapunov_reproduction() -> Outcome {
    let start = Instant::now();
    let reference = mass_spring::reference();
    let tabulated = mass_spring::tabulated_p();
    let mut worst: f64 = 0.0;
    for ((sub, q), p_ref) in reference.subsystems().iter().zip(mass_spring::q_list()).zip(&tabulated) {
        let p = solve_lyapunov(&sub.a, &q).expect("Lyapunov solve");
        worst = worst.max((p - p_ref).amax());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-2 && secs < 1.0,
        format!("max |P - tabulated| = {worst:.3e} (tol 1e-2), {secs:.3} s"),
    )
}

fn solved_p() -> Vec<DMatrix<f64>> {
    mass_spring::reference()
        .subsystems()
        .iter()
        .zip(mass_spring::q_list())
        .map(|(s, q)| solve_lyapunov(&s.a, &q).unwrap())
        .collect()
}

fn mu_reproduction() -> Outcome {
    let (_, sqrt_mu) = compute_mu(&solved_p()).unwrap();
    outcome(
        (sqrt_mu - 7.1).abs() <= 0.05,
        format!("sqrt(mu) = {sqrt_mu:.6} (7.1 +- 0.05)"),
    )
}

fn dwell_reproduction() -> Outcome {
    let (_, sqrt_mu) = compute_mu(&solved_p()).unwrap();
    let tau = dwell_time_bound(0.12, 0.02, 0.01, 1.5, sqrt_mu).unwrap();
    outcome(
        (23.9..=24.2).contains(&tau),
        format!("tau_D = {tau:.4} s (in [23.9, 24.2])"),
    )
}

fn example_run(oracle: bool) -> (Prepared, pwa_mrac::sim::TrajectoryLog, f64) {
    let prep = Prepared::new(&paper_example()).unwrap();
    let (cl, state) = prep.closed_loop(oracle).unwrap();
    let mut opts = prep.sim_options();
    opts.record_v = oracle;
    let start = Instant::now();
    let log = run(&cl, state, &opts).unwrap_or_else(|f| panic!("{f}"));
    (prep, log, start.elapsed().as_secs_f64())
}

fn example_simulation() -> Outcome {
    let (prep, log, secs) = example_run(false);
    let tau = prep.certificate.tau_d.expect("dwell bound");
    let chain = log.samples.iter().all(|s| s.e_norm < s.eps && s.eps < s.rho);
    let min_gap = log
        .samples
        .iter()
        .map(|s| (s.eps - s.e_norm).min(s.rho - s.eps))
        .fold(f64::INFINITY, f64::min);
    let max_phi = log.samples.iter().map(|s| s.phi).fold(0.0, f64::max);
    let min_dwell = log.events.iter().map(|e| e.dwell).fold(f64::INFINITY, f64::min);
    let end = log.samples.last().map_or(0.0, |s| s.t);
    let passed = chain
        && min_gap > 0.0
        && max_phi <= 1.0 + 1e-6
        && min_dwell >= tau
        && (end - 200.0).abs() < 1e-9
        && secs < 30.0;
    outcome(
        passed,
        format!(
            "t_end {end}, min envelope gap {min_gap:.4}, max phi {max_phi:.4}, {} switches, min dwell {min_dwell:.3} >= tau_D {tau:.3}, {secs:.2} s",
            log.events.len()
        ),
    )
}

fn lyapunov_monotonicity() -> Outcome {
    let (_, log, _) = example_run(true);
    let mut worst = f64::NEG_INFINITY;
    for w in log.samples.windows(2) {
        let (a, b) = (w[0].v.unwrap(), w[1].v.unwrap());
        worst = worst.max((b - a) - 1e-6 * (1.0 + a));
    }
    let v0 = log.samples[0].v.unwrap();
    let v_end = log.samples.last().unwrap().v.unwrap();
    outcome(
        worst <= 0.0,
        format!(
            "max (dV - 1e-6 (1 + V)) = {worst:.3e}, V: {v0:.4} -> {v_end:.4}, {} switches crossed",
            log.events.len()
        ),
    )
}

fn perfect_matching() -> Outcome {
    let mut sc = paper_example();
    sc.initial_gains = InitialGainsSpec::MatchingFraction(1.0);
    let prep = Prepared::new(&sc).unwrap();
    let (cl, state) = prep.closed_loop(false).unwrap();
    let log = run(&cl, state, &prep.sim_options()).unwrap_or_else(|f| panic!("{f}"));
    let max_e = log.samples.iter().map(|s| s.e_norm).fold(0.0, f64::max);
    outcome(
        max_e < 1e-6,
        format!("max |e|_P = {max_e:.3e} over {} samples", log.samples.len()),
    )
}

/// Root of the indicator bracketed on a dense grid and refined by bisection.
fn bracketed_root(eps: f64, c: f64) -> f64 {
    let eps2 = eps * eps;
    let f = |z: f64| lemma3_indicator(z, eps, c).unwrap();
    let grid = 2000;
    let mut lo = 0.0;
    // The indicator diverges to +inf at eps^2, so eps^2 closes the last cell.
    let mut hi = eps2;
    for k in 1..grid {
        let z = eps2 * k as f64 / grid as f64;
        if f(z) > 0.0 {
            hi = z;
            break;
        }
        lo = z;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn lemma3_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sign_errors = 0;
    let mut worst_root = 0.0f64;
    let samples = 10_000;
    for _ in 0..samples {
        let eps: f64 = 10f64.powf(rng.gen_range(-2.0..2.0));
        let eps2 = eps * eps;
        let c = eps2 * rng.gen_range(1e-6..1.0 - 1e-6);
        let z = eps2 * rng.gen_range(0.0..1.0 - 1e-6);
        let zeta = lemma3_zeta(eps, c).unwrap();
        let value = lemma3_indicator(z, eps, c).unwrap();
        let near = (z - zeta).abs() < 1e-9 * eps2;
        let consistent = if z > zeta { value > 0.0 } else { value <= 0.0 };
        if !consistent && !near {
            sign_errors += 1;
        }
        worst_root = worst_root.max((bracketed_root(eps, c) - zeta).abs() / eps2);
    }
    outcome(
        sign_errors == 0 && worst_root < 1e-9,
        format!("{samples} samples, {sign_errors} sign errors, max |zeta - bracketed root| / eps^2 = {worst_root:.2e}"),
    )
}

fn robust_scenario(seed: u64) -> Scenario {
    robust_example(seed, 0.002)
}

fn robust_runs() -> Outcome {
    let mut failures = Vec::new();
    let mut worst_ratio = 0.0f64;
    let mut worst_clip = 0.0f64;
    let mut min_dwell = f64::INFINITY;
    for seed in 0..10 {
        let sc = robust_scenario(seed);
        let prep = Prepared::new(&sc).unwrap();
        if !prep.verdict.passed() {
            failures.push(format!("seed {seed}: certificate failed"));
            continue;
        }
        let bounds = prep.initial_gains().unwrap().bounds.unwrap();
        let nominal = prep.nominal.clone().unwrap();
        let scaled: Vec<ModeGains> = nominal.modes.iter().map(|k| k.scaled(0.5)).collect();
        let contains = bounds
            .iter()
            .zip(&nominal.modes)
            .zip(&scaled)
            .all(|((b, k), h)| b.contains(k) && b.contains(h));
        if !contains {
            failures.push(format!("seed {seed}: bounds miss K* or 0.5 K*"));
        }
        let (cl, state) = prep.closed_loop(false).unwrap();
        let mut opts = prep.sim_options();
        opts.record_gains = true;
        match run(&cl, state, &opts) {
            Ok(log) => {
                let per_mode = bounds[0].lo.len();
                let inside = log.samples.iter().all(|s| {
                    let g = s.gains.as_ref().unwrap();
                    bounds.iter().enumerate().all(|(m, b)| {
                        let chunk = &g[m * per_mode..(m + 1) * per_mode];
                        b.lo.iter()
                            .zip(b.hi.iter())
                            .zip(chunk)
                            .all(|((l, h), v)| l <= v && v <= h)
                    })
                });
                let barrier = log.samples.iter().all(|s| s.e_norm < s.eps);
                let dwell = log.summary.dwell_violations == 0;
                if !inside || !barrier || !dwell || (log.summary.t_reached - 200.0).abs() > 1e-9 {
                    failures.push(format!(
                        "seed {seed}: barrier {barrier}, gains inside {inside}, dwell {dwell}"
                    ));
                }
                min_dwell = min_dwell.min(log.summary.min_dwell.unwrap_or(f64::INFINITY));
                worst_ratio = worst_ratio.max(log.summary.max_ratio);
                worst_clip = worst_clip.max(log.summary.max_clip);
            }
            Err(f) => failures.push(format!("seed {seed}: {f}")),
        }
    }
    let d = check_theorem2(
        &Prepared::new(&robust_scenario(0)).unwrap().certificate,
        &robust_scenario(0).design(),
        0.002,
    );
    outcome(
        failures.is_empty() && d.passed(),
        format!(
            "10 seeds, d_bar 0.002, max |e|_P/eps {worst_ratio:.4}, min dwell {min_dwell:.3}, max post-step clip {worst_clip:.2e}{}",
            if failures.is_empty() { String::new() } else { format!(", failures: {failures:?}") }
        ),
    )
}

fn error_identity() -> Outcome {
    let mut sc = paper_example();
    sc.initial_gains = InitialGainsSpec::MatchingFraction(0.0);
    let prep = Prepared::new(&sc).unwrap();
    let (cl, _) = prep.closed_loop(false).unwrap();
    let nominal = prep.nominal.clone().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = DVector::from_fn(4, |_, _| rng.gen_range(-3.0..3.0));
        let xm = DVector::from_fn(4, |_, _| rng.gen_range(-3.0..3.0));
        let mode = rng.gen_range(0..3);
        let k = nominal.modes[mode].clone();
        let gains = ModeGains {
            kx: k.kx.map(|v| v * rng.gen_range(0.0..2.0)),
            kr: k.kr.map(|v| v * rng.gen_range(0.0..2.0)),
            kf: k.kf.map(|v| v + rng.gen_range(-5.0..5.0)),
        };
        let t = rng.gen_range(0.0..200.0);
        let d = closed_loop_derivative(&cl, t, &x, &xm, &gains, None, mode, 1e6).unwrap();
        let direct = &d.dx - &d.dxm;
        let eq = error_derivative_matching_form(&cl, &nominal, t, &x, &xm, &gains, mode).unwrap();
        worst = worst.max((&direct - &eq).norm() / direct.norm().max(1.0));
    }
    outcome(
        worst <= 1e-10,
        format!("100 states, max relative difference {worst:.2e}"),
    )
}

fn integration_order() -> Outcome {
    let prep = Prepared::new(&paper_example()).unwrap();
    let terminal = |dt: f64| {
        let (cl, state) = prep.closed_loop(false).unwrap();
        let opts = SimOptions {
            dt,
            dt_out: 20.0,
            t_end: 20.0,
            record_gains: true,
            step_tol: None,
            ..Default::default()
        };
        let log = run(&cl, state, &opts).unwrap_or_else(|f| panic!("{f}"));
        assert!(log.events.is_empty(), "interval must be switch-free");
        let s = log.samples.last().unwrap();
        let mut v = s.x.clone();
        v.extend(&s.xm);
        v.extend(s.gains.as_ref().unwrap());
        DVector::from_vec(v)
    };
    let dt = 0.01;
    let reference = terminal(dt / 16.0);
    let coarse = (terminal(dt) - &reference).norm();
    let fine = (terminal(dt / 2.0) - &reference).norm();
    let ratio = coarse / fine;
    outcome(
        (12.0..=20.0).contains(&ratio),
        format!("[0, 20] s, dt {dt}: error {coarse:.3e} -> {fine:.3e}, ratio {ratio:.2} (in [12, 20])"),
    )
}

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 10] = [
        ("Lyapunov reproduction", lyapunov_reproduction),
        ("mu reproduction", mu_reproduction),
        ("dwell-time reproduction", dwell_reproduction),
        ("example simulation", example_simulation),
        ("Lyapunov monotonicity", lyapunov_monotonicity),
        ("perfect-matching null test", perfect_matching),
        ("barrier sign lemma", lemma3_suite),
        ("robust property run", robust_runs),
        ("error-dynamics identity", error_identity),
        ("integration order", integration_order),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!(
            "criterion {:>2} {:<28} {}  {}",
            i + 1,
            name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.passed {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
