use pwa_mrac::error::Error;
use pwa_mrac::output::trajectory_csv;
use pwa_mrac::pwa::active_mode;
use pwa_mrac::scenario::{paper_example, robust_example, LawSpec, Prepared, Scenario};
use pwa_mrac::signal::{DisturbanceKind, DisturbanceSpec};
use pwa_mrac::sim::{run, TrajectoryLog};

use nalgebra::DVector;

fn simulate(sc: &Scenario, record_gains: bool) -> TrajectoryLog {
    let prep = Prepared::new(sc).unwrap();
    let (cl, state) = prep.closed_loop(false).unwrap();
    let mut opts = prep.sim_options();
    opts.record_gains = record_gains;
    run(&cl, state, &opts).unwrap_or_else(|f| panic!("{f}"))
}

fn short_example(t_end: f64) -> Scenario {
    let mut sc = paper_example();
    sc.integration.t_end = t_end;
    sc
}

#[test]
fn runs_are_bit_identical() {
    let sc = short_example(60.0);
    let a = simulate(&sc, true);
    let b = simulate(&sc, true);
    assert_eq!(a, b);
    assert_eq!(trajectory_csv(&a), trajectory_csv(&b));
}

#[test]
fn inactive_gains_are_frozen() {
    let log = simulate(&short_example(80.0), true);
    assert!(!log.events.is_empty());
    let per_mode = log.samples[0].gains.as_ref().unwrap().len() / log.modes;
    for w in log.samples.windows(2) {
        let (a, b) = (w[0].gains.as_ref().unwrap(), w[1].gains.as_ref().unwrap());
        for m in 0..log.modes {
            if m == w[0].mode || m == w[1].mode {
                continue;
            }
            let range = m * per_mode..(m + 1) * per_mode;
            assert_eq!(
                a[range.clone()],
                b[range],
                "mode {m} moved between t = {} and {}",
                w[0].t,
                w[1].t
            );
        }
    }
}

#[test]
fn switches_do_not_expand_the_barrier() {
    let sc = paper_example();
    let prep = Prepared::new(&sc).unwrap();
    let log = simulate(&sc, false);
    assert_eq!(log.events.len(), 7);
    for ev in &log.events {
        assert!(ev.phi_after <= ev.phi_before + 1e-9, "{ev:?}");
        let ratio = ev.eps_after / ev.eps_before;
        assert!((ratio - prep.certificate.sqrt_mu).abs() < 1e-9);
        assert_ne!(ev.from, ev.to);
    }
}

#[test]
fn events_lie_on_region_boundaries() {
    let log = simulate(&paper_example(), false);
    for ev in &log.events {
        assert!(ev.boundary_residual.abs() < 1e-8, "{ev:?}");
    }
    let prep = Prepared::new(&paper_example()).unwrap();
    let (cl, _) = prep.closed_loop(false).unwrap();
    for s in &log.samples {
        let x = DVector::from_column_slice(&s.x);
        let u = DVector::from_column_slice(&s.u);
        assert_eq!(active_mode(&cl.plant, &x, &u).unwrap(), s.mode, "t = {}", s.t);
    }
}

#[test]
fn strict_dwell_aborts_with_context() {
    let prep = Prepared::new(&paper_example()).unwrap();
    let (cl, state) = prep.closed_loop(false).unwrap();
    let mut opts = prep.sim_options();
    opts.tau_d = Some(30.0);
    opts.strict_dwell = true;
    let failure = run(&cl, state, &opts).unwrap_err();
    assert!(matches!(failure.error, Error::DwellViolated { tau_d, .. } if tau_d == 30.0));
    assert!(failure.log.summary.t_reached > 20.0);
    assert!(failure.log.summary.failure.is_some());
}

#[test]
fn initial_error_outside_envelope_is_rejected() {
    let mut sc = paper_example();
    sc.initial.x0[0] = 5.0;
    sc.envelope.eps0 = Some(0.5);
    let err = Prepared::new(&sc).and_then(|p| p.closed_loop(false).map(|_| ()));
    assert!(err.is_err());
}

#[test]
fn robust_law_keeps_gains_in_bounds_under_sinusoidal_disturbance() {
    let mut sc = robust_example(0, 0.002);
    sc.integration.t_end = 120.0;
    sc.disturbance = DisturbanceSpec {
        kind: DisturbanceKind::Sinusoidal {
            direction: vec![0.0, 1.0, 0.0, -1.0],
            frequency: 0.7,
            phase: 0.0,
        },
        d_bar: 0.002,
    };
    let prep = Prepared::new(&sc).unwrap();
    assert!(prep.verdict.passed());
    let bounds = prep.initial_gains().unwrap().bounds.unwrap();
    let log = simulate(&sc, true);
    assert_eq!(log.summary.dwell_violations, 0);
    let per_mode = bounds[0].lo.len();
    for s in &log.samples {
        assert!(s.e_norm < s.eps);
        let g = s.gains.as_ref().unwrap();
        for (m, b) in bounds.iter().enumerate() {
            let (lo, hi) = (b.lo.flatten(), b.hi.flatten());
            for (i, v) in g[m * per_mode..(m + 1) * per_mode].iter().enumerate() {
                assert!(lo[i] <= *v && *v <= hi[i], "t = {}, mode {m}, entry {i}", s.t);
            }
        }
    }
}

#[test]
fn common_lyapunov_law_tracks_inside_rho() {
    let mut sc = short_example(100.0);
    sc.law = LawSpec::CommonP;
    let prep = Prepared::new(&sc).unwrap();
    assert!(prep.verdict.passed());
    let log = simulate(&sc, false);
    assert!(log.summary.monitors_passed);
    for s in &log.samples {
        assert!(s.e_norm < s.rho);
        assert_eq!(s.eps, s.rho);
    }
}

#[test]
fn refined_run_agrees_with_plain_fixed_step_on_smooth_interval() {
    let sc = short_example(20.0);
    let refined = simulate(&sc, false);
    let mut plain = sc.clone();
    plain.integration.step_tol = None;
    let plain = simulate(&plain, false);
    assert_eq!(refined.summary.halvings, 0);
    assert_eq!(refined.samples.len(), plain.samples.len());
    let worst = refined
        .samples
        .iter()
        .zip(&plain.samples)
        .flat_map(|(a, b)| a.x.iter().zip(&b.x).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max);
    assert!(worst < 1e-9, "max state difference {worst:e}");
}

#[test]
fn step_refinement_keeps_stiff_transient_inside_barrier() {
    // A slower square wave steps r2 when ε is near its floor; the adaptation
    // loop is then too stiff for a fixed 1 ms step.
    let mut sc = short_example(60.0);
    let sch = sc.input.channels[1].schedule.as_mut().unwrap();
    sch.period = 200.0;
    for w in &mut sch.windows {
        w.start *= 2.0;
        w.end *= 2.0;
    }
    let refined = simulate(&sc, false);
    assert!(refined.summary.halvings > 0);
    assert!(refined.summary.max_ratio < 0.5);

    sc.integration.step_tol = None;
    let prep = Prepared::new(&sc).unwrap();
    let (cl, state) = prep.closed_loop(false).unwrap();
    let failure = run(&cl, state, &prep.sim_options()).unwrap_err();
    assert!(
        matches!(failure.error, Error::BarrierViolated { .. }),
        "{}",
        failure.error
    );
}
