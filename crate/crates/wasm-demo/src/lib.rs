//! Browser bindings for the mass-spring example. Every export takes and
//! returns JSON text so the page needs no generated type glue.

use serde::Deserialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use pwa_mrac::cli::certificate_json;
use pwa_mrac::envelope::{barrier_phi, lemma3_indicator, lemma3_zeta, lemma3_zeta_lower};
use pwa_mrac::scenario::{paper_example, robust_example, InitialGainsSpec, LawSpec, Prepared, Scenario};
use pwa_mrac::sim::run;

/// Overrides applied to the built-in example. Missing fields keep defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub h: Option<f64>,
    pub g: Option<f64>,
    pub l: Option<f64>,
    pub gamma: Option<f64>,
    pub t_end: Option<f64>,
    pub law: Option<LawSpec>,
    pub d_bar: Option<f64>,
    pub seed: Option<u64>,
    /// Initial gains as a fraction of the matching gains.
    pub fraction: Option<f64>,
    /// Upper bound on returned samples.
    pub max_points: Option<usize>,
}

fn scenario(params: &str) -> Result<Scenario, String> {
    let p: Params = if params.trim().is_empty() {
        Params::default()
    } else {
        serde_json::from_str(params).map_err(|e| format!("bad parameters: {e}"))?
    };
    let mut sc = match p.law {
        Some(LawSpec::Robust) => robust_example(p.seed.unwrap_or(0), p.d_bar.unwrap_or(0.002)),
        Some(law) => Scenario { law, ..paper_example() },
        None => paper_example(),
    };
    let scalars = [
        ("h", p.h),
        ("g", p.g),
        ("l", p.l),
        ("gamma", p.gamma),
        ("t_end", p.t_end),
    ];
    for (key, value) in scalars {
        if let Some(v) = value {
            sc.set(key, v).map_err(|e| e.to_string())?;
        }
    }
    if let Some(f) = p.fraction {
        sc.initial_gains = InitialGainsSpec::MatchingFraction(f);
    }
    let max_points = p.max_points.unwrap_or(2000).max(2);
    sc.integration.dt_out = (sc.integration.t_end / (max_points - 1) as f64).max(sc.integration.dt);
    Ok(sc)
}

fn error_json(msg: impl std::fmt::Display) -> String {
    json!({ "error": msg.to_string() }).to_string()
}

/// Certificate of the example under `params`.
pub fn certify_json(params: &str) -> String {
    let result = scenario(params).and_then(|sc| Prepared::new(&sc).map_err(|e| e.to_string()));
    match result {
        Ok(prep) => certificate_json(&prep),
        Err(e) => error_json(e),
    }
}

/// Closed-loop run of the example: decimated trajectory, switch events and
/// the monitor summary. Runs even when the certificate fails.
pub fn simulate_json(params: &str) -> String {
    let sc = match scenario(params) {
        Ok(s) => s,
        Err(e) => return error_json(e),
    };
    let prep = match Prepared::new(&sc) {
        Ok(p) => p,
        Err(e) => return error_json(e),
    };
    let (cl, state) = match prep.closed_loop(false) {
        Ok(c) => c,
        Err(e) => return error_json(e),
    };
    let (log, failure) = match run(&cl, state, &prep.sim_options()) {
        Ok(log) => (log, None),
        Err(f) => (f.log, Some(f.error.to_string())),
    };
    let column = |f: &dyn Fn(&pwa_mrac::sim::Sample) -> f64| -> Vec<f64> { log.samples.iter().map(f).collect() };
    let events: Vec<Value> = log
        .events
        .iter()
        .map(|e| json!({ "t": e.t, "from": e.from + 1, "to": e.to + 1, "dwell": e.dwell, "dwell_violation": e.dwell_violation }))
        .collect();
    json!({
        "certified": prep.verdict.passed(),
        "tau_d": prep.verdict.tau_d,
        "sqrt_mu": prep.certificate.sqrt_mu,
        "failure": failure,
        "t": column(&|s| s.t),
        "e_norm": column(&|s| s.e_norm),
        "eps": column(&|s| s.eps),
        "rho": column(&|s| s.rho),
        "phi": column(&|s| s.phi),
        "mode": log.samples.iter().map(|s| s.mode + 1).collect::<Vec<_>>(),
        "x1": column(&|s| s.x[0]),
        "xm1": column(&|s| s.xm[0]),
        "x3": column(&|s| s.x[2]),
        "xm3": column(&|s| s.xm[2]),
        "events": events,
        "summary": log.summary,
    })
    .to_string()
}

/// Barrier value and the sign-lemma indicator over `z ∈ [0, ε²)`.
pub fn barrier_curve_json(eps: f64, c: f64, points: usize) -> String {
    let zeta = match lemma3_zeta(eps, c) {
        Ok(z) => z,
        Err(e) => return error_json(e),
    };
    let eps2 = eps * eps;
    let n = points.clamp(2, 10_000);
    let mut z = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    let mut indicator = Vec::with_capacity(n);
    for k in 0..n {
        // stop short of ε², where φ diverges
        let zk = 0.98 * eps2 * k as f64 / (n - 1) as f64;
        z.push(zk);
        phi.push(barrier_phi(zk.sqrt(), eps).map(|b| b.phi).unwrap_or(f64::NAN));
        indicator.push(lemma3_indicator(zk, eps, c).unwrap_or(f64::NAN));
    }
    json!({
        "eps": eps,
        "c": c,
        "zeta": zeta,
        "zeta_lower": lemma3_zeta_lower(eps, c).ok(),
        "z": z,
        "phi": phi,
        "indicator": indicator,
    })
    .to_string()
}

#[wasm_bindgen]
pub fn certify(params: &str) -> String {
    certify_json(params)
}

#[wasm_bindgen]
pub fn simulate(params: &str) -> String {
    simulate_json(params)
}

#[wasm_bindgen]
pub fn barrier_curve(eps: f64, c: f64, points: usize) -> String {
    barrier_curve_json(eps, c, points)
}
