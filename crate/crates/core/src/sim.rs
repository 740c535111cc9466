//! Closed-loop simulation: fixed-step RK4 over plant, reference model and
//! the active mode's gains, with bisection on region exits, `ε` resets at
//! switches, and per-sample monitors.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::adapt::{
    control_output, gain_rates_nominal, lyapunov_v, project_rates, AdaptationLaw, GainState, ModeGains, Oracle,
    RateInputs,
};
use crate::envelope::{barrier_phi_at, AuxiliarySignal, PerformanceSpec};
use crate::error::{Error, Result};
use crate::pwa::{active_mode, quad_form, stack, NominalGains, PwaPlant, ReferenceModel};
use crate::signal::{Disturbance, InputSignal, Side};

/// Target `|residual|` when locating a region exit.
pub const EVENT_TOL: f64 = 1e-10;
/// Clipping beyond this after a step is recorded as a diagnostic.
pub const CLIP_TOL: f64 = 1e-9;
/// Allowed growth of the oracle Lyapunov function between samples, relative
/// to `1 + V`.
pub const V_TOL: f64 = 1e-6;
pub const DEFAULT_CHATTER_LIMIT: usize = 4;
/// Maximum recursion depth of step halving.
pub const MAX_REFINE: u32 = 12;
pub const DEFAULT_STEP_TOL: f64 = 1e-6;

/// Everything that stays fixed during a run.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub plant: PwaPlant,
    pub reference: ReferenceModel,
    pub law: AdaptationLaw,
    /// Error weighting per mode; identical entries under the common-P law.
    pub weights: Vec<DMatrix<f64>>,
    pub s_list: Vec<DMatrix<f64>>,
    pub performance: PerformanceSpec,
    pub input: InputSignal,
    pub disturbance: Disturbance,
    pub oracle: Option<Oracle>,
}

impl ClosedLoop {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        plant: PwaPlant,
        reference: ReferenceModel,
        law: AdaptationLaw,
        weights: Vec<DMatrix<f64>>,
        s_list: Vec<DMatrix<f64>>,
        performance: PerformanceSpec,
        input: InputSignal,
        disturbance: Disturbance,
    ) -> Result<Self> {
        let (n, p, s) = (plant.n(), plant.p(), plant.modes());
        if reference.n() != n || reference.p() != p || reference.modes() != s {
            return Err(Error::Dimension("plant and reference model shapes differ".into()));
        }
        if weights.len() != s || weights.iter().any(|w| w.shape() != (n, n)) {
            return Err(Error::Dimension(format!("need {s} weighting matrices of size {n}x{n}")));
        }
        if s_list.len() != s || s_list.iter().any(|m| m.shape() != (p, p)) {
            return Err(Error::Dimension(format!(
                "need {s} gain-structure matrices of size {p}x{p}"
            )));
        }
        if input.p() != p {
            return Err(Error::Dimension(format!(
                "input signal has {} channels, plant has {p} inputs",
                input.p()
            )));
        }
        input.validate()?;
        Ok(Self {
            plant,
            reference,
            law,
            weights,
            s_list,
            performance,
            input,
            disturbance,
            oracle: None,
        })
    }

    pub fn with_oracle(mut self, oracle: Oracle) -> Self {
        self.oracle = Some(oracle);
        self
    }

    pub fn n(&self) -> usize {
        self.plant.n()
    }

    pub fn p(&self) -> usize {
        self.plant.p()
    }

    fn uses_eps(&self) -> bool {
        self.law != AdaptationLaw::CommonP
    }

    /// Barrier bound at time `t`: `ε(t)`, or `ρ(t)` under the common-P law.
    pub fn bound(&self, eps: &AuxiliarySignal, t: f64) -> f64 {
        if self.uses_eps() {
            eps.eps
        } else {
            self.performance.rho(t)
        }
    }

    pub fn e_norm(&self, mode: usize, x: &DVector<f64>, xm: &DVector<f64>) -> f64 {
        quad_form(&(x - xm), &self.weights[mode]).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub dt: f64,
    pub dt_out: f64,
    pub t_end: f64,
    /// Switches tolerated within one step before aborting.
    pub chatter_limit: usize,
    /// Turns dwell-time violations into errors.
    pub strict_dwell: bool,
    pub tau_d: Option<f64>,
    pub record_gains: bool,
    pub record_v: bool,
    /// Step-doubling tolerance on `|y_full − y_halves| / (1 + |y|)` per
    /// component. `None` gives plain fixed-step RK4.
    pub step_tol: Option<f64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            dt_out: 0.1,
            t_end: 10.0,
            chatter_limit: DEFAULT_CHATTER_LIMIT,
            strict_dwell: false,
            tau_d: None,
            record_gains: false,
            record_v: false,
            step_tol: Some(DEFAULT_STEP_TOL),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub x: DVector<f64>,
    pub xm: DVector<f64>,
    pub gains: GainState,
    pub eps: AuxiliarySignal,
    pub mode: usize,
    pub last_switch_t: f64,
    pub switch_count: usize,
}

impl SimState {
    /// Resolves the initial mode and checks the barrier at `t0`.
    pub fn initial(
        cl: &ClosedLoop,
        t0: f64,
        x0: DVector<f64>,
        xm0: DVector<f64>,
        gains: GainState,
        eps: AuxiliarySignal,
    ) -> Result<Self> {
        let (n, p) = (cl.n(), cl.p());
        if x0.len() != n || xm0.len() != n {
            return Err(Error::Dimension(format!("initial states must have {n} entries")));
        }
        if gains.modes.len() != cl.plant.modes()
            || gains
                .modes
                .iter()
                .any(|g| g.kx.shape() != (p, n) || g.kr.shape() != (p, p) || g.kf.len() != p)
        {
            return Err(Error::Dimension("initial gains do not match the plant".into()));
        }
        if cl.law == AdaptationLaw::Robust && gains.bounds.is_none() {
            return Err(Error::Validation("the robust law needs gain bounds".into()));
        }
        let r = cl.input.eval(t0);
        let (mode, _) = resolve_mode(cl, &gains, &x0, &r, 0)?;
        let state = Self {
            t: t0,
            x: x0,
            xm: xm0,
            gains,
            eps,
            mode,
            last_switch_t: t0,
            switch_count: 0,
        };
        let e = cl.e_norm(mode, &state.x, &state.xm);
        barrier_phi_at(e, cl.bound(&state.eps, t0), t0)?;
        Ok(state)
    }
}

/// Finds a mode `i` with `[x; u_i] ∈ Ω_i` by fixed-point iteration from `start`.
fn resolve_mode(
    cl: &ClosedLoop,
    gains: &GainState,
    x: &DVector<f64>,
    r: &DVector<f64>,
    start: usize,
) -> Result<(usize, DVector<f64>)> {
    let mut mode = start;
    let mut u = control_output(&gains.modes[mode], x, r);
    for _ in 0..=cl.plant.modes() {
        let next = active_mode(&cl.plant, x, &u)?;
        if next == mode {
            break;
        }
        mode = next;
        u = control_output(&gains.modes[mode], x, r);
    }
    Ok((mode, u))
}

/// Right-hand side at one instant with the mode held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub dx: DVector<f64>,
    pub dxm: DVector<f64>,
    pub dk: ModeGains,
    pub u: DVector<f64>,
    pub e_norm: f64,
}

/// `ẋ = A_i x + B_i u + f_i + d`, `ẋ_m = A_mi x_m + B_mi r + f_mi` and the
/// gain rates of the chosen law. `bound` is `ε(t)` (or `ρ(t)` for the
/// common-P law); `bounds` is required by the robust law.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop_derivative(
    cl: &ClosedLoop,
    t: f64,
    x: &DVector<f64>,
    xm: &DVector<f64>,
    gains: &ModeGains,
    bounds: Option<&crate::adapt::GainBounds>,
    mode: usize,
    bound: f64,
) -> Result<Derivative> {
    derivative_with_input(cl, t, &cl.input.eval(t), x, xm, gains, bounds, mode, bound)
}

#[allow(clippy::too_many_arguments)]
fn derivative_with_input(
    cl: &ClosedLoop,
    t: f64,
    r: &DVector<f64>,
    x: &DVector<f64>,
    xm: &DVector<f64>,
    gains: &ModeGains,
    bounds: Option<&crate::adapt::GainBounds>,
    mode: usize,
    bound: f64,
) -> Result<Derivative> {
    let u = control_output(gains, x, r);
    let sys = &cl.plant.subsystems()[mode];
    let refm = &cl.reference.subsystems()[mode];
    let mut dx = sys.eval(x, &u);
    if !cl.disturbance.is_zero() {
        dx += cl.disturbance.eval(t, x, &u)?;
    }
    let dxm = refm.eval(xm, r);
    let e = x - xm;
    let p = &cl.weights[mode];
    let e_norm = quad_form(&e, p).max(0.0).sqrt();
    let barrier = barrier_phi_at(e_norm, bound, t)?;
    let inputs = RateInputs {
        active: mode,
        phi_d: barrier.phi_d,
        p,
        b_m: &refm.b,
        s: &cl.s_list[mode],
        e: &e,
        x,
        r,
    };
    let raw = gain_rates_nominal(&inputs, mode);
    let dk = match (cl.law, bounds) {
        (AdaptationLaw::Robust, Some(b)) => project_rates(&raw, gains, b)?,
        (AdaptationLaw::Robust, None) => {
            return Err(Error::Validation("the robust law needs gain bounds".into()));
        }
        _ => raw,
    };
    Ok(Derivative { dx, dxm, dk, u, e_norm })
}

/// Error derivative written through the gain errors,
/// `ė = A_mi e + B_i (K̃_x x + K̃_r r + K̃_f) + d`.
pub fn error_derivative_matching_form(
    cl: &ClosedLoop,
    nominal: &NominalGains,
    t: f64,
    x: &DVector<f64>,
    xm: &DVector<f64>,
    gains: &ModeGains,
    mode: usize,
) -> Result<DVector<f64>> {
    let r = cl.input.eval(t);
    let tilde = gains.sub(&nominal.modes[mode]);
    let b = &cl.plant.subsystems()[mode].b;
    let a_m = &cl.reference.subsystems()[mode].a;
    let mut de = a_m * (x - xm) + b * (&tilde.kx * x + &tilde.kr * &r + &tilde.kf);
    if !cl.disturbance.is_zero() {
        let u = control_output(gains, x, &r);
        de += cl.disturbance.eval(t, x, &u)?;
    }
    Ok(de)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub t: f64,
    /// 0-based region indices.
    pub from: usize,
    pub to: usize,
    /// Time since the previous switch (or the start of the run).
    pub dwell: f64,
    pub dwell_violation: bool,
    /// Exit residual of the leaving region at the accepted switch state.
    pub boundary_residual: f64,
    pub e_norm_before: f64,
    pub e_norm_after: f64,
    pub eps_before: f64,
    pub eps_after: f64,
    pub phi_before: f64,
    pub phi_after: f64,
}

/// Flat integration vector `[x; x_m; active gains]`.
fn pack(x: &DVector<f64>, xm: &DVector<f64>, k: &ModeGains) -> DVector<f64> {
    let n = x.len();
    let mut y = DVector::zeros(2 * n + k.len());
    y.rows_mut(0, n).copy_from(x);
    y.rows_mut(n, n).copy_from(xm);
    for (dst, v) in y.iter_mut().skip(2 * n).zip(k.iter()) {
        *dst = *v;
    }
    y
}

fn unpack(y: &DVector<f64>, n: usize, p: usize) -> (DVector<f64>, DVector<f64>, ModeGains) {
    let x = y.rows(0, n).into_owned();
    let xm = y.rows(n, n).into_owned();
    let k = ModeGains::from_slice(n, p, &y.as_slice()[2 * n..]);
    (x, xm, k)
}

/// Integrates over `[t0, t1]`, a segment free of input discontinuities.
struct Stepper<'a> {
    cl: &'a ClosedLoop,
    mode: usize,
    t0: f64,
    t1: f64,
    eps0: AuxiliarySignal,
    bounds: Option<&'a crate::adapt::GainBounds>,
    tol: Option<f64>,
    halvings: std::cell::Cell<usize>,
    unresolved: std::cell::Cell<usize>,
}

impl Stepper<'_> {
    /// Input inside the segment, using one-sided limits at its ends.
    fn input(&self, t: f64) -> DVector<f64> {
        let tol = 1e-12 * t.abs().max(1.0);
        if t >= self.t1 - tol {
            self.cl.input.eval_limit(t, Side::Left)
        } else if t <= self.t0 + tol {
            self.cl.input.eval_limit(t, Side::Right)
        } else {
            self.cl.input.eval(t)
        }
    }

    fn rhs(&self, t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        let (n, p) = (self.cl.n(), self.cl.p());
        let (x, xm, mut k) = unpack(y, n, p);
        if let Some(b) = self.bounds {
            // Stage states may overshoot a bound by O(dt); evaluate on the box.
            b.clip(&mut k);
        }
        let bound = if self.cl.uses_eps() {
            self.eps0.value_after(t - self.t0)
        } else {
            self.cl.performance.rho(t)
        };
        let r = self.input(t);
        let d = derivative_with_input(self.cl, t, &r, &x, &xm, &k, self.bounds, self.mode, bound)?;
        Ok(pack(&d.dx, &d.dxm, &d.dk))
    }

    fn rk4(&self, t: f64, y: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        let k1 = self.rhs(t, y)?;
        let k2 = self.rhs(t + 0.5 * h, &(y + &k1 * (0.5 * h)))?;
        let k3 = self.rhs(t + 0.5 * h, &(y + &k2 * (0.5 * h)))?;
        let k4 = self.rhs(t + h, &(y + &k3 * h))?;
        Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
    }

    fn inside_barrier(&self, t: f64, y: &DVector<f64>) -> bool {
        let (x, xm, _) = unpack(y, self.cl.n(), self.cl.p());
        let bound = if self.cl.uses_eps() {
            self.eps0.value_after(t - self.t0)
        } else {
            self.cl.performance.rho(t)
        };
        self.cl.e_norm(self.mode, &x, &xm) < bound
    }

    /// RK4 from the segment start over `h`. Each step is compared with two
    /// half steps; the step is halved recursively while they disagree by
    /// more than the tolerance or leave the barrier. The adaptation rate
    /// grows with `φ_d` and `‖x‖²`, so a fixed step can become unstable.
    fn advance(&self, y: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        self.advance_from(self.t0, y, h, 0)
    }

    fn attempt(&self, t: f64, y: &DVector<f64>, h: f64) -> Result<(DVector<f64>, bool)> {
        let full = self.rk4(t, y, h)?;
        let Some(tol) = self.tol else {
            let ok = self.inside_barrier(t + h, &full);
            return Ok((full, ok));
        };
        let half = 0.5 * h;
        let y_mid = self.rk4(t, y, half)?;
        if !self.inside_barrier(t + half, &y_mid) {
            return Ok((full, false));
        }
        let y2 = self.rk4(t + half, &y_mid, half)?;
        let err = full
            .iter()
            .zip(y2.iter())
            .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
            .fold(0.0, f64::max);
        let ok = err <= tol && self.inside_barrier(t + h, &y2);
        Ok((y2, ok))
    }

    fn advance_from(&self, t: f64, y: &DVector<f64>, h: f64, depth: u32) -> Result<DVector<f64>> {
        let attempt = self.attempt(t, y, h);
        match attempt {
            Ok((y1, true)) => return Ok(y1),
            Err(ref e) if !matches!(e, Error::BarrierViolated { .. } | Error::NearBarrier { .. }) => {
                return attempt.map(|a| a.0)
            }
            _ => {}
        }
        if depth >= MAX_REFINE {
            let (y1, _) = attempt?;
            if self.inside_barrier(t + h, &y1) {
                self.unresolved.set(self.unresolved.get() + 1);
                return Ok(y1);
            }
            let (x, xm, _) = unpack(&y1, self.cl.n(), self.cl.p());
            return Err(Error::BarrierViolated {
                t: t + h,
                e_norm: self.cl.e_norm(self.mode, &x, &xm),
                bound: if self.cl.uses_eps() {
                    self.eps0.value_after(t + h - self.t0)
                } else {
                    self.cl.performance.rho(t + h)
                },
            });
        }
        self.halvings.set(self.halvings.get() + 1);
        let half = 0.5 * h;
        let y_mid = self.advance_from(t, y, half, depth + 1)?;
        self.advance_from(t + half, &y_mid, half, depth + 1)
    }
}

/// Accumulates non-fatal findings during stepping.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub max_clip: f64,
    pub clip_events: usize,
    /// Steps redone as two half steps.
    pub halvings: usize,
    /// Steps accepted at the refinement limit above the tolerance.
    pub unresolved: usize,
    pub messages: Vec<String>,
}

/// Advances by at most `dt_max`. See [`step_to`].
pub fn step(
    cl: &ClosedLoop,
    state: &mut SimState,
    dt_max: f64,
    opts: &SimOptions,
    diag: &mut StepDiagnostics,
) -> Result<Vec<SwitchEvent>> {
    if !(dt_max > 0.0) {
        return Err(Error::Validation(format!("step size must be > 0 (got {dt_max})")));
    }
    let target = state.t + dt_max;
    step_to(cl, state, target, opts, diag)
}

/// Advances `state` to `t_target` with RK4, splitting the step at every
/// region exit located by bisection.
pub fn step_to(
    cl: &ClosedLoop,
    state: &mut SimState,
    t_target: f64,
    opts: &SimOptions,
    diag: &mut StepDiagnostics,
) -> Result<Vec<SwitchEvent>> {
    let (n, p) = (cl.n(), cl.p());
    let mut events = Vec::new();
    let min_h = 1e-14 * t_target.abs().max(1.0);
    while t_target - state.t > min_h {
        let seg_end = match cl.input.next_breakpoint(state.t) {
            Some(b) if b < t_target - min_h => b,
            _ => t_target,
        };
        let h = seg_end - state.t;
        let region = &cl.plant.regions()[state.mode];
        let bounds = state.gains.bounds.as_ref().map(|b| &b[state.mode]);
        let stepper = Stepper {
            cl,
            mode: state.mode,
            t0: state.t,
            t1: seg_end,
            eps0: state.eps,
            bounds,
            tol: opts.step_tol,
            halvings: std::cell::Cell::new(0),
            unresolved: std::cell::Cell::new(0),
        };
        let y0 = pack(&state.x, &state.xm, &state.gains.modes[state.mode]);
        let exit_residual = |y: &DVector<f64>, dt: f64| {
            let (x, _, k) = unpack(y, n, p);
            let u = control_output(&k, &x, &stepper.input(state.t + dt));
            let z = stack(&x, &u);
            (region.contains(&z), region.exit_residual(&z))
        };
        let y1 = stepper.advance(&y0, h)?;
        diag.halvings += stepper.halvings.get();
        diag.unresolved += stepper.unresolved.get();
        let (inside, _) = exit_residual(&y1, h);
        if inside {
            accept(cl, state, &y1, h, diag);
            state.t = seg_end;
            continue;
        }

        let (mut lo, mut hi) = (0.0, h);
        let mut y_hi = y1;
        let mut res_hi = exit_residual(&y_hi, hi).1;
        for _ in 0..200 {
            if res_hi.abs() < EVENT_TOL || hi - lo <= min_h {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let y_mid = stepper.advance(&y0, mid)?;
            let (inside, res) = exit_residual(&y_mid, mid);
            if inside {
                lo = mid;
            } else {
                hi = mid;
                y_hi = y_mid;
                res_hi = res;
            }
        }

        let from = state.mode;
        let eps_before = state.eps.advance(hi).eps;
        accept(cl, state, &y_hi, hi, diag);
        state.t += hi;
        let t = state.t;
        let bound_before = if cl.uses_eps() {
            eps_before
        } else {
            cl.performance.rho(t)
        };
        let e_before = cl.e_norm(from, &state.x, &state.xm);
        let phi_before = barrier_phi_at(e_before, bound_before, t)?.phi;

        let r = cl.input.eval(t);
        let u_prev = control_output(&state.gains.modes[from], &state.x, &r);
        let start = active_mode(&cl.plant, &state.x, &u_prev)?;
        let (to, _) = resolve_mode(cl, &state.gains, &state.x, &r, start)?;
        if to == from {
            diag.messages.push(format!(
                "t = {t:.9}: region exit without a mode change (residual {res_hi:.3e})"
            ));
            continue;
        }
        // Mode change first, then the reset, then the barrier check.
        state.mode = to;
        if cl.uses_eps() {
            state.eps = state.eps.reset();
        }
        let bound_after = cl.bound(&state.eps, t);
        let e_after = cl.e_norm(to, &state.x, &state.xm);
        let phi_after = barrier_phi_at(e_after, bound_after, t)?.phi;

        let dwell = t - state.last_switch_t;
        let dwell_violation = opts.tau_d.is_some_and(|tau| dwell < tau);
        if dwell_violation && opts.strict_dwell {
            return Err(Error::DwellViolated {
                t,
                dwell,
                tau_d: opts.tau_d.unwrap_or(f64::NAN),
            });
        }
        state.last_switch_t = t;
        state.switch_count += 1;
        events.push(SwitchEvent {
            t,
            from,
            to,
            dwell,
            dwell_violation,
            boundary_residual: res_hi,
            e_norm_before: e_before,
            e_norm_after: e_after,
            eps_before: bound_before,
            eps_after: bound_after,
            phi_before,
            phi_after,
        });
        if events.len() > opts.chatter_limit {
            return Err(Error::ChatterDetected {
                t,
                switches: events.len(),
            });
        }
    }
    Ok(events)
}

fn accept(cl: &ClosedLoop, state: &mut SimState, y: &DVector<f64>, h: f64, diag: &mut StepDiagnostics) {
    let (x, xm, mut k) = unpack(y, cl.n(), cl.p());
    if let Some(b) = state.gains.bounds.as_ref().map(|b| &b[state.mode]) {
        let clip = b.clip(&mut k);
        if clip > CLIP_TOL {
            diag.clip_events += 1;
        }
        diag.max_clip = diag.max_clip.max(clip);
    }
    state.x = x;
    state.xm = xm;
    state.gains.modes[state.mode] = k;
    if cl.uses_eps() {
        state.eps = state.eps.advance(h);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub xm: Vec<f64>,
    pub e_norm: f64,
    /// Active barrier bound: `ε`, or `ρ` under the common-P law.
    pub eps: f64,
    pub rho: f64,
    pub phi: f64,
    pub mode: usize,
    pub u: Vec<f64>,
    pub v: Option<f64>,
    pub v_theta: Option<f64>,
    /// All modes' gains, each flattened as in [`ModeGains::flatten`].
    pub gains: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DwellEntry {
    pub start: f64,
    pub end: f64,
    pub dwell: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DwellReport {
    pub entries: Vec<DwellEntry>,
    pub min_dwell: Option<f64>,
    pub violations: usize,
}

/// Dwell between consecutive instants in `times` compared with `tau_d`.
pub fn dwell_monitor(times: &[f64], tau_d: f64) -> DwellReport {
    let entries: Vec<DwellEntry> = times
        .windows(2)
        .map(|w| {
            let dwell = w[1] - w[0];
            DwellEntry {
                start: w[0],
                end: w[1],
                dwell,
                violation: dwell < tau_d,
            }
        })
        .collect();
    DwellReport {
        min_dwell: entries.iter().map(|e| e.dwell).reduce(f64::min),
        violations: entries.iter().filter(|e| e.violation).count(),
        entries,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub law: String,
    pub t_start: f64,
    pub t_reached: f64,
    pub samples: usize,
    pub max_e_norm: f64,
    /// `max ‖e‖_P / bound` over samples.
    pub max_ratio: f64,
    pub max_phi: f64,
    /// `min (bound − ‖e‖_P)`.
    pub min_barrier_margin: f64,
    /// `min (ρ − ε)`; absent under the common-P law.
    pub min_envelope_margin: Option<f64>,
    /// `min (ε − g/h)`; absent under the common-P law.
    pub min_floor_margin: Option<f64>,
    pub switch_count: usize,
    pub min_dwell: Option<f64>,
    pub tau_d: Option<f64>,
    pub dwell_violations: usize,
    /// `max (V(t_{k+1}) − V(t_k)) / (1 + V(t_k))` over sample pairs.
    pub v_max_increase: Option<f64>,
    /// Largest `φ_after − φ_before` across switches.
    pub switch_phi_increase: Option<f64>,
    pub max_clip: f64,
    pub clip_events: usize,
    pub halvings: usize,
    pub unresolved_steps: usize,
    pub failure: Option<String>,
    pub monitors_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryLog {
    pub n: usize,
    pub p: usize,
    pub modes: usize,
    pub samples: Vec<Sample>,
    pub events: Vec<SwitchEvent>,
    pub diagnostics: Vec<String>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub error: Error,
    /// Samples and events up to the failure.
    pub log: TrajectoryLog,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "simulation aborted at t = {}: {}",
            self.log.summary.t_reached, self.error
        )
    }
}

impl std::error::Error for RunFailure {}

struct Recorder {
    samples: Vec<Sample>,
    events: Vec<SwitchEvent>,
    diag: StepDiagnostics,
    floor: f64,
    max_ratio: f64,
    max_e: f64,
    max_phi: f64,
    min_barrier: f64,
    min_env: f64,
    min_floor: f64,
    v_inc: Option<f64>,
    last_v: Option<f64>,
}

impl Recorder {
    fn sample(&mut self, cl: &ClosedLoop, state: &SimState, opts: &SimOptions) -> Result<()> {
        let t = state.t;
        let r = cl.input.eval(t);
        let u = control_output(&state.gains.modes[state.mode], &state.x, &r);
        let e_norm = cl.e_norm(state.mode, &state.x, &state.xm);
        let bound = cl.bound(&state.eps, t);
        let rho = cl.performance.rho(t);
        let phi = barrier_phi_at(e_norm, bound, t)?.phi;
        let (v, v_theta) = if opts.record_v {
            let lv = lyapunov_v(cl.oracle.as_ref(), &state.gains, e_norm, bound)?;
            if let Some(prev) = self.last_v {
                let inc = (lv.v - prev) / (1.0 + prev);
                self.v_inc = Some(self.v_inc.map_or(inc, |m| m.max(inc)));
            }
            self.last_v = Some(lv.v);
            (Some(lv.v), Some(lv.v_theta))
        } else {
            (None, None)
        };
        self.max_ratio = self.max_ratio.max(e_norm / bound);
        self.max_e = self.max_e.max(e_norm);
        self.max_phi = self.max_phi.max(phi);
        self.min_barrier = self.min_barrier.min(bound - e_norm);
        if cl.uses_eps() {
            self.min_env = self.min_env.min(rho - state.eps.eps);
            self.min_floor = self.min_floor.min(state.eps.eps - self.floor);
        }
        self.samples.push(Sample {
            t,
            x: state.x.iter().copied().collect(),
            xm: state.xm.iter().copied().collect(),
            e_norm,
            eps: bound,
            rho,
            phi,
            mode: state.mode,
            u: u.iter().copied().collect(),
            v,
            v_theta,
            gains: opts
                .record_gains
                .then(|| state.gains.modes.iter().flat_map(|g| g.flatten()).collect()),
        });
        Ok(())
    }

    fn finish(
        self,
        cl: &ClosedLoop,
        state: &SimState,
        opts: &SimOptions,
        t_start: f64,
        failure: Option<&Error>,
    ) -> TrajectoryLog {
        let mut times = vec![t_start];
        times.extend(self.events.iter().map(|e| e.t));
        let dwell = dwell_monitor(&times, opts.tau_d.unwrap_or(f64::NEG_INFINITY));
        let uses_eps = cl.uses_eps();
        let switch_phi_increase = self.events.iter().map(|e| e.phi_after - e.phi_before).reduce(f64::max);
        let mut summary = Summary {
            law: cl.law.as_str().into(),
            t_start,
            t_reached: state.t,
            samples: self.samples.len(),
            max_e_norm: self.max_e,
            max_ratio: self.max_ratio,
            max_phi: self.max_phi,
            min_barrier_margin: self.min_barrier,
            min_envelope_margin: uses_eps.then_some(self.min_env),
            min_floor_margin: uses_eps.then_some(self.min_floor),
            switch_count: self.events.len(),
            min_dwell: dwell.min_dwell,
            tau_d: opts.tau_d,
            dwell_violations: dwell.violations,
            v_max_increase: self.v_inc,
            switch_phi_increase,
            max_clip: self.diag.max_clip,
            clip_events: self.diag.clip_events,
            halvings: self.diag.halvings,
            unresolved_steps: self.diag.unresolved,
            failure: failure.map(|e| e.to_string()),
            monitors_passed: false,
        };
        summary.monitors_passed = summary.failure.is_none()
            && summary.max_ratio < 1.0
            && summary.min_envelope_margin.is_none_or(|m| m > 0.0)
            && summary.min_floor_margin.is_none_or(|m| m >= -1e-12)
            && summary.dwell_violations == 0
            && summary.v_max_increase.is_none_or(|v| v <= V_TOL)
            && summary.switch_phi_increase.is_none_or(|v| v <= V_TOL);
        TrajectoryLog {
            n: cl.n(),
            p: cl.p(),
            modes: cl.plant.modes(),
            samples: self.samples,
            events: self.events,
            diagnostics: self.diag.messages,
            summary,
        }
    }
}

/// Simulates from `state` to `opts.t_end` on the grid `t0 + k dt`, sampling
/// every `round(dt_out/dt)` steps.
pub fn run(cl: &ClosedLoop, mut state: SimState, opts: &SimOptions) -> std::result::Result<TrajectoryLog, RunFailure> {
    let t_start = state.t;
    let mut rec = Recorder {
        samples: Vec::new(),
        events: Vec::new(),
        diag: StepDiagnostics::default(),
        floor: state.eps.floor(),
        max_ratio: 0.0,
        max_e: 0.0,
        max_phi: 0.0,
        min_barrier: f64::INFINITY,
        min_env: f64::INFINITY,
        min_floor: f64::INFINITY,
        v_inc: None,
        last_v: None,
    };
    let result = run_inner(cl, &mut state, opts, &mut rec, t_start);
    match result {
        Ok(()) => Ok(rec.finish(cl, &state, opts, t_start, None)),
        Err(error) => {
            let log = rec.finish(cl, &state, opts, t_start, Some(&error));
            Err(RunFailure { error, log })
        }
    }
}

fn run_inner(cl: &ClosedLoop, state: &mut SimState, opts: &SimOptions, rec: &mut Recorder, t_start: f64) -> Result<()> {
    if !(opts.dt > 0.0) || !(opts.dt_out > 0.0) {
        return Err(Error::Validation("dt and dt_out must be > 0".into()));
    }
    if !(opts.t_end >= t_start) {
        return Err(Error::Validation(format!(
            "t_end = {} precedes t0 = {t_start}",
            opts.t_end
        )));
    }
    let steps = ((opts.t_end - t_start) / opts.dt).round() as u64;
    let every = ((opts.dt_out / opts.dt).round() as u64).max(1);
    rec.sample(cl, state, opts)?;
    for k in 1..=steps {
        let target = t_start + k as f64 * opts.dt;
        let events = step_to(cl, state, target, opts, &mut rec.diag)?;
        rec.events.extend(events);
        if k % every == 0 || k == steps {
            rec.sample(cl, state, opts)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pwa::{Affine, Halfspace, Region};
    use approx::assert_relative_eq;

    /// `ẋ = u` with `u = 1` (through `K_f`) crossing `x = 1` at `t = 1 - x0`.
    fn line() -> ClosedLoop {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let sub = Affine::new(one(0.0), one(1.0), DVector::zeros(1)).unwrap();
        let below = Region::new(vec![
            Halfspace::new(DVector::from_vec(vec![1.0, 0.0]), 1.0, false).unwrap()
        ])
        .unwrap();
        let above = Region::new(vec![
            Halfspace::new(DVector::from_vec(vec![-1.0, 0.0]), -1.0, true).unwrap()
        ])
        .unwrap();
        let plant = PwaPlant::new(vec![sub.clone(), sub], vec![below, above]).unwrap();
        let rsub = Affine::new(one(-1.0), one(1.0), DVector::zeros(1)).unwrap();
        let reference = ReferenceModel::new(vec![rsub.clone(), rsub]).unwrap();
        ClosedLoop::new(
            plant,
            reference,
            AdaptationLaw::Nominal,
            vec![one(1.0), one(1.0)],
            vec![one(0.0), one(0.0)],
            PerformanceSpec::new(100.0, 50.0, 0.01, 0.0).unwrap(),
            InputSignal {
                channels: vec![Default::default()],
            },
            Disturbance::none(1),
        )
        .unwrap()
    }

    fn line_state(cl: &ClosedLoop, x0: f64) -> SimState {
        let g = ModeGains {
            kx: DMatrix::zeros(1, 1),
            kr: DMatrix::zeros(1, 1),
            kf: DVector::from_element(1, 1.0),
        };
        let eps = AuxiliarySignal::new(90.0, 0.1, 0.1, 1.0).unwrap();
        SimState::initial(
            cl,
            0.0,
            DVector::from_element(1, x0),
            DVector::from_element(1, x0),
            GainState::new(vec![g.clone(), g]),
            eps,
        )
        .unwrap()
    }

    #[test]
    fn plain_step_has_no_events() {
        let cl = line();
        let mut s = line_state(&cl, 0.0);
        let mut diag = StepDiagnostics::default();
        let ev = step(&cl, &mut s, 0.1, &SimOptions::default(), &mut diag).unwrap();
        assert!(ev.is_empty());
        assert_relative_eq!(s.x[0], 0.1, epsilon = 1e-14);
    }

    #[test]
    fn crossing_time_matches_linear_motion() {
        let cl = line();
        let x0 = 0.123_456_789;
        let mut s = line_state(&cl, x0);
        let mut diag = StepDiagnostics::default();
        let ev = step(&cl, &mut s, 1.0, &SimOptions::default(), &mut diag).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].from, ev[0].to), (0, 1));
        assert!((ev[0].t - (1.0 - x0)).abs() < 1e-8);
        assert!(ev[0].boundary_residual.abs() < 1e-8);
        assert_relative_eq!(s.t, 1.0, epsilon = 1e-14);
        assert_relative_eq!(s.x[0], 1.0 + x0, epsilon = 1e-12);
    }

    #[test]
    fn dwell_monitor_examples() {
        assert!(dwell_monitor(&[], 24.05).entries.is_empty());
        let r = dwell_monitor(&[25.0, 50.0], 24.05);
        assert_eq!(r.entries.len(), 1);
        assert_relative_eq!(r.entries[0].dwell, 25.0);
        assert_eq!(r.violations, 0);
        let r = dwell_monitor(&[10.0, 20.0], 24.05);
        assert_eq!(r.violations, 1);
    }

    #[test]
    fn zero_length_run_has_one_sample() {
        let cl = line();
        let s = line_state(&cl, 0.0);
        let opts = SimOptions {
            t_end: 0.0,
            ..Default::default()
        };
        let log = run(&cl, s, &opts).unwrap();
        assert_eq!(log.samples.len(), 1);
        assert!(log.events.is_empty());
    }

    #[test]
    fn pack_roundtrip() {
        let g = ModeGains {
            kx: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            kr: DMatrix::from_row_slice(2, 2, &[7.0, 8.0, 9.0, 10.0]),
            kf: DVector::from_vec(vec![11.0, 12.0]),
        };
        let x = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let xm = DVector::from_vec(vec![0.4, 0.5, 0.6]);
        let (x2, xm2, g2) = unpack(&pack(&x, &xm, &g), 3, 2);
        assert_eq!((x2, xm2, g2), (x, xm, g));
    }
}
