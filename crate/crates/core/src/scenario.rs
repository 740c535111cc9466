//! JSON scenario files: one document fully determines a certification or a
//! simulation run. Matrices are nested arrays in row-major order.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptationLaw, GainBounds, GainState, GainStructure, ModeGains, Oracle};
use crate::certify::{check_corollary_common_p, check_theorem1, check_theorem2, Certificate, DesignParams, Verdict};
use crate::envelope::{default_eps0, AuxiliarySignal, PerformanceSpec};
use crate::error::{Error, Result};
use crate::mass_spring;
use crate::pwa::{
    matching_gains, validate_partition, Affine, Halfspace, NominalGains, PwaPlant, ReferenceModel, Region, MATCHING_TOL,
};
use crate::signal::{Channel, Disturbance, DisturbanceKind, DisturbanceSpec, InputSignal, Schedule, Sinusoid, Window};
use crate::sim::{ClosedLoop, SimOptions, SimState, DEFAULT_CHATTER_LIMIT, DEFAULT_STEP_TOL};

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineSpec {
    pub a: Matrix,
    pub b: Matrix,
    pub f: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceSpec {
    /// Coefficients over `[x; u]`.
    pub normal: Vec<f64>,
    pub offset: f64,
    #[serde(default)]
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub halfspaces: Vec<HalfspaceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub subsystems: Vec<AffineSpec>,
    pub regions: Vec<RegionSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub subsystems: Vec<AffineSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSpec {
    pub h: f64,
    pub g: f64,
    /// Defaults to the midpoint of `(g/h, ρ0)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    pub kx: Matrix,
    pub kr: Matrix,
    pub kf: Vec<f64>,
}

/// `S_i = γ (K_ri*)⁻¹` (needs a matchable plant) or explicit matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StructureSpec {
    Gamma(f64),
    Explicit(Vec<Matrix>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialGainsSpec {
    /// A multiple of the matching gains; synthetic, since it uses `K*`.
    MatchingFraction(f64),
    Explicit(Vec<GainsSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: GainsSpec,
    pub hi: GainsSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundsSpec {
    /// `K* ± (rel |K*| + abs)` entry-wise; synthetic, since it uses `K*`.
    AroundMatching {
        rel: f64,
        abs: f64,
    },
    Explicit(Vec<BoxSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub x0: Vec<f64>,
    pub xm0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSpec {
    pub dt: f64,
    pub dt_out: f64,
    pub t_end: f64,
    #[serde(default = "default_chatter")]
    pub chatter_limit: usize,
    /// Step-doubling tolerance; `null` disables step refinement.
    #[serde(default = "default_step_tol")]
    pub step_tol: Option<f64>,
}

fn default_chatter() -> usize {
    DEFAULT_CHATTER_LIMIT
}

fn default_step_tol() -> Option<f64> {
    Some(DEFAULT_STEP_TOL)
}

/// Box over `[x; u]` sampled to check that the regions partition it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionCheckSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub plant: PlantSpec,
    pub reference: ReferenceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_list: Option<Vec<Matrix>>,
    pub performance: PerformanceSpec,
    pub envelope: EnvelopeSpec,
    pub law: LawSpec,
    pub gain_structure: StructureSpec,
    pub initial_gains: InitialGainsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSpec>,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    pub input: InputSignal,
    pub initial: InitialSpec,
    pub integration: IntegrationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition_check: Option<PartitionCheckSpec>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawSpec {
    Nominal,
    CommonP,
    Robust,
}

impl From<LawSpec> for AdaptationLaw {
    fn from(l: LawSpec) -> Self {
        match l {
            LawSpec::Nominal => AdaptationLaw::Nominal,
            LawSpec::CommonP => AdaptationLaw::CommonP,
            LawSpec::Robust => AdaptationLaw::Robust,
        }
    }
}

impl Serialize for PerformanceSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PerformanceRepr {
            rho0: self.rho0,
            rho_inf: self.rho_inf,
            l: self.l,
            t0: self.t0,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PerformanceSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PerformanceRepr::deserialize(d)?;
        PerformanceSpec::new(r.rho0, r.rho_inf, r.l, r.t0).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerformanceRepr {
    rho0: f64,
    rho_inf: f64,
    l: f64,
    #[serde(default)]
    t0: f64,
}

fn matrix(m: &Matrix, what: &str) -> Result<DMatrix<f64>> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if m.iter().any(|r| r.len() != cols) {
        return Err(Error::Validation(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_row_iterator(rows, cols, m.iter().flatten().copied()))
}

pub fn to_rows(m: &DMatrix<f64>) -> Matrix {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn affine(s: &AffineSpec, what: &str) -> Result<Affine> {
    Affine::new(
        matrix(&s.a, &format!("{what}.a"))?,
        matrix(&s.b, &format!("{what}.b"))?,
        DVector::from_column_slice(&s.f),
    )
    .map_err(|e| Error::Validation(format!("{what}: {e}")))
}

fn affine_spec(a: &Affine) -> AffineSpec {
    AffineSpec {
        a: to_rows(&a.a),
        b: to_rows(&a.b),
        f: a.f.iter().copied().collect(),
    }
}

fn gains(g: &GainsSpec, n: usize, p: usize, what: &str) -> Result<ModeGains> {
    let out = ModeGains {
        kx: matrix(&g.kx, &format!("{what}.kx"))?,
        kr: matrix(&g.kr, &format!("{what}.kr"))?,
        kf: DVector::from_column_slice(&g.kf),
    };
    if out.kx.shape() != (p, n) || out.kr.shape() != (p, p) || out.kf.len() != p {
        return Err(Error::Validation(format!(
            "{what}: expected kx {p}x{n}, kr {p}x{p}, kf {p}"
        )));
    }
    Ok(out)
}

pub fn gains_spec(g: &ModeGains) -> GainsSpec {
    GainsSpec {
        kx: to_rows(&g.kx),
        kr: to_rows(&g.kr),
        kf: g.kf.iter().copied().collect(),
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn plant(&self) -> Result<PwaPlant> {
        let subs = self
            .plant
            .subsystems
            .iter()
            .enumerate()
            .map(|(i, s)| affine(s, &format!("plant.subsystems[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let regions = self
            .plant
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let hs = r
                    .halfspaces
                    .iter()
                    .map(|h| Halfspace::new(DVector::from_column_slice(&h.normal), h.offset, h.strict))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::Validation(format!("plant.regions[{i}]: {e}")))?;
                Region::new(hs).map_err(|e| Error::Validation(format!("plant.regions[{i}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        PwaPlant::new(subs, regions).map_err(|e| Error::Validation(format!("plant: {e}")))
    }

    pub fn reference(&self) -> Result<ReferenceModel> {
        let subs = self
            .reference
            .subsystems
            .iter()
            .enumerate()
            .map(|(i, s)| affine(s, &format!("reference.subsystems[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        ReferenceModel::new(subs)
    }

    pub fn q_list(&self) -> Result<Vec<DMatrix<f64>>> {
        let q = self
            .q_list
            .as_ref()
            .ok_or_else(|| Error::Validation("q_list is missing".into()))?;
        q.iter()
            .enumerate()
            .map(|(i, m)| matrix(m, &format!("q_list[{i}]")))
            .collect()
    }

    pub fn design(&self) -> DesignParams {
        DesignParams {
            h: self.envelope.h,
            g: self.envelope.g,
            l: self.performance.l,
            rho_inf: self.performance.rho_inf,
        }
    }

    /// Structural checks that need no matrix factorization.
    pub fn validate(&self) -> Result<()> {
        let plant = self.plant()?;
        let reference = self.reference()?;
        let (n, p, s) = (plant.n(), plant.p(), plant.modes());
        if reference.n() != n || reference.p() != p {
            return Err(Error::Validation(format!(
                "reference model is {}x{}, plant is {n}x{p}",
                reference.n(),
                reference.p()
            )));
        }
        if reference.modes() != s {
            return Err(Error::Validation(format!(
                "reference model has {} modes, plant has {s}",
                reference.modes()
            )));
        }
        let q = self.q_list()?;
        if q.len() != s || q.iter().any(|m| m.shape() != (n, n)) {
            return Err(Error::Validation(format!(
                "q_list must hold {s} matrices of size {n}x{n}"
            )));
        }
        let EnvelopeSpec { h, g, eps0 } = self.envelope;
        if !(h > 0.0 && g > 0.0) {
            return Err(Error::Validation("envelope needs h > 0 and g > 0".into()));
        }
        if let Some(e) = eps0 {
            if !(e > g / h && e < self.performance.rho0) {
                return Err(Error::Validation(format!(
                    "eps0 = {e} must lie in (g/h, rho0) = ({}, {})",
                    g / h,
                    self.performance.rho0
                )));
            }
        }
        match &self.gain_structure {
            StructureSpec::Gamma(gm) if !(*gm > 0.0) => {
                return Err(Error::Validation("gain_structure.gamma must be > 0".into()));
            }
            StructureSpec::Explicit(list) => {
                if list.len() != s {
                    return Err(Error::Validation(format!("gain_structure needs {s} matrices")));
                }
                for (i, m) in list.iter().enumerate() {
                    if matrix(m, "gain_structure")?.shape() != (p, p) {
                        return Err(Error::Validation(format!("gain_structure[{i}] must be {p}x{p}")));
                    }
                }
            }
            _ => {}
        }
        if let InitialGainsSpec::Explicit(list) = &self.initial_gains {
            if list.len() != s {
                return Err(Error::Validation(format!("initial_gains needs {s} entries")));
            }
            for (i, g) in list.iter().enumerate() {
                gains(g, n, p, &format!("initial_gains[{i}]"))?;
            }
        }
        if self.law == LawSpec::Robust && self.bounds.is_none() {
            return Err(Error::Validation("the robust law requires bounds".into()));
        }
        if let Some(BoundsSpec::Explicit(list)) = &self.bounds {
            if list.len() != s {
                return Err(Error::Validation(format!("bounds needs {s} entries")));
            }
        }
        if self.input.p() != p {
            return Err(Error::Validation(format!(
                "input has {} channels, plant has {p} inputs",
                self.input.p()
            )));
        }
        self.input.validate()?;
        Disturbance::new(self.disturbance.clone(), n)?;
        if self.initial.x0.len() != n || self.initial.xm0.len() != n {
            return Err(Error::Validation(format!("initial states need {n} entries")));
        }
        let IntegrationSpec { dt, dt_out, t_end, .. } = self.integration;
        if !(dt > 0.0 && dt_out > 0.0 && t_end >= self.performance.t0) {
            return Err(Error::Validation(
                "integration needs dt > 0, dt_out > 0, t_end >= t0".into(),
            ));
        }
        if self.integration.step_tol.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Validation("integration.step_tol must be > 0 or null".into()));
        }
        if let Some(pc) = &self.partition_check {
            if pc.lo.len() != n + p || pc.hi.len() != n + p {
                return Err(Error::Validation(format!(
                    "partition_check box needs {} coordinates",
                    n + p
                )));
            }
        }
        Ok(())
    }

    /// Applies a scalar override used by `--set` and sweeps.
    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        match key {
            "h" => self.envelope.h = value,
            "g" => self.envelope.g = value,
            "l" => self.performance.l = value,
            "rho0" => self.performance.rho0 = value,
            "rho_inf" => self.performance.rho_inf = value,
            "eps0" => self.envelope.eps0 = Some(value),
            "d_bar" => self.disturbance.d_bar = value,
            "gamma" => self.gain_structure = StructureSpec::Gamma(value),
            "dt" => self.integration.dt = value,
            "dt_out" => self.integration.dt_out = value,
            "t_end" => self.integration.t_end = value,
            "step_tol" => self.integration.step_tol = (value > 0.0).then_some(value),
            "seed" => {
                self.seed = value as u64;
                if let DisturbanceKind::BoundedRandom { seed, .. } = &mut self.disturbance.kind {
                    *seed = value as u64;
                }
            }
            _ => {
                return Err(Error::Validation(format!(
                    "unknown parameter `{key}` (expected h, g, l, rho0, rho_inf, eps0, d_bar, gamma, dt, dt_out, t_end, seed, step_tol)"
                )))
            }
        }
        Ok(())
    }
}

/// Echo of every certificate-relevant quantity after normalization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizationReport {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub modes: usize,
    pub law: String,
    pub h: f64,
    pub g: f64,
    pub l: f64,
    pub rho0: f64,
    pub rho_inf: f64,
    pub eps0: f64,
    pub d_bar: f64,
    pub matching_residuals: Option<Vec<[f64; 3]>>,
    pub p_matrices: Vec<Matrix>,
    pub mu: f64,
    pub sqrt_mu: f64,
    pub alpha_m: f64,
    pub tau_d: Option<f64>,
    pub reference_dwell: f64,
    pub partition_uncovered: Option<usize>,
    pub partition_overlapping: Option<usize>,
    pub notes: Vec<String>,
}

/// Everything a run or a certification needs, derived from a [`Scenario`].
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub plant: PwaPlant,
    pub reference: ReferenceModel,
    pub nominal: Option<NominalGains>,
    pub certificate: Certificate,
    /// Common `P` under the common-P law.
    pub common_p: Option<DMatrix<f64>>,
    pub verdict: Verdict,
    pub report: NormalizationReport,
}

impl Prepared {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let plant = scenario.plant()?;
        let reference = scenario.reference()?;
        let q_list = scenario.q_list()?;
        let design = scenario.design();
        let law: AdaptationLaw = scenario.law.into();
        let mut notes = Vec::new();

        let nominal = match matching_gains(&plant, &reference, MATCHING_TOL) {
            Ok(n) => Some(n),
            Err(e) => {
                notes.push(format!("matching gains unavailable: {e}"));
                None
            }
        };
        let needs_nominal = matches!(scenario.gain_structure, StructureSpec::Gamma(_))
            || matches!(scenario.initial_gains, InitialGainsSpec::MatchingFraction(_))
            || matches!(scenario.bounds, Some(BoundsSpec::AroundMatching { .. }));
        if needs_nominal && nominal.is_none() {
            return Err(Error::Validation(
                "the scenario derives gains from the matching gains, but the plant is not matchable".into(),
            ));
        }
        if matches!(scenario.initial_gains, InitialGainsSpec::MatchingFraction(_)) {
            notes.push("initial gains derived from the matching gains (synthetic benchmark)".into());
        }

        let robust = law == AdaptationLaw::Robust;
        let certificate = Certificate::build(&reference, &q_list, robust, design)?;
        let (verdict, common_p) = match law {
            AdaptationLaw::Nominal => (check_theorem1(&certificate, &design), None),
            AdaptationLaw::Robust => (check_theorem2(&certificate, &design, scenario.disturbance.d_bar), None),
            AdaptationLaw::CommonP => {
                let (p, v) = check_corollary_common_p(&reference, &q_list, design.l)?;
                (v, Some(p))
            }
        };

        let eps0 = match scenario.envelope.eps0 {
            Some(e) => e,
            None => {
                let e0 = DVector::from_column_slice(&scenario.initial.x0)
                    - DVector::from_column_slice(&scenario.initial.xm0);
                let w = common_p.as_ref().unwrap_or(&certificate.p_list[0]);
                let e_norm = crate::pwa::quad_form(&e0, w).max(0.0).sqrt();
                default_eps0(design.g, design.h, scenario.performance.rho0, e_norm)?
            }
        };

        let (uncovered, overlapping) = match &scenario.partition_check {
            Some(pc) => {
                let rep = validate_partition(&plant, &pc.lo, &pc.hi, pc.samples, scenario.seed)?;
                if !rep.is_partition() {
                    notes.push(format!(
                        "regions do not partition the checked box: {} uncovered, {} overlapping samples",
                        rep.uncovered, rep.overlapping
                    ));
                }
                (Some(rep.uncovered), Some(rep.overlapping))
            }
            None => (None, None),
        };

        let report = NormalizationReport {
            name: scenario.name.clone(),
            n: plant.n(),
            p: plant.p(),
            modes: plant.modes(),
            law: law.as_str().into(),
            h: design.h,
            g: design.g,
            l: design.l,
            rho0: scenario.performance.rho0,
            rho_inf: design.rho_inf,
            eps0,
            d_bar: scenario.disturbance.d_bar,
            matching_residuals: nominal
                .as_ref()
                .map(|n| n.residuals.iter().map(|r| [r.state, r.input, r.offset]).collect()),
            p_matrices: certificate.p_list.iter().map(to_rows).collect(),
            mu: certificate.mu,
            sqrt_mu: certificate.sqrt_mu,
            alpha_m: certificate.alpha_m,
            tau_d: certificate.tau_d,
            reference_dwell: certificate.reference_dwell(),
            partition_uncovered: uncovered,
            partition_overlapping: overlapping,
            notes,
        };
        Ok(Self {
            scenario: scenario.clone(),
            plant,
            reference,
            nominal,
            certificate,
            common_p,
            verdict,
            report,
        })
    }

    pub fn law(&self) -> AdaptationLaw {
        self.scenario.law.into()
    }

    pub fn gain_structure(&self) -> Result<GainStructure> {
        match &self.scenario.gain_structure {
            StructureSpec::Gamma(g) => {
                GainStructure::from_nominal(self.nominal.as_ref().ok_or(Error::OracleUnavailable)?, *g)
            }
            StructureSpec::Explicit(list) => Ok(GainStructure::new(
                list.iter()
                    .map(|m| matrix(m, "gain_structure"))
                    .collect::<Result<_>>()?,
            )),
        }
    }

    pub fn initial_gains(&self) -> Result<GainState> {
        let (n, p) = (self.plant.n(), self.plant.p());
        let modes = match &self.scenario.initial_gains {
            InitialGainsSpec::MatchingFraction(k) => self
                .nominal
                .as_ref()
                .ok_or(Error::OracleUnavailable)?
                .modes
                .iter()
                .map(|g| g.scaled(*k))
                .collect(),
            InitialGainsSpec::Explicit(list) => list
                .iter()
                .enumerate()
                .map(|(i, g)| gains(g, n, p, &format!("initial_gains[{i}]")))
                .collect::<Result<Vec<_>>>()?,
        };
        let state = GainState::new(modes);
        match &self.scenario.bounds {
            None => Ok(state),
            Some(b) => state.with_bounds(self.bounds(b)?),
        }
    }

    fn bounds(&self, spec: &BoundsSpec) -> Result<Vec<GainBounds>> {
        let (n, p) = (self.plant.n(), self.plant.p());
        match spec {
            BoundsSpec::AroundMatching { rel, abs } => Ok(self
                .nominal
                .as_ref()
                .ok_or(Error::OracleUnavailable)?
                .modes
                .iter()
                .map(|k| GainBounds::around(k, *rel, *abs))
                .collect()),
            BoundsSpec::Explicit(list) => list
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    Ok(GainBounds {
                        lo: gains(&b.lo, n, p, &format!("bounds[{i}].lo"))?,
                        hi: gains(&b.hi, n, p, &format!("bounds[{i}].hi"))?,
                    })
                })
                .collect(),
        }
    }

    /// Weighting matrices used by the barrier, one per mode.
    pub fn weights(&self) -> Vec<DMatrix<f64>> {
        match &self.common_p {
            Some(p) => vec![p.clone(); self.plant.modes()],
            None => self.certificate.p_list.clone(),
        }
    }

    /// Closed loop plus the initial state. With `with_oracle` the matching
    /// gains and `M_i` are attached for Lyapunov monitoring.
    pub fn closed_loop(&self, with_oracle: bool) -> Result<(ClosedLoop, SimState)> {
        let sc = &self.scenario;
        let structure = self.gain_structure()?;
        let mut cl = ClosedLoop::new(
            self.plant.clone(),
            self.reference.clone(),
            self.law(),
            self.weights(),
            structure.s_list.clone(),
            sc.performance,
            sc.input.clone(),
            Disturbance::new(sc.disturbance.clone(), self.plant.n())?,
        )?;
        if with_oracle {
            let nominal = self.nominal.clone().ok_or(Error::OracleUnavailable)?;
            let structure = structure.with_oracle(&nominal, self.law() == AdaptationLaw::Robust)?;
            cl = cl.with_oracle(Oracle::from_structure(nominal, &structure)?);
        }
        let eps = AuxiliarySignal::new(self.report.eps0, sc.envelope.h, sc.envelope.g, self.certificate.sqrt_mu)?;
        let state = SimState::initial(
            &cl,
            sc.performance.t0,
            DVector::from_column_slice(&sc.initial.x0),
            DVector::from_column_slice(&sc.initial.xm0),
            self.initial_gains()?,
            eps,
        )?;
        Ok((cl, state))
    }

    pub fn sim_options(&self) -> SimOptions {
        let i = &self.scenario.integration;
        SimOptions {
            dt: i.dt,
            dt_out: i.dt_out,
            t_end: i.t_end,
            chatter_limit: i.chatter_limit,
            strict_dwell: false,
            tau_d: if self.law() == AdaptationLaw::CommonP {
                None
            } else {
                self.certificate.tau_d
            },
            record_gains: false,
            record_v: false,
            step_tol: i.step_tol,
        }
    }
}

/// The two-mass spring-damper example with its reference design values.
pub fn paper_example() -> Scenario {
    let plant = mass_spring::plant();
    let reference = mass_spring::reference();
    let regions = plant
        .regions()
        .iter()
        .map(|r| RegionSpec {
            halfspaces: r
                .halfspaces()
                .iter()
                .map(|h| HalfspaceSpec {
                    normal: h.normal.iter().copied().collect(),
                    offset: h.offset,
                    strict: h.strict,
                })
                .collect(),
        })
        .collect();
    Scenario {
        name: "two-mass spring-damper with piecewise linear spring".into(),
        plant: PlantSpec {
            subsystems: plant.subsystems().iter().map(affine_spec).collect(),
            regions,
        },
        reference: ReferenceSpec {
            subsystems: reference.subsystems().iter().map(affine_spec).collect(),
        },
        q_list: Some(mass_spring::q_list().iter().map(to_rows).collect()),
        performance: PerformanceSpec::new(mass_spring::RHO0, mass_spring::RHO_INF, mass_spring::L, 0.0)
            .expect("valid bound"),
        envelope: EnvelopeSpec {
            h: mass_spring::H,
            g: mass_spring::G,
            eps0: Some(mass_spring::EPS0),
        },
        law: LawSpec::Nominal,
        gain_structure: StructureSpec::Gamma(mass_spring::ADAPTATION_GAIN),
        initial_gains: InitialGainsSpec::MatchingFraction(mass_spring::INITIAL_GAIN_FRACTION),
        bounds: None,
        disturbance: DisturbanceSpec::default(),
        input: InputSignal {
            channels: vec![
                Channel {
                    sinusoids: vec![Sinusoid {
                        amplitude: 0.3,
                        frequency: 0.5,
                        phase: std::f64::consts::PI,
                    }],
                    ..Default::default()
                },
                Channel {
                    schedule: Some(Schedule {
                        period: mass_spring::INPUT_PERIOD,
                        windows: vec![
                            Window {
                                value: 2.0,
                                start: 25.0,
                                end: 50.0,
                            },
                            Window {
                                value: -2.0,
                                start: 75.0,
                                end: 100.0,
                            },
                        ],
                    }),
                    ..Default::default()
                },
            ],
        },
        initial: InitialSpec {
            x0: vec![0.0; 4],
            xm0: vec![0.0; 4],
        },
        integration: IntegrationSpec {
            dt: 1e-3,
            dt_out: 0.01,
            t_end: 200.0,
            chatter_limit: DEFAULT_CHATTER_LIMIT,
            step_tol: Some(DEFAULT_STEP_TOL),
        },
        partition_check: Some(PartitionCheckSpec {
            lo: vec![-5.0; 6],
            hi: vec![5.0; 6],
            samples: 10_000,
        }),
        seed: 0,
    }
}

/// Robust variant of [`paper_example`]: projection bounds around the
/// matching gains and a seeded bounded-random disturbance. The square wave
/// is stretched from 100 s to 110 s so switches respect the larger dwell bound of the
/// shifted Lyapunov matrices.
pub fn robust_example(seed: u64, d_bar: f64) -> Scenario {
    let mut sc = paper_example();
    sc.name = "two-mass spring-damper, robust law".into();
    sc.law = LawSpec::Robust;
    sc.bounds = Some(BoundsSpec::AroundMatching { rel: 0.6, abs: 0.1 });
    sc.disturbance = DisturbanceSpec {
        kind: DisturbanceKind::BoundedRandom { seed, hold: 0.5 },
        d_bar,
    };
    sc.seed = seed;
    sc.input.channels[1].schedule = Some(Schedule {
        period: 110.0,
        windows: vec![
            Window {
                value: 2.0,
                start: 27.5,
                end: 55.0,
            },
            Window {
                value: -2.0,
                start: 82.5,
                end: 110.0,
            },
        ],
    });
    sc
}
