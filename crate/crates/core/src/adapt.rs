//! Adaptive controller output and the adaptation laws: nominal, common
//! Lyapunov matrix, and robust with element-wise projection.

use nalgebra::{DMatrix, DVector};

use crate::envelope::barrier_phi;
use crate::error::{Error, Result};
use crate::linalg::is_spd;
pub use crate::pwa::ModeGains;
use crate::pwa::NominalGains;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptationLaw {
    Nominal,
    CommonP,
    Robust,
}

impl AdaptationLaw {
    pub fn as_str(&self) -> &'static str {
        match self {
            AdaptationLaw::Nominal => "nominal",
            AdaptationLaw::CommonP => "common_p",
            AdaptationLaw::Robust => "robust",
        }
    }
}

/// Known gain-structure matrices `S_i`, and when the true gains are known,
/// `M_i = (K_ri* S_i)⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainStructure {
    pub s_list: Vec<DMatrix<f64>>,
    pub m_list: Option<Vec<DMatrix<f64>>>,
}

impl GainStructure {
    pub fn new(s_list: Vec<DMatrix<f64>>) -> Self {
        Self { s_list, m_list: None }
    }

    /// `S_i = γ (K_ri*)⁻¹`, which makes `M_i = I/γ`.
    pub fn from_nominal(nominal: &NominalGains, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::Validation(format!("adaptation gain must be > 0 (got {gamma})")));
        }
        let s_list = nominal
            .modes
            .iter()
            .enumerate()
            .map(|(i, k)| {
                k.kr.clone()
                    .try_inverse()
                    .map(|inv| inv * gamma)
                    .ok_or_else(|| Error::Validation(format!("K_r{}* is singular", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { s_list, m_list: None })
    }

    /// Computes `M_i = (K_ri* S_i)⁻¹` and checks it is SPD, or diagonal with a
    /// positive diagonal when `robust`.
    pub fn with_oracle(mut self, nominal: &NominalGains, robust: bool) -> Result<Self> {
        if nominal.modes.len() != self.s_list.len() {
            return Err(Error::Dimension("S list and nominal gains differ in length".into()));
        }
        let mut m_list = Vec::with_capacity(self.s_list.len());
        for (i, (s, k)) in self.s_list.iter().zip(&nominal.modes).enumerate() {
            let m = (&k.kr * s)
                .try_inverse()
                .ok_or_else(|| Error::Validation(format!("K_r{}* S_{} is singular", i + 1, i + 1)))?;
            let m = (&m + m.transpose()) * 0.5;
            if !is_spd(&m) {
                return Err(Error::NotSpd {
                    what: format!("M_{} = (K_r* S)^-1", i + 1),
                });
            }
            if robust {
                let off = (0..m.nrows())
                    .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
                    .filter(|(r, c)| r != c)
                    .map(|rc| m[rc].abs())
                    .fold(0.0, f64::max);
                if off > 1e-9 * m.amax() {
                    return Err(Error::Validation(format!(
                        "M_{} must be diagonal for the projection law",
                        i + 1
                    )));
                }
            }
            m_list.push(m);
        }
        self.m_list = Some(m_list);
        Ok(self)
    }
}

/// Element-wise box `[lo, hi]` on one mode's gains.
#[derive(Debug, Clone, PartialEq)]
pub struct GainBounds {
    pub lo: ModeGains,
    pub hi: ModeGains,
}

impl GainBounds {
    pub fn unbounded(n: usize, p: usize) -> Self {
        let lo = ModeGains::zeros(n, p).axpy(1.0, &ModeGains::zeros(n, p));
        let mut lo = lo;
        let mut hi = lo.clone();
        lo.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        hi.iter_mut().for_each(|v| *v = f64::INFINITY);
        Self { lo, hi }
    }

    /// Box `center ± (rel·|center| + abs)` entry-wise.
    pub fn around(center: &ModeGains, rel: f64, abs: f64) -> Self {
        let mut lo = center.clone();
        let mut hi = center.clone();
        for ((l, h), c) in lo.iter_mut().zip(hi.iter_mut()).zip(center.iter()) {
            let w = rel * c.abs() + abs;
            *l = c - w;
            *h = c + w;
        }
        Self { lo, hi }
    }

    pub fn contains(&self, g: &ModeGains) -> bool {
        g.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Clips `g` into the box; returns the largest clipped distance.
    pub fn clip(&self, g: &mut ModeGains) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, (l, h)) in g.iter_mut().zip(self.lo.iter().zip(self.hi.iter())) {
            let c = v.clamp(*l, *h);
            worst = worst.max((c - *v).abs());
            *v = c;
        }
        worst
    }
}

/// Gains of every mode plus optional projection bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct GainState {
    pub modes: Vec<ModeGains>,
    pub bounds: Option<Vec<GainBounds>>,
}

impl GainState {
    pub fn new(modes: Vec<ModeGains>) -> Self {
        Self { modes, bounds: None }
    }

    pub fn with_bounds(mut self, bounds: Vec<GainBounds>) -> Result<Self> {
        if bounds.len() != self.modes.len() {
            return Err(Error::Dimension("one bound box per mode required".into()));
        }
        for (i, (b, g)) in bounds.iter().zip(&self.modes).enumerate() {
            if !b.contains(g) {
                return Err(Error::Validation(format!(
                    "initial gains of mode {} lie outside their bounds",
                    i + 1
                )));
            }
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn control(&self, mode: usize, x: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
        control_output(&self.modes[mode], x, r)
    }
}

/// `u = K_x x + K_r r + K_f`.
pub fn control_output(gains: &ModeGains, x: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
    &gains.kx * x + &gains.kr * r + &gains.kf
}

/// Everything the adaptation laws read at one instant.
#[derive(Debug, Clone, Copy)]
pub struct RateInputs<'a> {
    /// Index of the active region.
    pub active: usize,
    pub phi_d: f64,
    pub p: &'a DMatrix<f64>,
    pub b_m: &'a DMatrix<f64>,
    pub s: &'a DMatrix<f64>,
    pub e: &'a DVector<f64>,
    pub x: &'a DVector<f64>,
    pub r: &'a DVector<f64>,
}

/// `K̇_x = −φ_d Sᵀ B_mᵀ P e xᵀ`, `K̇_r = −φ_d Sᵀ B_mᵀ P e rᵀ`,
/// `K̇_f = −φ_d Sᵀ B_mᵀ P e` for the active mode; zero for every other mode.
pub fn gain_rates_nominal(inp: &RateInputs<'_>, mode: usize) -> ModeGains {
    let (n, p) = (inp.x.len(), inp.r.len());
    if mode != inp.active {
        return ModeGains::zeros(n, p);
    }
    let w = inp.s.transpose() * (inp.b_m.transpose() * (inp.p * inp.e)) * (-inp.phi_d);
    ModeGains {
        kx: &w * inp.x.transpose(),
        kr: &w * inp.r.transpose(),
        kf: w,
    }
}

/// Same structure as the nominal law with a common `P` and the barrier taken
/// over the performance bound `ρ` instead of `ε`. `inp.phi_d` is ignored.
pub fn gain_rates_common_p(inp: &RateInputs<'_>, mode: usize, rho: f64) -> Result<ModeGains> {
    let e_norm = crate::pwa::quad_form(inp.e, inp.p).max(0.0).sqrt();
    let b = barrier_phi(e_norm, rho)?;
    let with_rho = RateInputs { phi_d: b.phi_d, ..*inp };
    Ok(gain_rates_nominal(&with_rho, mode))
}

/// Boxed projection of one rate entry: unchanged strictly inside the bounds,
/// zeroed when sitting on a bound and pointing outward.
pub fn project_derivative(raw: f64, gain: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo <= gain && gain <= hi) {
        return Err(Error::BoundViolated {
            index: 0,
            value: gain,
            lo,
            hi,
        });
    }
    Ok(if (gain >= hi && raw > 0.0) || (gain <= lo && raw < 0.0) {
        0.0
    } else {
        raw
    })
}

/// [`project_derivative`] over every entry of a mode's gains.
pub fn project_rates(raw: &ModeGains, gains: &ModeGains, bounds: &GainBounds) -> Result<ModeGains> {
    let mut out = raw.clone();
    for (idx, (((o, g), l), h)) in out
        .iter_mut()
        .zip(gains.iter())
        .zip(bounds.lo.iter())
        .zip(bounds.hi.iter())
        .enumerate()
    {
        *o = project_derivative(*o, *g, *l, *h).map_err(|e| match e {
            Error::BoundViolated { value, lo, hi, .. } => Error::BoundViolated {
                index: idx,
                value,
                lo,
                hi,
            },
            other => other,
        })?;
    }
    Ok(out)
}

/// Nominal rates passed through the projection for the active mode.
pub fn gain_rates_robust(
    inp: &RateInputs<'_>,
    mode: usize,
    gains: &ModeGains,
    bounds: &GainBounds,
) -> Result<ModeGains> {
    let raw = gain_rates_nominal(inp, mode);
    if mode != inp.active {
        return Ok(raw);
    }
    project_rates(&raw, gains, bounds)
}

/// True gains and weights used to evaluate the Lyapunov function on
/// synthetic benchmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    pub nominal: NominalGains,
    pub m_list: Vec<DMatrix<f64>>,
}

impl Oracle {
    pub fn from_structure(nominal: NominalGains, structure: &GainStructure) -> Result<Self> {
        let m_list = structure.m_list.clone().ok_or(Error::OracleUnavailable)?;
        Ok(Self { nominal, m_list })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovValue {
    pub v: f64,
    pub v_theta: f64,
    pub phi: f64,
}

/// Parameter part `Σ_i tr(K̃_xiᵀ M_i K̃_xi) + tr(K̃_riᵀ M_i K̃_ri) + K̃_fiᵀ M_i K̃_fi`.
pub fn v_theta(oracle: &Oracle, gains: &GainState) -> f64 {
    gains
        .modes
        .iter()
        .zip(&oracle.nominal.modes)
        .zip(&oracle.m_list)
        .map(|((k, k_star), m)| {
            let d = k.sub(k_star);
            (d.kx.transpose() * m * &d.kx).trace() + (d.kr.transpose() * m * &d.kr).trace() + d.kf.dot(&(m * &d.kf))
        })
        .sum()
}

/// `V = φ(‖e‖_P, ε) + V_θ`.
pub fn lyapunov_v(oracle: Option<&Oracle>, gains: &GainState, e_norm: f64, eps: f64) -> Result<LyapunovValue> {
    let oracle = oracle.ok_or(Error::OracleUnavailable)?;
    let phi = barrier_phi(e_norm, eps)?.phi;
    let v_theta = v_theta(oracle, gains);
    Ok(LyapunovValue {
        v: phi + v_theta,
        v_theta,
        phi,
    })
}
