//! Performance bound `ρ(t)`, the auxiliary bound `ε(t)` with its reset map,
//! and the barrier function over `‖e‖_P²`.

use crate::error::{Error, Result};

/// Relative gap `(ε² − ‖e‖²)/ε²` below which the barrier is refused.
pub const NEAR_BARRIER: f64 = 1e-12;

/// Exponential performance bound `ρ(t) = (ρ0 − ρ∞) e^{−l (t − t0)} + ρ∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceSpec {
    pub rho0: f64,
    pub rho_inf: f64,
    pub l: f64,
    pub t0: f64,
}

impl PerformanceSpec {
    pub fn new(rho0: f64, rho_inf: f64, l: f64, t0: f64) -> Result<Self> {
        if !(rho0 > rho_inf && rho_inf > 0.0) {
            return Err(Error::Validation(format!(
                "performance bound needs rho0 > rho_inf > 0 (got {rho0}, {rho_inf})"
            )));
        }
        if !(l > 0.0) || !t0.is_finite() {
            return Err(Error::Validation(format!("performance decay l must be > 0 (got {l})")));
        }
        Ok(Self { rho0, rho_inf, l, t0 })
    }

    pub fn rho(&self, t: f64) -> f64 {
        (self.rho0 - self.rho_inf) * (-self.l * (t - self.t0)).exp() + self.rho_inf
    }

    pub fn rho_dot(&self, t: f64) -> f64 {
        -self.l * (self.rho0 - self.rho_inf) * (-self.l * (t - self.t0)).exp()
    }

    /// Bound scaled by `k`, e.g. from [`crate::pwa::global_bound_scale`].
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            rho0: self.rho0 * k,
            rho_inf: self.rho_inf * k,
            ..*self
        }
    }
}

/// Auxiliary bound `ε̇ = −h ε + g`, multiplied by `√μ` at every switch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxiliarySignal {
    pub eps: f64,
    pub h: f64,
    pub g: f64,
    pub sqrt_mu: f64,
    pub eps0: f64,
}

impl AuxiliarySignal {
    pub fn new(eps0: f64, h: f64, g: f64, sqrt_mu: f64) -> Result<Self> {
        if !(h > 0.0 && g > 0.0) {
            return Err(Error::Validation(format!("need h > 0 and g > 0 (got {h}, {g})")));
        }
        if !(sqrt_mu >= 1.0) {
            return Err(Error::Validation(format!("reset gain must be >= 1 (got {sqrt_mu})")));
        }
        if !(eps0 > g / h) {
            return Err(Error::Validation(format!("eps0 = {eps0} must exceed g/h = {}", g / h)));
        }
        Ok(Self {
            eps: eps0,
            h,
            g,
            sqrt_mu,
            eps0,
        })
    }

    /// Equilibrium and lower bound `g/h`.
    pub fn floor(&self) -> f64 {
        self.g / self.h
    }

    /// Value after `dt` seconds without switching (exact solution).
    pub fn value_after(&self, dt: f64) -> f64 {
        let floor = self.floor();
        (self.eps - floor) * (-self.h * dt).exp() + floor
    }

    pub fn advance(&self, dt: f64) -> Self {
        Self {
            eps: self.value_after(dt),
            ..*self
        }
    }

    pub fn reset(&self) -> Self {
        Self {
            eps: self.sqrt_mu * self.eps,
            ..*self
        }
    }

    pub fn eps_dot(&self) -> f64 {
        -self.h * self.eps + self.g
    }
}

/// Picks `ε(t0)` as the midpoint of `(g/h, ρ0)`, raised if needed so that
/// `‖e(t0)‖_P < ε(t0)`. Fails when no admissible value exists.
pub fn default_eps0(g: f64, h: f64, rho0: f64, e0_norm: f64) -> Result<f64> {
    let lo = (g / h).max(e0_norm);
    if !(lo < rho0) {
        return Err(Error::Validation(format!(
            "no admissible eps0: max(g/h, |e0|_P) = {lo} >= rho0 = {rho0}"
        )));
    }
    let mid = 0.5 * (g / h + rho0);
    Ok(if mid > lo { mid } else { 0.5 * (lo + rho0) })
}

/// Barrier value and its derivative with respect to `‖e‖_P²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barrier {
    pub phi: f64,
    pub phi_d: f64,
}

/// `φ = z/(ε² − z)` and `φ_d = ε²/(ε² − z)²` with `z = ‖e‖_P²`.
pub fn barrier_phi(e_norm: f64, eps: f64) -> Result<Barrier> {
    barrier_phi_at(e_norm, eps, f64::NAN)
}

/// As [`barrier_phi`], tagging errors with simulation time `t`.
pub fn barrier_phi_at(e_norm: f64, eps: f64, t: f64) -> Result<Barrier> {
    if !(e_norm < eps) {
        return Err(Error::BarrierViolated { t, e_norm, bound: eps });
    }
    let eps2 = eps * eps;
    let z = e_norm * e_norm;
    let gap = eps2 - z;
    if gap < NEAR_BARRIER * eps2 {
        return Err(Error::NearBarrier { t, margin: gap / eps2 });
    }
    Ok(Barrier {
        phi: z / gap,
        phi_d: eps2 / (gap * gap),
    })
}

/// Threshold `ζ` splitting the sign of `2 φ_d (z − c) − φ`: the positive
/// root of `z² + ε² z − 2 c ε²`, i.e. `(−ε² + sqrt(ε⁴ + 8 ε² c))/2`.
/// Requires `0 < c < ε²`; then `ζ < ε²`.
pub fn lemma3_zeta(eps: f64, c: f64) -> Result<f64> {
    let eps2 = check_lemma3(eps, c)?;
    // Rationalized form avoids cancellation for small c.
    let disc = (eps2 * eps2 + 8.0 * eps2 * c).sqrt();
    Ok(4.0 * eps2 * c / (eps2 + disc))
}

/// `(−ε² + sqrt(ε⁴ + 4 ε² c))/2`, the form with discriminant `4 ε² c`. It is
/// a strict lower bound of [`lemma3_zeta`]: the indicator is `<= 0` below it,
/// but not necessarily `> 0` just above it.
pub fn lemma3_zeta_lower(eps: f64, c: f64) -> Result<f64> {
    let eps2 = check_lemma3(eps, c)?;
    let disc = (eps2 * eps2 + 4.0 * eps2 * c).sqrt();
    Ok(2.0 * eps2 * c / (eps2 + disc))
}

fn check_lemma3(eps: f64, c: f64) -> Result<f64> {
    let eps2 = eps * eps;
    if !(c > 0.0) || !(c < eps2) {
        return Err(Error::HypothesisViolated(format!(
            "need 0 < c < eps^2 (c = {c}, eps^2 = {eps2})"
        )));
    }
    Ok(eps2)
}

/// `2 φ_d (z − c) − φ` evaluated directly from `φ` and `φ_d`.
pub fn lemma3_indicator(z: f64, eps: f64, c: f64) -> Result<f64> {
    let b = barrier_phi(z.max(0.0).sqrt(), eps)?;
    Ok(2.0 * b.phi_d * (z - c) - b.phi)
}
