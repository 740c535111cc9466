//! Offline constants and sufficient conditions: Lyapunov matrices, the jump
//! bound `μ`, the reference decay rate `α_m`, `κ_i`, the dwell-time bound and
//! the verdicts for the nominal, robust and common-Lyapunov designs.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{is_hurwitz, is_spd, kron, lambda_max, lambda_min, spectral_abscissa, unvec, vec_of};
use crate::pwa::ReferenceModel;

/// Relative residual accepted from the Kronecker solve.
pub const LYAP_RESIDUAL_TOL: f64 = 1e-8;
/// Default strictness margin for the shifted equation, relative to `λmin(Q)`.
pub const SHIFT_MARGIN: f64 = 1e-3;
/// Smallest accepted `ρ∞ − √μ g/h`, relative to `ρ∞`.
pub const DWELL_DENOM_FLOOR: f64 = 1e-12;
pub const COMMON_P_MAX_ITER: usize = 200;

/// Solves `AᵀP + PA = −Q` for SPD `P` via the vectorized Kronecker system.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension("A and Q must be square of equal size".into()));
    }
    if !is_spd(q) {
        return Err(Error::NotSpd { what: "Q".into() });
    }
    if !is_hurwitz(a) {
        return Err(Error::NotHurwitz {
            what: "A".into(),
            abscissa: spectral_abscissa(a),
        });
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    // vec(AᵀP) = (I ⊗ Aᵀ) vec(P),  vec(PA) = (Aᵀ ⊗ I) vec(P)
    let op = kron(&eye, &at) + kron(&at, &eye);
    let rhs = -vec_of(q);
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SolveFailed("Kronecker Lyapunov operator is singular".into()))?;
    let p = unvec(&sol, n, n);
    let p = (&p + p.transpose()) * 0.5;

    let residual = (&at * &p + &p * a + q).norm() / q.norm();
    if !(residual < LYAP_RESIDUAL_TOL) {
        return Err(Error::SolveFailed(format!(
            "Lyapunov residual {residual:.3e} above tolerance"
        )));
    }
    if !is_spd(&p) {
        return Err(Error::SolveFailed("Lyapunov solution is not positive definite".into()));
    }
    Ok(p)
}

/// SPD `P` with `AᵀP + PA + P < −Q` strictly, obtained from
/// `(A + I/2)ᵀP + P(A + I/2) = −(Q + δI)`.
///
/// `margin` is `δ`; `None` selects `SHIFT_MARGIN · λmin(Q)`.
pub fn solve_lyapunov_shifted(a: &DMatrix<f64>, q: &DMatrix<f64>, margin: Option<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || q.nrows() != n {
        return Err(Error::Dimension("A and Q must be square of equal size".into()));
    }
    if !is_spd(q) {
        return Err(Error::NotSpd { what: "Q".into() });
    }
    let shifted = a + DMatrix::<f64>::identity(n, n) * 0.5;
    if !is_hurwitz(&shifted) {
        return Err(Error::NotShiftedHurwitz {
            abscissa: spectral_abscissa(&shifted),
        });
    }
    let delta = margin.unwrap_or(SHIFT_MARGIN * lambda_min(q));
    if !(delta > 0.0) {
        return Err(Error::Validation("shift margin must be positive".into()));
    }
    let p = solve_lyapunov(&shifted, &(q + DMatrix::<f64>::identity(n, n) * delta))?;
    let lhs = a.transpose() * &p + &p * a + &p + q;
    let top = lambda_max(&lhs);
    if !(top < 0.0) {
        return Err(Error::SolveFailed(format!(
            "shifted inequality not strict: λmax = {top:.3e}"
        )));
    }
    Ok(p)
}

fn check_spd_list(p_list: &[DMatrix<f64>], name: &str) -> Result<()> {
    if p_list.is_empty() {
        return Err(Error::Validation(format!("empty {name} list")));
    }
    for (i, p) in p_list.iter().enumerate() {
        if !is_spd(p) {
            return Err(Error::NotSpd {
                what: format!("{name}_{}", i + 1),
            });
        }
    }
    Ok(())
}

/// `μ = max_{i,j} λmax(P_i)/λmin(P_j)` and its square root.
pub fn compute_mu(p_list: &[DMatrix<f64>]) -> Result<(f64, f64)> {
    check_spd_list(p_list, "P")?;
    let max_top = p_list.iter().map(lambda_max).fold(f64::NEG_INFINITY, f64::max);
    let min_bottom = p_list.iter().map(lambda_min).fold(f64::INFINITY, f64::min);
    // i = j already gives a ratio >= 1; clamp rounding.
    let mu = (max_top / min_bottom).max(1.0);
    Ok((mu, mu.sqrt()))
}

/// `α_m = min_i λmin(Q_i)/λmax(P_i)`.
pub fn compute_alpha_m(p_list: &[DMatrix<f64>], q_list: &[DMatrix<f64>]) -> Result<f64> {
    if p_list.len() != q_list.len() {
        return Err(Error::Dimension("P and Q lists differ in length".into()));
    }
    check_spd_list(p_list, "P")?;
    check_spd_list(q_list, "Q")?;
    Ok(p_list
        .iter()
        .zip(q_list)
        .map(|(p, q)| lambda_min(q) / lambda_max(p))
        .fold(f64::INFINITY, f64::min))
}

/// Minimum dwell time keeping the auxiliary bound under the performance bound:
/// `(1/(h−l)) · ln((√μ ρ∞ − √μ g/h) / (ρ∞ − √μ g/h))`.
pub fn dwell_time_bound(h: f64, l: f64, g: f64, rho_inf: f64, sqrt_mu: f64) -> Result<f64> {
    let mut failed = Vec::new();
    if !(h > l) {
        failed.push(format!("h > l ({h} <= {l})"));
    }
    if !(l > 0.0) {
        failed.push(format!("l > 0 ({l})"));
    }
    if !(g > 0.0) {
        failed.push(format!("g > 0 ({g})"));
    }
    if !(sqrt_mu >= 1.0) {
        failed.push(format!("sqrt(mu) >= 1 ({sqrt_mu})"));
    }
    if !failed.is_empty() {
        return Err(Error::HypothesisViolated(failed.join("; ")));
    }
    let floor = g / h;
    let denom = rho_inf - sqrt_mu * floor;
    if !(denom > DWELL_DENOM_FLOOR * rho_inf) {
        return Err(Error::HypothesisViolated(format!(
            "rho_inf > sqrt(mu) g/h ({rho_inf} vs {})",
            sqrt_mu * floor
        )));
    }
    let num = sqrt_mu * rho_inf - sqrt_mu * floor;
    Ok((num / denom).ln() / (h - l))
}

/// Design scalars the certificate depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignParams {
    /// Decay rate of the auxiliary bound.
    pub h: f64,
    /// Offset rate of the auxiliary bound.
    pub g: f64,
    /// Decay rate of the performance bound.
    pub l: f64,
    pub rho_inf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub p_list: Vec<DMatrix<f64>>,
    pub q_list: Vec<DMatrix<f64>>,
    pub mu: f64,
    pub sqrt_mu: f64,
    pub alpha_m: f64,
    /// `κ_i = λmin(Q_i) − 2 h λmax(P_i)` at `design.h`.
    pub kappa_list: Vec<f64>,
    /// Strict upper bound `α_m / 2` on admissible `h`.
    pub h_max: f64,
    /// Dwell-time lower bound; `None` when its hypotheses fail.
    pub tau_d: Option<f64>,
    /// `P_i` satisfy the shifted inequality `AᵀP + PA + P < −Q`.
    pub robust: bool,
    pub design: DesignParams,
}

impl Certificate {
    /// Solves one Lyapunov equation per mode (shifted ones when `robust`) and
    /// derives every constant.
    pub fn build(
        reference: &ReferenceModel,
        q_list: &[DMatrix<f64>],
        robust: bool,
        design: DesignParams,
    ) -> Result<Self> {
        if q_list.len() != reference.modes() {
            return Err(Error::Validation(format!(
                "{} Q matrices for {} modes",
                q_list.len(),
                reference.modes()
            )));
        }
        let p_list = reference
            .subsystems()
            .iter()
            .zip(q_list)
            .map(|(s, q)| {
                if robust {
                    solve_lyapunov_shifted(&s.a, q, None)
                } else {
                    solve_lyapunov(&s.a, q)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_matrices(p_list, q_list.to_vec(), robust, design)
    }

    pub fn from_matrices(
        p_list: Vec<DMatrix<f64>>,
        q_list: Vec<DMatrix<f64>>,
        robust: bool,
        design: DesignParams,
    ) -> Result<Self> {
        let (mu, sqrt_mu) = compute_mu(&p_list)?;
        let alpha_m = compute_alpha_m(&p_list, &q_list)?;
        let kappa_list = kappas(&p_list, &q_list, design.h);
        let tau_d = dwell_time_bound(design.h, design.l, design.g, design.rho_inf, sqrt_mu).ok();
        Ok(Self {
            p_list,
            q_list,
            mu,
            sqrt_mu,
            alpha_m,
            kappa_list,
            h_max: alpha_m / 2.0,
            tau_d,
            robust,
            design,
        })
    }

    pub fn modes(&self) -> usize {
        self.p_list.len()
    }

    /// Dwell bound of the reference system alone, `ln(μ)/α_m`.
    pub fn reference_dwell(&self) -> f64 {
        self.mu.ln() / self.alpha_m
    }
}

fn kappas(p_list: &[DMatrix<f64>], q_list: &[DMatrix<f64>], h: f64) -> Vec<f64> {
    p_list
        .iter()
        .zip(q_list)
        .map(|(p, q)| lambda_min(q) - 2.0 * h * lambda_max(p))
        .collect()
}

/// One checked inequality. `margin > 0` exactly when it holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub passed: bool,
    pub margin: f64,
}

impl Condition {
    fn strict(name: impl Into<String>, margin: f64) -> Self {
        Self {
            name: name.into(),
            passed: margin > 0.0,
            margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Verdict {
    pub conditions: Vec<Condition>,
    /// Binding dwell-time bound when its hypotheses hold.
    pub tau_d: Option<f64>,
    /// Disturbance constant `c = max_i λmax(P_i)² d̄² / κ_i` (robust checks).
    pub disturbance_c: Option<f64>,
    pub notes: Vec<String>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Condition> {
        self.conditions.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.conditions {
            writeln!(
                f,
                "  [{}] {:<40} margin {:+.6e}",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.margin
            )?;
        }
        if let Some(t) = self.tau_d {
            writeln!(f, "  dwell-time bound tau_D = {t:.6} s")?;
        }
        if let Some(c) = self.disturbance_c {
            writeln!(f, "  disturbance constant c = {c:.6e}")?;
        }
        for n in &self.notes {
            writeln!(f, "  note: {n}")?;
        }
        Ok(())
    }
}

pub const COND_H_RATE: &str = "h < alpha_m/2";
pub const COND_H_GT_L: &str = "h > l";
pub const COND_G_POS: &str = "g > 0";
pub const COND_RHO_INF: &str = "rho_inf > sqrt(mu) g/h";
pub const COND_ROBUST_P: &str = "P from shifted Lyapunov inequality";
pub const COND_DISTURBANCE: &str = "max_i lmax(P_i) d/sqrt(kappa_i) < h/g";
/// Lemma constant below the smallest value the auxiliary bound can take.
pub const COND_LEMMA_C: &str = "c < (g/h)^2";
pub const COND_COMMON_L: &str = "l < min_i lmin(Q_i) / (2 lmax(P))";

/// Nominal design: `h < α_m/2`, `h > l`, `ρ∞ > √μ g/h` and the dwell bound.
pub fn check_theorem1(cert: &Certificate, design: &DesignParams) -> Verdict {
    let DesignParams { h, g, l, rho_inf } = *design;
    let mut v = Verdict::default();
    v.conditions
        .push(Condition::strict(COND_H_RATE, cert.alpha_m / 2.0 - h));
    v.conditions.push(Condition::strict(COND_H_GT_L, h - l));
    v.conditions.push(Condition::strict(COND_G_POS, g));
    let floor_margin = if h > 0.0 {
        rho_inf - cert.sqrt_mu * g / h
    } else {
        f64::NEG_INFINITY
    };
    v.conditions.push(Condition::strict(COND_RHO_INF, floor_margin));
    match dwell_time_bound(h, l, g, rho_inf, cert.sqrt_mu) {
        Ok(t) => v.tau_d = Some(t),
        Err(e) => v.notes.push(format!("dwell-time bound unavailable: {e}")),
    }
    v.notes.push(format!(
        "reference-only dwell bound ln(mu)/alpha_m = {:.6} s",
        cert.reference_dwell()
    ));
    v
}

/// Robust design: the nominal conditions, `κ_i > 0` for every mode, a
/// shifted-Lyapunov certificate and the disturbance bound.
pub fn check_theorem2(cert: &Certificate, design: &DesignParams, d_bar: f64) -> Verdict {
    let mut v = check_theorem1(cert, design);
    let DesignParams { h, g, .. } = *design;
    v.conditions.push(Condition {
        name: COND_ROBUST_P.into(),
        passed: cert.robust,
        margin: if cert.robust { 1.0 } else { -1.0 },
    });
    if !(d_bar >= 0.0) {
        v.conditions.push(Condition::strict("d_bar >= 0", d_bar));
        return v;
    }
    let kappas = kappas(&cert.p_list, &cert.q_list, h);
    let mut lhs: f64 = 0.0;
    let mut c: f64 = 0.0;
    let mut all_kappa = true;
    for (i, (p, k)) in cert.p_list.iter().zip(&kappas).enumerate() {
        v.conditions.push(Condition::strict(format!("kappa_{} > 0", i + 1), *k));
        if *k > 0.0 {
            let top = lambda_max(p);
            lhs = lhs.max(top * d_bar / k.sqrt());
            c = c.max(top * top * d_bar * d_bar / k);
        } else {
            all_kappa = false;
        }
    }
    if all_kappa {
        v.conditions.push(Condition::strict(COND_DISTURBANCE, h / g - lhs));
        v.disturbance_c = Some(c);
        // The lemma needs c < min ε², and ε is only bounded below by g/h;
        // the condition above alone secures c < (h/g)².
        let floor = g / h;
        v.conditions.push(Condition::strict(COND_LEMMA_C, floor * floor - c));
    } else {
        v.conditions.push(Condition {
            name: COND_DISTURBANCE.into(),
            passed: false,
            margin: f64::NEG_INFINITY,
        });
    }
    v
}

/// Searches for one SPD `P` with `A_miᵀP + P A_mi < −Q_i` for all modes by
/// reweighted averaging of the per-mode Lyapunov solutions, then checks
/// `l < ½ min_i λmin(Q_i)/λmax(P)`.
pub fn check_corollary_common_p(
    reference: &ReferenceModel,
    q_list: &[DMatrix<f64>],
    l: f64,
) -> Result<(DMatrix<f64>, Verdict)> {
    if q_list.len() != reference.modes() {
        return Err(Error::Validation("Q list length differs from mode count".into()));
    }
    check_spd_list(q_list, "Q")?;
    let a_list: Vec<&DMatrix<f64>> = reference.subsystems().iter().map(|s| &s.a).collect();
    let per_mode = a_list
        .iter()
        .zip(q_list)
        .map(|(a, q)| solve_lyapunov(a, q).map(|p| &p / lambda_max(&p)))
        .collect::<Result<Vec<_>>>()?;

    let s = per_mode.len();
    let mut weights = vec![1.0 / s as f64; s];
    for _ in 0..COMMON_P_MAX_ITER {
        let candidate = per_mode
            .iter()
            .zip(&weights)
            .fold(DMatrix::zeros(reference.n(), reference.n()), |acc, (p, w)| acc + p * *w);
        let mut violated = false;
        let mut scale: f64 = 0.0;
        for (j, a) in a_list.iter().enumerate() {
            let neg = -(a.transpose() * &candidate + &candidate * *a);
            match neg.clone().cholesky() {
                Some(ch) if lambda_min(&neg) > 0.0 => {
                    // smallest c with c·N_j > Q_j: λmax(L⁻¹ Q_j L⁻ᵀ)
                    let l_inv = ch
                        .l()
                        .try_inverse()
                        .ok_or_else(|| Error::SolveFailed("singular Cholesky factor".into()))?;
                    let m = &l_inv * &q_list[j] * l_inv.transpose();
                    scale = scale.max(lambda_max(&m));
                }
                _ => {
                    violated = true;
                    weights[j] *= 2.0;
                }
            }
        }
        if violated {
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            continue;
        }
        let p = candidate * (scale * (1.0 + 1e-6) + 1e-12);
        let strict = a_list
            .iter()
            .zip(q_list)
            .all(|(a, q)| lambda_max(&(a.transpose() * &p + &p * *a + q)) < 0.0);
        if !strict {
            continue;
        }
        let min_q = q_list.iter().map(lambda_min).fold(f64::INFINITY, f64::min);
        let bound = 0.5 * min_q / lambda_max(&p);
        let mut verdict = Verdict::default();
        verdict.conditions.push(Condition::strict(COND_COMMON_L, bound - l));
        return Ok((p, verdict));
    }
    Err(Error::NoCommonP {
        iterations: COMMON_P_MAX_ITER,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mass_spring;
    use crate::pwa::Affine;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn design() -> DesignParams {
        DesignParams {
            h: mass_spring::H,
            g: mass_spring::G,
            l: mass_spring::L,
            rho_inf: mass_spring::RHO_INF,
        }
    }

    fn mass_spring_cert() -> Certificate {
        Certificate::build(&mass_spring::reference(), &mass_spring::q_list(), false, design()).unwrap()
    }

    #[test]
    fn lyapunov_scalar_identity() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let p = solve_lyapunov(&a, &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        assert!((p - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn lyapunov_rejects_unstable_and_indefinite() {
        let q = DMatrix::<f64>::identity(2, 2);
        let unstable = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -1.0]);
        assert!(matches!(solve_lyapunov(&unstable, &q), Err(Error::NotHurwitz { .. })));
        let marginal = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(solve_lyapunov(&marginal, &q), Err(Error::NotHurwitz { .. })));
        let stable = -DMatrix::<f64>::identity(2, 2);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            solve_lyapunov(&stable, &indefinite),
            Err(Error::NotSpd { .. })
        ));
    }

    #[test]
    fn lyapunov_mode1_block() {
        let p = &mass_spring_cert().p_list[0];
        assert_relative_eq!(p[(0, 0)], 140.0, epsilon = 1e-9);
        assert_relative_eq!(p[(0, 1)], 2.0, epsilon = 1e-9);
        assert_relative_eq!(p[(1, 1)], 5.2, epsilon = 1e-9);
        assert_relative_eq!(p[(0, 2)], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn shifted_examples() {
        let a = -DMatrix::<f64>::identity(3, 3);
        let q = DMatrix::<f64>::identity(3, 3) * 0.5;
        let p = solve_lyapunov_shifted(&a, &q, None).unwrap();
        let lhs = a.transpose() * &p + &p * &a + &p + &q;
        assert!(lambda_max(&lhs) < 0.0);
        // P = I also satisfies the inequality directly
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert!(lambda_max(&(a.transpose() * &i3 + &i3 * &a + &i3 + &q)) < 0.0);

        let slow = DMatrix::<f64>::identity(2, 2) * -0.4;
        assert!(matches!(
            solve_lyapunov_shifted(&slow, &DMatrix::identity(2, 2), None),
            Err(Error::NotShiftedHurwitz { .. })
        ));

        let am1 = mass_spring::reference().subsystems()[0].a.clone();
        let q = DMatrix::<f64>::identity(4, 4);
        let p = solve_lyapunov_shifted(&am1, &q, None).unwrap();
        let lhs = am1.transpose() * &p + &p * &am1 + &p + &q;
        assert!(lambda_max(&lhs) < 0.0);
        assert!(is_spd(&p));
    }

    #[test]
    fn mu_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(compute_mu(&[i2.clone(), i2.clone()]).unwrap().0, 1.0);
        let (mu, _) = compute_mu(&[&i2 * 2.0, i2.clone()]).unwrap();
        assert_relative_eq!(mu, 2.0);
        let (_, sqrt_mu) = compute_mu(&mass_spring_cert().p_list).unwrap();
        assert!((sqrt_mu - 7.1).abs() < 0.05, "sqrt_mu = {sqrt_mu}");
        assert!(compute_mu(&[DMatrix::from_row_slice(1, 1, &[-1.0])]).is_err());
    }

    #[test]
    fn alpha_m_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(
            compute_alpha_m(std::slice::from_ref(&i2), std::slice::from_ref(&i2)).unwrap(),
            1.0
        );
        // λmin(Q) = 90; λmax of P3's block from the characteristic polynomial
        let (a, b, c) = (182.857f64, 1.02f64, 3.644f64);
        let lmax_p3 = 0.5 * ((a + c) + ((a - c).powi(2) + 4.0 * b * b).sqrt());
        let cert = mass_spring_cert();
        assert_relative_eq!(cert.alpha_m, 90.0 / lmax_p3, epsilon = 1e-4);
        assert!((cert.alpha_m - 0.492).abs() < 1e-3);
        assert!(
            (cert.reference_dwell() - 7.96).abs() < 0.02,
            "{}",
            cert.reference_dwell()
        );
    }

    #[test]
    fn dwell_time_examples() {
        let tau = dwell_time_bound(0.12, 0.02, 0.01, 1.5, 7.1).unwrap();
        let expected = 10.0 * ((7.1f64 * 1.5 - 7.1 / 12.0) / (1.5 - 7.1 / 12.0)).ln();
        assert_relative_eq!(tau, expected, epsilon = 1e-12);
        assert!((tau - 24.05).abs() < 0.01);

        // g -> 0 limit
        let tau0 = dwell_time_bound(0.12, 0.02, 1e-12, 1.5, 7.1).unwrap();
        assert_relative_eq!(tau0, 7.1f64.ln() / 0.1, epsilon = 1e-8);

        // pole of the logarithm
        let g_pole = 1.5 * 0.12 / 7.1;
        assert!(dwell_time_bound(0.12, 0.02, g_pole, 1.5, 7.1).is_err());
        let near = dwell_time_bound(0.12, 0.02, g_pole * (1.0 - 1e-9), 1.5, 7.1).unwrap();
        assert!(near > 150.0);

        match dwell_time_bound(0.02, 0.02, 0.01, 1.5, 7.1) {
            Err(Error::HypothesisViolated(msg)) => assert!(msg.contains("h > l")),
            other => panic!("{other:?}"),
        }
        match dwell_time_bound(0.12, 0.02, 0.2, 1.5, 7.1) {
            Err(Error::HypothesisViolated(msg)) => assert!(msg.contains("rho_inf")),
            other => panic!("{other:?}"),
        }
        // single mode: μ = 1 gives a zero bound
        assert_eq!(dwell_time_bound(0.12, 0.02, 0.01, 1.5, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn theorem1_verdicts() {
        let cert = mass_spring_cert();
        let v = check_theorem1(&cert, &design());
        assert!(v.passed(), "{v}");
        let tau = v.tau_d.unwrap();
        assert!((tau - 24.05).abs() < 0.1, "tau = {tau}");

        let mut d = design();
        d.h = 0.3;
        let v = check_theorem1(&cert, &d);
        assert!(!v.passed());
        let m = v.get(COND_H_RATE).unwrap().margin;
        assert!((m + 0.054).abs() < 1e-3, "margin {m}");

        let mut d = design();
        d.l = d.h;
        let v = check_theorem1(&cert, &d);
        assert!(!v.get(COND_H_GT_L).unwrap().passed);
        assert!(v.tau_d.is_none());
    }

    #[test]
    fn theorem2_verdicts() {
        let cert = Certificate::build(&mass_spring::reference(), &mass_spring::q_list(), true, design()).unwrap();
        let v = check_theorem2(&cert, &design(), 0.0);
        assert!(v.passed(), "{v}");

        // threshold on d̄ from the algebraic rearrangement
        let threshold = cert
            .p_list
            .iter()
            .zip(&cert.kappa_list)
            .map(|(p, k)| (design().h / design().g) * k.sqrt() / lambda_max(p))
            .fold(f64::INFINITY, f64::min);
        let cond = |d_bar: f64| {
            check_theorem2(&cert, &design(), d_bar)
                .get(COND_DISTURBANCE)
                .unwrap()
                .passed
        };
        assert!(cond(0.99 * threshold));
        assert!(!cond(1.01 * threshold));

        // c = max λmax(P)² d̄²/κ against (g/h)²: a far smaller admissible d̄
        let lemma = threshold * (design().g / design().h).powi(2);
        assert!(check_theorem2(&cert, &design(), 0.99 * lemma).passed());
        let v = check_theorem2(&cert, &design(), 1.01 * lemma);
        assert!(!v.get(COND_LEMMA_C).unwrap().passed);
        assert!(v.get(COND_DISTURBANCE).unwrap().passed);

        let mut d = design();
        d.h = 0.3;
        let v = check_theorem2(&cert, &d, 0.01);
        let failed: Vec<_> = v.failures().map(|c| c.name.clone()).collect();
        assert!(failed.iter().any(|n| n.starts_with("kappa_")), "{failed:?}");

        let nominal = mass_spring_cert();
        assert!(!check_theorem2(&nominal, &design(), 0.0).passed());
    }

    fn single_mode_reference(a: DMatrix<f64>) -> ReferenceModel {
        let n = a.nrows();
        ReferenceModel::new(vec![Affine::new(a, DMatrix::identity(n, 1), DVector::zeros(n)).unwrap()]).unwrap()
    }

    #[test]
    fn common_p_single_mode() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let q = DMatrix::<f64>::identity(2, 2);
        let (p, verdict) =
            check_corollary_common_p(&single_mode_reference(a.clone()), std::slice::from_ref(&q), 0.01).unwrap();
        assert!(lambda_max(&(a.transpose() * &p + &p * &a + &q)) < 0.0);
        assert!(verdict.passed());
        let p_lyap = solve_lyapunov(&a, &q).unwrap();
        // same direction as the Lyapunov solution
        let ratio = p[(0, 0)] / p_lyap[(0, 0)];
        assert!((&p - &p_lyap * ratio).amax() < 1e-9 * p.amax());
    }

    #[test]
    fn common_p_identical_modes() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let sub = Affine::new(a.clone(), DMatrix::identity(2, 1), DVector::zeros(2)).unwrap();
        let reference = ReferenceModel::new(vec![sub.clone(), sub]).unwrap();
        let q = DMatrix::<f64>::identity(2, 2);
        let (p, verdict) = check_corollary_common_p(&reference, &[q.clone(), q.clone()], 0.1).unwrap();
        // P = c I/2 with c just above 1
        assert!((p[(0, 1)]).abs() < 1e-12);
        assert!(p[(0, 0)] > 0.5 && p[(0, 0)] < 0.51);
        assert!(verdict.passed());
        let (_, verdict) = check_corollary_common_p(&reference, &[q.clone(), q], 2.0).unwrap();
        assert!(!verdict.passed());
    }

    #[test]
    fn common_p_absent_for_rotation_pair() {
        // A2 = T A1 T⁻¹ with a strongly anisotropic T.
        let a1 = DMatrix::<f64>::from_row_slice(2, 2, &[-0.1, 1.0, -1.0, -0.1]);
        let a2 = DMatrix::from_row_slice(2, 2, &[-0.1, 0.1, -10.0, -0.1]);
        // Oracle: a 2x2 pair has no common quadratic Lyapunov function iff
        // A1·A2 or A1·A2⁻¹ has a negative real eigenvalue.
        let product = &a1 * &a2;
        let negative_real = product
            .complex_eigenvalues()
            .iter()
            .any(|z| z.im.abs() < 1e-12 && z.re < 0.0);
        assert!(negative_real);

        let mk = |a: DMatrix<f64>| Affine::new(a, DMatrix::identity(2, 1), DVector::zeros(2)).unwrap();
        let reference = ReferenceModel::new(vec![mk(a1), mk(a2)]).unwrap();
        let q = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            check_corollary_common_p(&reference, &[q.clone(), q], 0.01),
            Err(Error::NoCommonP { .. })
        ));
    }
}
