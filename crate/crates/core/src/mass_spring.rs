//! Two-mass spring-damper benchmark with a piecewise linear coupling spring.
//!
//! State `x = [p1, p1', p2, p2']`, input `u = [F1, F2]`. The coupling
//! stiffness is `C1` while `|p2 - p1| <= 1`, `C2` above and `C3` below, with
//! force offsets that keep the spring force continuous across the kinks.

use nalgebra::{DMatrix, DVector};

use crate::pwa::{Affine, Halfspace, PwaPlant, ReferenceModel, Region};

pub const M1: f64 = 5.0;
pub const M2: f64 = 1.0;
pub const C0: f64 = 1.0;
pub const DAMPING: f64 = 1.0;
pub const C1: f64 = 10.0;
pub const C2: f64 = 1.0;
pub const C3: f64 = 100.0;

pub const RHO0: f64 = 10.0;
pub const RHO_INF: f64 = 1.5;
pub const L: f64 = 0.02;
pub const H: f64 = 0.12;
pub const G: f64 = 0.01;
pub const EPS0: f64 = 9.0;
/// Period of the square-wave component of the second input channel.
pub const INPUT_PERIOD: f64 = 100.0;
/// Initial gain estimates as a fraction of the matching gains.
pub const INITIAL_GAIN_FRACTION: f64 = 0.5;
/// Adaptation gain: `S_i = γ (K_ri*)⁻¹`, so `M_i = I / γ`.
pub const ADAPTATION_GAIN: f64 = 1000.0;

fn subsystem(c: f64, offset: f64) -> Affine {
    let (m1, m2, d) = (M1, M2, DAMPING);
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.0, 1.0, 0.0, 0.0,
        -(C0 + c) / m1, -2.0 * d / m1, c / m1, d / m1,
        0.0, 0.0, 0.0, 1.0,
        c / m2, d / m2, -c / m2, -d / m2,
    ]);
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(4, 2, &[
        0.0, 0.0,
        1.0 / m1, 0.0,
        0.0, 0.0,
        0.0, 1.0 / m2,
    ]);
    let f = DVector::from_vec(vec![0.0, offset / m1, 0.0, -offset / m2]);
    Affine::new(a, b, f).expect("well-formed subsystem")
}

/// `coef · (x3 - x1) <= offset` over `[x; u]` with zero input coefficients.
fn gap_halfspace(coef: f64, offset: f64, strict: bool) -> Halfspace {
    Halfspace::new(DVector::from_vec(vec![-coef, 0.0, coef, 0.0, 0.0, 0.0]), offset, strict)
        .expect("non-degenerate halfspace")
}

pub fn regions() -> Vec<Region> {
    vec![
        // |x3 - x1| <= 1
        Region::new(vec![gap_halfspace(1.0, 1.0, false), gap_halfspace(-1.0, 1.0, false)]).unwrap(),
        // x3 - x1 > 1
        Region::new(vec![gap_halfspace(-1.0, -1.0, true)]).unwrap(),
        // x3 - x1 < -1
        Region::new(vec![gap_halfspace(1.0, -1.0, true)]).unwrap(),
    ]
}

pub fn plant() -> PwaPlant {
    let subs = vec![subsystem(C1, 0.0), subsystem(C2, C1 - C2), subsystem(C3, C3 - C1)];
    PwaPlant::new(subs, regions()).expect("consistent plant")
}

fn reference_subsystem(w2: f64, w: f64, f: [f64; 4]) -> Affine {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        0.0, 1.0, 0.0, 0.0,
        -w2, -w, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
        0.0, 0.0, -w2, -w,
    ]);
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(4, 2, &[
        0.0, 0.0,
        w2, 0.0,
        0.0, 0.0,
        0.0, w2,
    ]);
    Affine::new(a, b, DVector::from_row_slice(&f)).expect("well-formed reference")
}

pub fn reference() -> ReferenceModel {
    ReferenceModel::new(vec![
        reference_subsystem(25.0, 10.0, [0.0, 0.0, 0.0, 0.0]),
        reference_subsystem(16.0, 8.0, [0.0, 5.0, 0.0, -5.0]),
        reference_subsystem(49.0, 14.0, [0.0, -10.0, 0.0, -5.0]),
    ])
    .expect("Hurwitz reference")
}

pub fn q() -> DMatrix<f64> {
    #[rustfmt::skip]
    let q = DMatrix::from_row_slice(4, 4, &[
        100.0, 10.0, 0.0, 0.0,
        10.0, 100.0, 0.0, 0.0,
        0.0, 0.0, 100.0, 10.0,
        0.0, 0.0, 10.0, 100.0,
    ]);
    q
}

pub fn q_list() -> Vec<DMatrix<f64>> {
    vec![q(); 3]
}

fn block_diag2(a: f64, b: f64, c: f64) -> DMatrix<f64> {
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 4, &[
        a, b, 0.0, 0.0,
        b, c, 0.0, 0.0,
        0.0, 0.0, a, b,
        0.0, 0.0, b, c,
    ]);
    m
}

/// Lyapunov matrices as tabulated for this example, rounded.
pub fn tabulated_p() -> Vec<DMatrix<f64>> {
    vec![
        block_diag2(140.0, 2.0, 5.2),
        block_diag2(121.25, 3.125, 6.64),
        block_diag2(182.857, 1.02, 3.644),
    ]
}
