//! Piecewise affine plant and reference model, region membership, the
//! matching equations and the weighted error metric.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{is_hurwitz, is_spd, lambda_max, lambda_min, spectral_abscissa};

/// `normal · [x; u] <= offset`, or `<` when `strict`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: DVector<f64>,
    pub offset: f64,
    pub strict: bool,
}

impl Halfspace {
    pub fn new(normal: DVector<f64>, offset: f64, strict: bool) -> Result<Self> {
        if normal.iter().any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(Error::Validation("halfspace has non-finite data".into()));
        }
        if normal.iter().all(|v| *v == 0.0) {
            return Err(Error::Validation("halfspace normal is all zero".into()));
        }
        Ok(Self { normal, offset, strict })
    }

    /// Signed residual `normal · z − offset`; non-positive inside.
    pub fn residual(&self, z: &DVector<f64>) -> f64 {
        self.normal.dot(z) - self.offset
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        let r = self.residual(z);
        if self.strict {
            r < 0.0
        } else {
            r <= 0.0
        }
    }
}

/// Convex polyhedral region in the state-input space.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    halfspaces: Vec<Halfspace>,
}

impl Region {
    pub fn new(halfspaces: Vec<Halfspace>) -> Result<Self> {
        if halfspaces.is_empty() {
            return Err(Error::Validation("region needs at least one halfspace".into()));
        }
        let dim = halfspaces[0].normal.len();
        if halfspaces.iter().any(|h| h.normal.len() != dim) {
            return Err(Error::Dimension("halfspace normals differ in length".into()));
        }
        Ok(Self { halfspaces })
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn dim(&self) -> usize {
        self.halfspaces[0].normal.len()
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        self.halfspaces.iter().all(|h| h.contains(z))
    }

    /// Largest halfspace residual. Non-positive inside the closure of the
    /// region, positive outside; crosses zero where a trajectory leaves it.
    pub fn exit_residual(&self, z: &DVector<f64>) -> f64 {
        self.halfspaces
            .iter()
            .map(|h| h.residual(z))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One affine vector field `A x + B u + f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub f: DVector<f64>,
}

impl Affine {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, f: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || f.len() != n {
            return Err(Error::Dimension(format!(
                "affine subsystem has A {}x{}, B {}x{}, f {}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                f.len()
            )));
        }
        Ok(Self { a, b, f })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PwaPlant {
    n: usize,
    p: usize,
    subsystems: Vec<Affine>,
    regions: Vec<Region>,
}

impl PwaPlant {
    pub fn new(subsystems: Vec<Affine>, regions: Vec<Region>) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::Validation("plant needs at least one subsystem".into()));
        }
        if subsystems.len() != regions.len() {
            return Err(Error::Validation(format!(
                "{} subsystems but {} regions",
                subsystems.len(),
                regions.len()
            )));
        }
        let (n, p) = (subsystems[0].n(), subsystems[0].p());
        for (i, s) in subsystems.iter().enumerate() {
            if s.n() != n || s.p() != p {
                return Err(Error::Dimension(format!(
                    "subsystem {i} is ({}, {}), expected ({n}, {p})",
                    s.n(),
                    s.p()
                )));
            }
        }
        for (i, r) in regions.iter().enumerate() {
            if r.dim() != n + p {
                return Err(Error::Dimension(format!(
                    "region {i} lives in R^{}, expected R^{}",
                    r.dim(),
                    n + p
                )));
            }
        }
        Ok(Self {
            n,
            p,
            subsystems,
            regions,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn modes(&self) -> usize {
        self.subsystems.len()
    }

    pub fn subsystems(&self) -> &[Affine] {
        &self.subsystems
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    subsystems: Vec<Affine>,
}

impl ReferenceModel {
    pub fn new(subsystems: Vec<Affine>) -> Result<Self> {
        if subsystems.is_empty() {
            return Err(Error::Validation("reference model needs at least one subsystem".into()));
        }
        let (n, p) = (subsystems[0].n(), subsystems[0].p());
        for (i, s) in subsystems.iter().enumerate() {
            if s.n() != n || s.p() != p {
                return Err(Error::Dimension(format!("reference subsystem {i} has wrong shape")));
            }
            if !is_hurwitz(&s.a) {
                return Err(Error::NotHurwitz {
                    what: format!("reference A_m{}", i + 1),
                    abscissa: spectral_abscissa(&s.a),
                });
            }
        }
        Ok(Self { subsystems })
    }

    pub fn subsystems(&self) -> &[Affine] {
        &self.subsystems
    }

    pub fn modes(&self) -> usize {
        self.subsystems.len()
    }

    pub fn n(&self) -> usize {
        self.subsystems[0].n()
    }

    pub fn p(&self) -> usize {
        self.subsystems[0].p()
    }
}

/// Controller gains `(K_x, K_r, K_f)` of one mode. Also used for gain rates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeGains {
    pub kx: DMatrix<f64>,
    pub kr: DMatrix<f64>,
    pub kf: DVector<f64>,
}

impl ModeGains {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            kx: DMatrix::zeros(p, n),
            kr: DMatrix::zeros(p, p),
            kf: DVector::zeros(p),
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            kx: &self.kx * k,
            kr: &self.kr * k,
            kf: &self.kf * k,
        }
    }

    /// `self + k * other`
    pub fn axpy(&self, k: f64, other: &ModeGains) -> Self {
        Self {
            kx: &self.kx + &other.kx * k,
            kr: &self.kr + &other.kr * k,
            kf: &self.kf + &other.kf * k,
        }
    }

    pub fn sub(&self, other: &ModeGains) -> Self {
        self.axpy(-1.0, other)
    }

    /// Number of scalar entries across all three gains.
    pub fn len(&self) -> usize {
        self.kx.len() + self.kr.len() + self.kf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entries flattened as `[kx (col-major), kr (col-major), kf]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(self.kx.as_slice());
        v.extend_from_slice(self.kr.as_slice());
        v.extend_from_slice(self.kf.as_slice());
        v
    }

    /// Inverse of [`ModeGains::flatten`].
    pub fn from_slice(n: usize, p: usize, v: &[f64]) -> Self {
        let (a, b) = (p * n, p * p);
        Self {
            kx: DMatrix::from_column_slice(p, n, &v[..a]),
            kr: DMatrix::from_column_slice(p, p, &v[a..a + b]),
            kf: DVector::from_column_slice(&v[a + b..a + b + p]),
        }
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.kx.iter_mut().chain(self.kr.iter_mut()).chain(self.kf.iter_mut())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.kx.iter().chain(self.kr.iter()).chain(self.kf.iter())
    }
}

/// Residual norms of the three matching equations for one mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingResidual {
    pub state: f64,
    pub input: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NominalGains {
    pub modes: Vec<ModeGains>,
    pub residuals: Vec<MatchingResidual>,
}

/// Default absolute tolerance (scaled by `1 + ‖rhs‖_F`) on the matching residuals.
pub const MATCHING_TOL: f64 = 1e-8;

/// Index of the first region (declaration order) that contains `[x; u]`.
pub fn active_mode(plant: &PwaPlant, x: &DVector<f64>, u: &DVector<f64>) -> Result<usize> {
    let z = stack(x, u);
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("state-input point is not finite".into()));
    }
    plant
        .regions
        .iter()
        .position(|r| r.contains(&z))
        .ok_or_else(|| Error::NoRegion {
            point: z.iter().copied().collect(),
        })
}

pub fn stack(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    z
}

/// Least-squares solution of the matching equations
/// `A_mi = A_i + B_i K_xi`, `B_mi = B_i K_ri`, `f_mi = f_i + B_i K_fi`.
pub fn matching_gains(plant: &PwaPlant, reference: &ReferenceModel, tol: f64) -> Result<NominalGains> {
    if plant.modes() != reference.modes() || plant.n() != reference.n() || plant.p() != reference.p() {
        return Err(Error::Dimension("plant and reference model shapes differ".into()));
    }
    let mut modes = Vec::with_capacity(plant.modes());
    let mut residuals = Vec::with_capacity(plant.modes());
    for (i, (pl, rm)) in plant.subsystems.iter().zip(&reference.subsystems).enumerate() {
        let svd = pl.b.clone().svd(true, true);
        let solve = |rhs: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            svd.solve(rhs, 1e-12 * svd.singular_values.max().max(1.0))
                .map_err(|e| Error::SolveFailed(e.to_string()))
        };
        let rhs_x = &rm.a - &pl.a;
        let rhs_r = rm.b.clone();
        let rhs_f = DMatrix::from_column_slice(pl.n(), 1, (&rm.f - &pl.f).as_slice());
        let kx = solve(&rhs_x)?;
        let kr = solve(&rhs_r)?;
        let kf = solve(&rhs_f)?.column(0).into_owned();

        let res = MatchingResidual {
            state: (&pl.a + &pl.b * &kx - &rm.a).norm(),
            input: (&pl.b * &kr - &rm.b).norm(),
            offset: (&pl.f + &pl.b * &kf - &rm.f).norm(),
        };
        for (equation, r, scale) in [
            ("A_m = A + B K_x", res.state, rm.a.norm()),
            ("B_m = B K_r", res.input, rm.b.norm()),
            ("f_m = f + B K_f", res.offset, rm.f.norm()),
        ] {
            let bound = tol * (1.0 + scale);
            if !(r <= bound) {
                return Err(Error::Unmatchable {
                    mode: i,
                    equation,
                    residual: r,
                    tol: bound,
                });
            }
        }
        modes.push(ModeGains { kx, kr, kf });
        residuals.push(res);
    }
    Ok(NominalGains { modes, residuals })
}

/// Weighted Euclidean norm `sqrt(eᵀ P e)`.
pub fn error_metric(e: &DVector<f64>, p: &DMatrix<f64>) -> Result<f64> {
    if p.nrows() != e.len() {
        return Err(Error::Dimension("P and e sizes differ".into()));
    }
    if !is_spd(p) {
        return Err(Error::NotSpd {
            what: "weighting matrix P".into(),
        });
    }
    Ok(quad_form(e, p).max(0.0).sqrt())
}

/// `eᵀ P e` without the SPD check; hot path of the simulator.
pub fn quad_form(e: &DVector<f64>, p: &DMatrix<f64>) -> f64 {
    let n = e.len();
    let mut acc = 0.0;
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..n {
            col += e[i] * p[(i, j)];
        }
        acc += col * e[j];
    }
    acc
}

/// Factor `sqrt(λmax(S) / min_i λmin(P_i))` by which a global bound `ρ*` on
/// `‖e‖_S` is rescaled into a bound on the switching metric `‖e‖_P`.
pub fn global_bound_scale(s: &DMatrix<f64>, p_list: &[DMatrix<f64>]) -> Result<f64> {
    if !is_spd(s) {
        return Err(Error::NotSpd { what: "S".into() });
    }
    if p_list.is_empty() {
        return Err(Error::Validation("empty P list".into()));
    }
    let mut min_p = f64::INFINITY;
    for (i, p) in p_list.iter().enumerate() {
        if !is_spd(p) {
            return Err(Error::NotSpd {
                what: format!("P_{}", i + 1),
            });
        }
        min_p = min_p.min(lambda_min(p));
    }
    Ok((lambda_max(s) / min_p).sqrt())
}

/// Outcome of Monte Carlo partition validation.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionReport {
    pub samples: usize,
    pub uncovered: usize,
    pub overlapping: usize,
    /// First uncovered sample, if any.
    pub uncovered_example: Option<Vec<f64>>,
    /// First sample lying in two regions, with the two region indices.
    pub overlap_example: Option<(Vec<f64>, usize, usize)>,
}

impl PartitionReport {
    pub fn is_partition(&self) -> bool {
        self.uncovered == 0 && self.overlapping == 0
    }
}

/// Samples `samples` points uniformly from the box `[lo, hi]` over `[x; u]`
/// and counts points covered by no region or by more than one.
pub fn validate_partition(
    plant: &PwaPlant,
    lo: &[f64],
    hi: &[f64],
    samples: usize,
    seed: u64,
) -> Result<PartitionReport> {
    let dim = plant.n() + plant.p();
    if lo.len() != dim || hi.len() != dim {
        return Err(Error::Dimension(format!("bounding box must have {dim} coordinates")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PartitionReport {
        samples,
        uncovered: 0,
        overlapping: 0,
        uncovered_example: None,
        overlap_example: None,
    };
    let mut z = DVector::zeros(dim);
    for _ in 0..samples {
        for k in 0..dim {
            z[k] = lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>();
        }
        let hits: Vec<usize> = plant
            .regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.contains(&z))
            .map(|(i, _)| i)
            .collect();
        match hits.len() {
            0 => {
                report.uncovered += 1;
                report
                    .uncovered_example
                    .get_or_insert_with(|| z.iter().copied().collect());
            }
            1 => {}
            _ => {
                report.overlapping += 1;
                report
                    .overlap_example
                    .get_or_insert_with(|| (z.iter().copied().collect(), hits[0], hits[1]));
            }
        }
    }
    Ok(report)
}
