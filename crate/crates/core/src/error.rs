use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no region contains the state-input point {point:?}")]
    NoRegion { point: Vec<f64> },

    #[error("mode {mode}: matching residual {residual:.3e} for {equation} exceeds tolerance {tol:.1e}")]
    Unmatchable {
        mode: usize,
        equation: &'static str,
        residual: f64,
        tol: f64,
    },

    #[error("{what} is not symmetric positive definite")]
    NotSpd { what: String },

    #[error("{what} is not Hurwitz (spectral abscissa {abscissa:.6e})")]
    NotHurwitz { what: String, abscissa: f64 },

    #[error("A + I/2 is not Hurwitz (spectral abscissa {abscissa:.6e}); shifted Lyapunov inequality infeasible")]
    NotShiftedHurwitz { abscissa: f64 },

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("barrier violated at t = {t}: |e|_P = {e_norm:.12e} >= bound {bound:.12e}")]
    BarrierViolated { t: f64, e_norm: f64, bound: f64 },

    #[error("too close to barrier at t = {t}: relative margin {margin:.3e}")]
    NearBarrier { t: f64, margin: f64 },

    #[error("gain entry {index} = {value} outside bounds [{lo}, {hi}]")]
    BoundViolated { index: usize, value: f64, lo: f64, hi: f64 },

    #[error("oracle gains are not available for this scenario")]
    OracleUnavailable,

    #[error("no common Lyapunov matrix found after {iterations} iterations")]
    NoCommonP { iterations: usize },

    #[error("chattering detected near t = {t}: {switches} switches within one step window")]
    ChatterDetected { t: f64, switches: usize },

    #[error("dwell time violated: switch at t = {t} after dwell {dwell:.6} < {tau_d:.6}")]
    DwellViolated { t: f64, dwell: f64, tau_d: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
