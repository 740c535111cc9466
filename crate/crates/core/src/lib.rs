//! Model reference adaptive control for piecewise affine plants with a
//! prescribed bound on the weighted tracking error.
//!
//! - [`pwa`]: plant and reference model descriptions, region lookup, matching gains.
//! - [`certify`]: Lyapunov solves and the stability conditions with the dwell-time bound.
//! - [`envelope`]: performance bound, auxiliary bound with resets, barrier function.
//! - [`adapt`]: controller output and adaptation laws.
//! - [`sim`]: closed-loop integration with switch detection and monitors.
//! - [`signal`]: reference inputs and disturbances.
//! - [`scenario`]: JSON scenario files and the built-in mass-spring example.
//! - [`output`], [`cli`]: result files and the command-line front end.

// Negated comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// A failed run carries its partial log.
#![allow(clippy::result_large_err)]

pub mod adapt;
pub mod certify;
pub mod cli;
pub mod envelope;
pub mod error;
pub mod linalg;
pub mod mass_spring;
pub mod output;
pub mod pwa;
pub mod scenario;
pub mod signal;
pub mod sim;

pub use error::{Error, Result};
