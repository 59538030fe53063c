//! Boundary integral control of scalar quasi-linear hyperbolic PDEs.
//!
//! - [`flux`]: flux speed models and their averaged derivatives.
//! - [`design`]: gain bounds and Lyapunov weights.
//! - [`spectral`]: poles of the linearized loop.
//! - [`sim`]: implicit box-scheme simulation of the closed loop.
//! - [`lyapunov`]: functional evaluation, rate identities and decay checks.
//! - [`cli`]: the batch front end behind the `hypi` binary.
//! - [`io`]: run configurations and CSV tables.

// NaN must fail positivity checks, so `!(x > 0.0)` is deliberate
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod design;
pub mod error;
pub mod flux;
pub mod io;
pub mod lyapunov;
pub mod quad;
pub mod sim;
pub mod spectral;

pub use error::{Error, Result};
