//! Multi-cell massive-MIMO downlink with truncated polynomial expansion (TPE)
//! precoding.
//!
//! The crate is `no_std` (it needs `alloc`) and carries the numerical core:
//!
//! * [`scenario`]: three-sector geometry, pathloss, antenna pattern and one-ring
//!   covariance synthesis.
//! * [`channel`]: Rayleigh block-fading draws, pilot-contaminated MMSE
//!   estimation and the `S`/`Φ` estimation statistics.
//! * [`precoders`]: MRT, RZF and TPE precoding matrices and the Taylor initial
//!   TPE coefficients.
//! * [`detequiv`]: fixed-point deterministic equivalents, their derivatives at
//!   the origin, the asymptotic TPE SINR tables and the RZF asymptotic SINR.
//! * [`optimizer`]: weighted max-min fairness over TPE coefficients through
//!   semidefinite relaxation and bisection.
//! * [`sinr`]: Monte-Carlo SINR accumulators shared by the simulator.
//!
//! IO, configuration files, CSV and the command line live in the `mimo-tpe`
//! companion crate.
#![no_std]
#![warn(missing_debug_implementations)]
// `!(x > 0.0)` also rejects NaN; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod channel;
pub mod detequiv;
mod error;
pub mod linalg;
pub mod optimizer;
pub mod precoders;
pub mod quadrature;
pub mod rng;
pub mod scenario;
pub mod sinr;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVec = nalgebra::DVector<C64>;
/// Dense real matrix.
pub type RMat = nalgebra::DMatrix<f64>;
/// Dense real column vector.
pub type RVec = nalgebra::DVector<f64>;
