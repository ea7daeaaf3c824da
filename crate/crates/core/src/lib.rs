//! Extended full-waveform inversion in joint and reduced form.
//!
//! The joint objective over medium `m` and wavefield `u`,
//! `|P u - d|^2_{Sm} + |A(m) u - q|^2_{Sp}`, reduces after eliminating `u` to
//! the conventional data misfit weighted by `(K(m) + Sm)^{-1}` with the
//! model-dependent covariance `K(m) = P (A^* Sp^{-1} A)^{-1} P^*`.
//!
//! - [`linops`]: operator abstraction, sampling and covariance operators.
//! - [`wavemodel`]: 1D Helmholtz operator and the analytic constant-velocity
//!   propagator.
//! - [`formulations`]: every objective, the gradient and the equivalence checks.
//! - [`solvers`]: LSQR, CG and the deconvolution solve for the reduced weight.
//! - [`toy`]: the three-receiver constant-velocity experiment.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod formulations;
pub mod linops;
pub mod solvers;
pub mod toy;
pub mod wavemodel;

pub use error::{Error, Result};
