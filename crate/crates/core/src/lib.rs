//! Learned pointwise nonlinearities for the iterative shrinkage/thresholding
//! algorithm.
//!
//! ISTA is unrolled into `T` layers that share a single scalar nonlinearity
//! `φ`, expanded on a uniform grid of cubic B-splines. The squared error of
//! the final layer is backpropagated to the spline coefficients and the
//! coefficients are trained by projected online gradient descent on
//! synthetic sparse-recovery instances.
//!
//! The crate is `#![no_std]` and only needs `alloc`. File formats, timing,
//! the benchmark harness and the command-line tool live in the `shrinklearn`
//! crate.
//!
//! Module map:
//!
//! * [`spline`] cardinal B-splines and the parameterized nonlinearity.
//! * [`ista`] problem setup and the unrolled forward pass.
//! * [`backprop`] gradient of the final-layer error w.r.t. the coefficients.
//! * [`trainer`] grid calibration, λ tuning and online learning.
//! * [`datagen`] Bernoulli-Gaussian instances with calibrated noise.
//! * [`baselines`] FISTA for LASSO and the support-aware MMSE genie.
//! * [`metrics`] SNR in dB.

#![no_std]
// `!(x >= 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backprop;
pub mod baselines;
pub mod datagen;
mod error;
pub mod ista;
pub mod linalg;
pub mod metrics;
pub mod spline;
pub mod trainer;

pub use error::{Error, Result};
