//! Toolkit for the control-side modified algebraic Riccati equation (MARE)
//! of LQG control over independent lossy actuation channels.
//!
//! Modules, bottom-up:
//!
//! - [`matkit`]: dense matrix kernel (products, Cholesky, eigenvalue bounds).
//! - [`channels`]: channel subsets, delivery probabilities, selection masks.
//! - [`mare`]: the Riccati map, the auxiliary cost operator, optimal gain and
//!   the fixed-point solver.
//! - [`msstab`]: mean-square stability of a fixed gain.
//! - [`lmi`]: block LMI assembly and certificates built from fixed points.
//! - [`simloop`]: Monte-Carlo closed-loop simulation with Bernoulli drops.
//! - [`sweep`]: bisection of the convergence boundary along a probability ray.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channels;
pub mod error;
pub mod lmi;
pub mod mare;
pub mod matkit;
pub mod msstab;
pub mod simloop;
pub mod sweep;

pub use channels::{ChannelSpec, SubsetTable};
pub use error::{Error, Result};
pub use mare::{GainMatrix, MareSolution, PlantModel, SolverConfig, Verdict};
pub use matkit::{Matrix, SymMatrix};
