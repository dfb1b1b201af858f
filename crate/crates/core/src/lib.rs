//! Sparse partially functional linear regression.
//!
//! Fits the model
//!
//! ```text
//! Y_i = alpha + X_i' beta + integral Z_i(t) xi(t) dt + eps_i
//! ```
//!
//! where `beta` is a high-dimensional sparse coefficient vector constrained
//! by an l0 cardinality budget and `xi` is a smooth functional coefficient
//! penalized by its squared norm in a reproducing kernel Hilbert space.
//! The functional part is profiled out through the representer expansion,
//! which reduces the problem to a weighted l0-constrained least squares in
//! `beta`, solved by a support-detection / root-finding iteration with a
//! hard-thresholding KKT certificate.
//!
//! Modules:
//! - [`data`]: grids, functional samples, centered datasets.
//! - [`rkhs`]: kernels, the Gram matrix of double kernel integrals, the
//!   profiling smoother `P_lambda`, representer coefficients, `xi` evaluation.
//! - [`fsdar`]: the support-detection solver, KKT certificate, profiled loss.
//! - [`tuning`]: GCV selection of `lambda`, HBIC selection of the sparsity.
//! - [`inference`]: penalized likelihood-ratio test of the functional
//!   coefficient with bootstrap or chi-square calibration; normal-theory
//!   p-values for selected scalar coefficients.
//! - [`simgen`]: synthetic data generators with exact eigenbasis control.
//! - [`oracle`]: brute-force best-subset and spectral smoother cross-checks.
//! - [`metrics`]: estimation/selection/prediction metrics, marginal
//!   screening, variance-explained decomposition.
//!
//! The crate is `no_std` (with `alloc`) when built without the default
//! `std` feature; all operations are pure and deterministic.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod data;
pub mod fsdar;
pub mod inference;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod rkhs;
pub mod seeding;
pub mod simgen;
pub mod tuning;

pub use data::{center, recover_intercept, CenteringRecord, Dataset, FunctionalSample, Grid, Point, RawData};
pub use fsdar::{fsdar_fit, kkt_check, profiled_objective, FitResult, FitStatus, ProfiledDesign, SolverConfig, SolverTrace};
pub use rkhs::{eval_xi, gram, kernel_eval, xi_rkhs_norm_sq, GramMatrix, Kernel1d, KernelSpec, Smoother};
pub use tuning::{gcv, hbic, tune, TuningGrid, TuningReport};
