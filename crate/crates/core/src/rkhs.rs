//! Reproducing kernels, the n x n Gram matrix of double kernel integrals,
//! the profiling smoother `P_lambda = n*lambda*(Sigma + n*lambda*I)^{-1}`,
//! representer coefficients, and evaluation of the functional estimate.
//!
//! The Gram entry is `Sigma[i,i'] = integral integral Z_i(s) K(s,t) Z_i'(t) ds dt`,
//! discretized with the grid's trapezoidal weights: with `V[i,j] = w_j * Z_i(t_j)`
//! and `K` the kernel on grid x grid, `Sigma = V K V^T`. Building `K` once and
//! using two matrix products costs `O(n m^2 + n^2 m)`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::data::{FunctionalSample, Grid, Point};
use crate::linalg::{dot, sym_eigen, Cholesky, Matrix};

/// One-dimensional kernel on `[0,1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kernel1d {
    /// Second-order Sobolev kernel built from scaled Bernoulli polynomials.
    Sobolev2,
    /// Gaussian kernel `exp(-(s-t)^2 / (2 sigma^2))`.
    Gaussian { bandwidth: f64 },
    /// Brownian-motion covariance `min(s,t)`.
    Brownian,
}

/// Kernel choice: a 1D kernel for curve predictors, or a tensor product of
/// two 1D kernels for surface predictors on a 2D grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelSpec {
    Scalar(Kernel1d),
    TensorProduct(Kernel1d, Kernel1d),
}

impl KernelSpec {
    pub fn sobolev2() -> Self {
        KernelSpec::Scalar(Kernel1d::Sobolev2)
    }

    pub fn gaussian(bandwidth: f64) -> Self {
        KernelSpec::Scalar(Kernel1d::Gaussian { bandwidth })
    }

    pub fn brownian() -> Self {
        KernelSpec::Scalar(Kernel1d::Brownian)
    }

    pub fn tensor(s: Kernel1d, t: Kernel1d) -> Self {
        KernelSpec::TensorProduct(s, t)
    }

    /// Default Gaussian bandwidth: 0.2 times the domain length.
    pub fn default_gaussian_bandwidth(domain_length: f64) -> f64 {
        0.2 * domain_length
    }

    pub fn validate(&self) -> Result<(), RkhsError> {
        let check = |k: &Kernel1d| match k {
            Kernel1d::Gaussian { bandwidth } if !(*bandwidth > 0.0) => {
                Err(RkhsError::BandwidthNotPositive { got: *bandwidth })
            }
            _ => Ok(()),
        };
        match self {
            KernelSpec::Scalar(k) => check(k),
            KernelSpec::TensorProduct(a, b) => {
                check(a)?;
                check(b)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RkhsError {
    BandwidthNotPositive { got: f64 },
    PointOutsideDomain { coordinate: f64 },
    KernelDimensionMismatch,
    GridMismatch,
    LengthMismatch { context: &'static str, expected: usize, got: usize },
    EmptySamples,
    LambdaNotPositive { got: f64 },
    NotPositiveSemidefinite { min_eigenvalue: f64 },
    Factorization(String),
    MissingKernelCache,
}

impl fmt::Display for RkhsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RkhsError::BandwidthNotPositive { got } => {
                write!(f, "gaussian bandwidth must be positive, got {got}")
            }
            RkhsError::PointOutsideDomain { coordinate } => {
                write!(f, "point coordinate {coordinate} outside [0,1]")
            }
            RkhsError::KernelDimensionMismatch => {
                write!(f, "kernel dimensionality does not match the grid/point dimensionality")
            }
            RkhsError::GridMismatch => write!(f, "samples do not share the Gram matrix grid"),
            RkhsError::LengthMismatch { context, expected, got } => {
                write!(f, "length mismatch in {context}: expected {expected}, got {got}")
            }
            RkhsError::EmptySamples => write!(f, "need at least one functional sample"),
            RkhsError::LambdaNotPositive { got } => {
                write!(f, "smoothing parameter must be positive, got {got}")
            }
            RkhsError::NotPositiveSemidefinite { min_eigenvalue } => {
                write!(f, "Gram matrix not positive semidefinite beyond tolerance (min eigenvalue {min_eigenvalue})")
            }
            RkhsError::Factorization(s) => write!(f, "factorization failed: {s}"),
            RkhsError::MissingKernelCache => {
                write!(f, "Gram matrix was built from a raw matrix and carries no kernel cache")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for RkhsError {}

// Scaled Bernoulli polynomials for the second-order Sobolev kernel.
fn k1(u: f64) -> f64 {
    u - 0.5
}

fn k2(u: f64) -> f64 {
    let a = k1(u);
    (a * a - 1.0 / 12.0) / 2.0
}

fn k4(u: f64) -> f64 {
    let a = k1(u);
    let a2 = a * a;
    (a2 * a2 - a2 / 2.0 + 7.0 / 240.0) / 24.0
}

fn unit_interval(v: f64) -> Result<(), RkhsError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(RkhsError::PointOutsideDomain { coordinate: v });
    }
    Ok(())
}

fn eval_1d(kind: &Kernel1d, s: f64, t: f64) -> Result<f64, RkhsError> {
    match kind {
        Kernel1d::Sobolev2 => {
            unit_interval(s)?;
            unit_interval(t)?;
            Ok(1.0 + k1(s) * k1(t) + k2(s) * k2(t) - k4((s - t).abs()))
        }
        Kernel1d::Gaussian { bandwidth } => {
            if !(*bandwidth > 0.0) {
                return Err(RkhsError::BandwidthNotPositive { got: *bandwidth });
            }
            let d = s - t;
            Ok(libm::exp(-d * d / (2.0 * bandwidth * bandwidth)))
        }
        Kernel1d::Brownian => {
            unit_interval(s)?;
            unit_interval(t)?;
            Ok(s.min(t))
        }
    }
}

/// Evaluate the kernel at a pair of domain points. Symmetric by
/// construction; errors when a point lies outside `[0,1]` for the
/// Sobolev/Brownian kernels or when dimensionalities disagree.
pub fn kernel_eval(spec: &KernelSpec, s: &Point, t: &Point) -> Result<f64, RkhsError> {
    match (spec, s, t) {
        (KernelSpec::Scalar(k), Point::One(a), Point::One(b)) => eval_1d(k, *a, *b),
        (KernelSpec::TensorProduct(ks, kt), Point::Two(a1, a2), Point::Two(b1, b2)) => {
            Ok(eval_1d(ks, *a1, *b1)? * eval_1d(kt, *a2, *b2)?)
        }
        _ => Err(RkhsError::KernelDimensionMismatch),
    }
}

/// The n x n matrix of double kernel integrals between functional
/// predictors, plus the cached kernel-on-grid matrix used to evaluate the
/// functional estimate.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    sigma: Matrix,
    kernel_grid: Option<Matrix>,
    grid_fingerprint: u64,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.sigma.rows()
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn grid_fingerprint(&self) -> u64 {
        self.grid_fingerprint
    }

    /// Wrap an explicit symmetric matrix (no kernel cache; the functional
    /// estimate cannot be evaluated through such a Gram matrix). Used by
    /// spectral cross-checks and tests.
    pub fn from_matrix(sigma: Matrix, grid: &Grid) -> Result<Self, RkhsError> {
        assert_eq!(sigma.rows(), sigma.cols());
        let scale = sigma.max_abs().max(1.0);
        if sigma.asymmetry() > 1e-10 * scale {
            return Err(RkhsError::Factorization(String::from("matrix is not symmetric")));
        }
        let mut sigma = sigma;
        sigma.symmetrize_mut();
        Ok(GramMatrix { sigma, kernel_grid: None, grid_fingerprint: grid.fingerprint() })
    }

    /// `xi` evaluated on the shared grid: `K_grid (w o Z^T c)`.
    pub fn xi_on_grid(
        &self,
        samples: &[FunctionalSample],
        c: &[f64],
    ) -> Result<Vec<f64>, RkhsError> {
        let k = self.kernel_grid.as_ref().ok_or(RkhsError::MissingKernelCache)?;
        if samples.is_empty() {
            return Err(RkhsError::EmptySamples);
        }
        if samples[0].grid().fingerprint() != self.grid_fingerprint {
            return Err(RkhsError::GridMismatch);
        }
        if c.len() != samples.len() {
            return Err(RkhsError::LengthMismatch {
                context: "representer coefficients",
                expected: samples.len(),
                got: c.len(),
            });
        }
        let v = weighted_combination(samples, c);
        Ok(k.matvec(&v))
    }
}

// w o (Z^T c): the quadrature-weighted combination of the samples.
fn weighted_combination(samples: &[FunctionalSample], c: &[f64]) -> Vec<f64> {
    let m = samples[0].grid().len();
    let mut u = vec![0.0; m];
    for (ci, s) in c.iter().zip(samples) {
        if *ci != 0.0 {
            for (acc, &z) in u.iter_mut().zip(s.values()) {
                *acc += ci * z;
            }
        }
    }
    for (acc, &w) in u.iter_mut().zip(samples[0].quad_weights()) {
        *acc *= w;
    }
    u
}

/// Build the Gram matrix `Sigma = V K V^T` with `V[i,j] = w_j Z_i(t_j)`.
pub fn gram(spec: &KernelSpec, samples: &[FunctionalSample]) -> Result<GramMatrix, RkhsError> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(RkhsError::EmptySamples);
    }
    let grid = samples[0].grid();
    if samples.iter().any(|s| s.grid().fingerprint() != grid.fingerprint()) {
        return Err(RkhsError::GridMismatch);
    }
    match (spec, grid.is_tensor()) {
        (KernelSpec::Scalar(_), false) | (KernelSpec::TensorProduct(..), true) => {}
        _ => return Err(RkhsError::KernelDimensionMismatch),
    }

    let m = grid.len();
    let points = grid.points();
    let mut k = Matrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let v = kernel_eval(spec, &points[a], &points[b])?;
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }

    let n = samples.len();
    let w = grid.quad_weights();
    let mut v = Matrix::zeros(n, m);
    for (i, s) in samples.iter().enumerate() {
        for ((dst, &z), &wj) in v.row_mut(i).iter_mut().zip(s.values()).zip(w) {
            *dst = wj * z;
        }
    }

    let b = v.matmul(&k); // n*m^2
    let mut sigma = b.matmul_transpose_b(&v); // n^2*m
    sigma.symmetrize_mut();
    Ok(GramMatrix { sigma, kernel_grid: Some(k), grid_fingerprint: grid.fingerprint() })
}

/// The profiling smoother `P_lambda` with its cached factorization of
/// `(Sigma + n lambda I)`.
#[derive(Clone, Debug)]
pub struct Smoother {
    p_lambda: Matrix,
    shifted: Matrix,
    factor: Cholesky,
    lambda: f64,
    n: usize,
    trace_p: f64,
    /// Diagonal clamp applied when round-off made `Sigma` slightly
    /// indefinite; `None` when no repair was needed.
    psd_repair: Option<f64>,
}

impl Smoother {
    pub fn new(gram: &GramMatrix, lambda: f64) -> Result<Self, RkhsError> {
        if !(lambda > 0.0) {
            return Err(RkhsError::LambdaNotPositive { got: lambda });
        }
        let n = gram.n();
        let nl = n as f64 * lambda;
        let mut shifted = gram.sigma().clone();
        shifted.add_diag_mut(nl);
        let (factor, psd_repair) = match Cholesky::new(&shifted) {
            Ok(f) => (f, None),
            Err(_) => {
                // Sigma is PSD by construction up to quadrature round-off;
                // clamp tiny negative spectrum, reject anything worse.
                let eig = sym_eigen(gram.sigma())
                    .map_err(|e| RkhsError::Factorization(e.detail))?;
                let min_eig = eig.values.first().copied().unwrap_or(0.0);
                let norm = eig
                    .values
                    .iter()
                    .fold(0.0f64, |m, &v| m.max(v.abs()));
                if min_eig < -1e-8 * norm.max(1e-300) {
                    return Err(RkhsError::NotPositiveSemidefinite { min_eigenvalue: min_eig });
                }
                let clamp = min_eig.abs();
                shifted.add_diag_mut(clamp);
                let f = Cholesky::new(&shifted).map_err(|e| {
                    RkhsError::Factorization(alloc::format!(
                        "shifted Gram matrix not positive definite at pivot {}",
                        e.pivot
                    ))
                })?;
                (f, Some(clamp))
            }
        };
        let mut p_lambda = factor.inverse();
        p_lambda.scale_mut(nl);
        p_lambda.symmetrize_mut();
        let trace_p = p_lambda.trace();
        Ok(Smoother { p_lambda, shifted, factor, lambda, n, trace_p, psd_repair })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn p_lambda(&self) -> &Matrix {
        &self.p_lambda
    }

    pub fn trace_p(&self) -> f64 {
        self.trace_p
    }

    pub fn psd_repair(&self) -> Option<f64> {
        self.psd_repair
    }

    /// `P_lambda v` through the explicit matrix.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.p_lambda.matvec(v)
    }

    /// `P_lambda v = n lambda (Sigma + n lambda I)^{-1} v` through the
    /// refined factorization solve; more accurate than the explicit matrix.
    pub fn apply_precise(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.factor.solve_refined(&self.shifted, v, 2);
        let nl = self.n as f64 * self.lambda;
        for o in &mut out {
            *o *= nl;
        }
        out
    }

    /// Solve `(Sigma + n lambda I) c = residual`, the representer system.
    pub fn representer_coeffs(&self, residual: &[f64]) -> Result<Vec<f64>, RkhsError> {
        if residual.len() != self.n {
            return Err(RkhsError::LengthMismatch {
                context: "representer residual",
                expected: self.n,
                got: residual.len(),
            });
        }
        Ok(self.factor.solve_refined(&self.shifted, residual, 2))
    }
}

/// Spec-shaped constructor: the smoother for a Gram matrix at `lambda`.
pub fn smoother(gram: &GramMatrix, lambda: f64) -> Result<Smoother, RkhsError> {
    Smoother::new(gram, lambda)
}

/// Representer coefficients `c = (Sigma + n lambda I)^{-1} residual`.
pub fn representer_coeffs(
    gram: &GramMatrix,
    lambda: f64,
    residual: &[f64],
) -> Result<Vec<f64>, RkhsError> {
    Smoother::new(gram, lambda)?.representer_coeffs(residual)
}

/// Evaluate `xi(t) = sum_i c_i integral K(t,s) Z_i(s) ds` at the given
/// points via quadrature on the samples' grid. Linear in `c`.
pub fn eval_xi(
    spec: &KernelSpec,
    samples: &[FunctionalSample],
    c: &[f64],
    points: &[Point],
) -> Result<Vec<f64>, RkhsError> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(RkhsError::EmptySamples);
    }
    if c.len() != samples.len() {
        return Err(RkhsError::LengthMismatch {
            context: "representer coefficients",
            expected: samples.len(),
            got: c.len(),
        });
    }
    let grid_points = samples[0].grid().points();
    let v = weighted_combination(samples, c);
    let mut out = Vec::with_capacity(points.len());
    for t in points {
        let mut acc = 0.0;
        for (s, &vj) in grid_points.iter().zip(&v) {
            acc += kernel_eval(spec, t, s)? * vj;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Squared RKHS norm of the representer expansion: `c^T Sigma c`.
pub fn xi_rkhs_norm_sq(gram: &GramMatrix, c: &[f64]) -> Result<f64, RkhsError> {
    if c.len() != gram.n() {
        return Err(RkhsError::LengthMismatch {
            context: "representer coefficients",
            expected: gram.n(),
            got: c.len(),
        });
    }
    Ok(dot(&gram.sigma().matvec(c), c))
}
