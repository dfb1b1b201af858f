//! Synthetic data generators with exact control of the eigenbasis, score
//! variances, cross-correlations, and the true coefficients.
//!
//! The functional predictor is `Z(t) = sum_{k=1}^{50} U_k phi_k(t)` on a
//! uniform grid over `[0,1]`, with Fourier-type orthonormal eigenfunctions
//! and Gaussian scores whose variances peak at index `c0`. The scalar
//! covariates are jointly normal with unit variance and an AR(rho2)
//! Toeplitz correlation, cross-correlated with the first four scores
//! through `corr(U_k, X_l) = rho1^{|k-l|+1}`. The response adds the exact
//! eigen-coordinate inner product `sum_k U_k xi_k` (orthonormality makes
//! the integral exact) plus standard normal noise.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{center, Dataset, FunctionalSample, Grid, RawData};
use crate::linalg::{dot, Cholesky, Matrix};

/// Number of eigenfunctions in the expansion.
pub const NUM_MODES: usize = 50;

/// How the score variances decay away from the peak index `c0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarianceMode {
    /// `Var(U_k) = 16 (|k - c0| + 1)^{-2}`: variances peak at `c0` and
    /// decay, so the leading principal components sit near `c0`.
    Decaying,
    /// `Var(U_k) = 16 |k - c0| + 1`: variances grow away from `c0`; kept
    /// for sensitivity runs.
    Literal,
}

/// Scenario parameters shared by both generator variants.
#[derive(Clone, Debug)]
pub struct Example1Config {
    pub n: usize,
    pub p: usize,
    pub c0: u32,
    pub rho1: f64,
    pub rho2: f64,
    /// Grid points of the functional predictor.
    pub m: usize,
    pub noise_sd: f64,
    pub variance_mode: VarianceMode,
    pub seed: u64,
}

impl Example1Config {
    /// The base scenario: `c0 = 1`, `rho1 = 0.2`, `rho2 = 0.3`, `m = 100`,
    /// unit noise, decaying score variances.
    pub fn new(n: usize, p: usize, seed: u64) -> Self {
        Example1Config {
            n,
            p,
            c0: 1,
            rho1: 0.2,
            rho2: 0.3,
            m: 100,
            noise_sd: 1.0,
            variance_mode: VarianceMode::Decaying,
            seed,
        }
    }
}

/// The realized truth of one generated dataset.
#[derive(Clone, Debug)]
pub struct TruthRecord {
    /// True scalar coefficients `(3, 1.5, 1, 2.5, 2, 0, ..., 0)`.
    pub beta: Vec<f64>,
    /// True functional coefficient in eigen-coordinates.
    pub xi_coeffs: Vec<f64>,
    /// Realized scores, n x 50.
    pub u_scores: Matrix,
    /// Noise variance of the generating model.
    pub noise_variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SimError {
    InvalidConfig(String),
    EigenIndexOutOfRange { k: usize },
    CovarianceNotRepairable { deficit: f64, rho1: f64, rho2: f64, mode: VarianceMode },
    Data(String),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidConfig(s) => write!(f, "invalid scenario configuration: {s}"),
            SimError::EigenIndexOutOfRange { k } => {
                write!(f, "eigenfunction index {k} outside 1..={NUM_MODES}")
            }
            SimError::CovarianceNotRepairable { deficit, rho1, rho2, mode } => write!(
                f,
                "joint covariance not repairable (deficit {deficit:.3e}) for rho1={rho1}, rho2={rho2}, mode={mode:?}"
            ),
            SimError::Data(s) => write!(f, "data assembly failed: {s}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SimError {}

/// Fourier-type orthonormal eigenfunctions on `[0,1]`:
/// `phi_{2l-1}(t) = sqrt(2) cos((2l-1) pi t)`,
/// `phi_{2l}(t)   = sqrt(2) sin((2l-1) pi t)`.
pub fn eigenbasis(k: usize, t: f64) -> Result<f64, SimError> {
    if k == 0 || k > NUM_MODES {
        return Err(SimError::EigenIndexOutOfRange { k });
    }
    let sqrt2 = libm::sqrt(2.0);
    let freq = if k % 2 == 1 { k as f64 } else { (k - 1) as f64 } * core::f64::consts::PI;
    if k % 2 == 1 {
        Ok(sqrt2 * libm::cos(freq * t))
    } else {
        Ok(sqrt2 * libm::sin(freq * t))
    }
}

fn score_variance(k: usize, c0: u32, mode: VarianceMode) -> f64 {
    let gap = (k as f64 - c0 as f64).abs() + 1.0;
    match mode {
        VarianceMode::Decaying => 16.0 / (gap * gap),
        VarianceMode::Literal => 16.0 * (gap - 1.0) + 1.0,
    }
}

/// True scalar coefficients padded to length p.
pub fn true_beta(p: usize) -> Vec<f64> {
    let mut beta = vec![0.0; p];
    for (slot, v) in beta.iter_mut().zip([3.0, 1.5, 1.0, 2.5, 2.0]) {
        *slot = v;
    }
    beta
}

/// True functional coefficient in eigen-coordinates:
/// `xi_k = amplitude * (-1)^{k+1} k^{-2}`.
pub fn xi_coefficients(amplitude: f64) -> Vec<f64> {
    (1..=NUM_MODES)
        .map(|k| {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            amplitude * sign / (k as f64 * k as f64)
        })
        .collect()
}

/// A scenario with its joint-covariance factorization precomputed, so many
/// replicates (and the fresh test sets) can be drawn cheaply.
pub struct ScenarioGenerator {
    config: Example1Config,
    xi_coeffs: Vec<f64>,
    beta: Vec<f64>,
    grid: Arc<Grid>,
    /// Eigenfunctions on the grid, NUM_MODES x m.
    phi: Matrix,
    /// Lower Cholesky factor of the joint (U, X) covariance.
    factor: Matrix,
    /// Diagonal jitter applied when the covariance needed repair.
    jitter: Option<f64>,
}

impl ScenarioGenerator {
    /// Estimation scenario: `xi` amplitude 4.
    pub fn example1(config: Example1Config) -> Result<Self, SimError> {
        Self::with_amplitude(config, 4.0)
    }

    /// Testing scenario: `xi` amplitude `b >= 0` (b = 0 is the null).
    pub fn example2(config: Example1Config, b: f64) -> Result<Self, SimError> {
        if !(b >= 0.0) {
            return Err(SimError::InvalidConfig(String::from("signal strength b must be >= 0")));
        }
        Self::with_amplitude(config, b)
    }

    fn with_amplitude(config: Example1Config, amplitude: f64) -> Result<Self, SimError> {
        validate_config(&config)?;
        let grid = Grid::uniform(config.m).map_err(|e| SimError::Data(error_text(&e)))?;
        let mut phi = Matrix::zeros(NUM_MODES, config.m);
        for k in 1..=NUM_MODES {
            for (j, pt) in grid.points().iter().enumerate() {
                let t = match pt {
                    crate::data::Point::One(t) => *t,
                    _ => unreachable!("uniform grid is one-dimensional"),
                };
                phi[(k - 1, j)] = eigenbasis(k, t)?;
            }
        }

        let (factor, jitter) = factor_joint_covariance(&config)?;
        Ok(ScenarioGenerator {
            xi_coeffs: xi_coefficients(amplitude),
            beta: true_beta(config.p),
            grid,
            phi,
            factor,
            jitter,
            config,
        })
    }

    pub fn config(&self) -> &Example1Config {
        &self.config
    }

    pub fn jitter_applied(&self) -> Option<f64> {
        self.jitter
    }

    pub fn xi_coefficients(&self) -> &[f64] {
        &self.xi_coeffs
    }

    pub fn true_beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// The true functional coefficient evaluated on the grid.
    pub fn xi_star_on_grid(&self) -> Vec<f64> {
        self.phi.tr_matvec(&self.xi_coeffs)
    }

    /// Draw `n` raw (uncentered) observations with the given seed. The
    /// draw order is fixed (per subject: 50+p joint normals, then one
    /// noise normal), so equal seeds give bit-identical data.
    pub fn generate_raw(&self, seed: u64, n: usize) -> Result<(RawData, Matrix), SimError> {
        let p = self.config.p;
        let q = NUM_MODES + p;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = Matrix::zeros(n, NUM_MODES);
        let mut x = Matrix::zeros(n, p);
        let mut y = vec![0.0; n];
        let mut z_rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut draw = vec![0.0; q];
        for i in 0..n {
            for d in draw.iter_mut() {
                *d = rng.sample(StandardNormal);
            }
            // lower-triangular multiply: joint sample = L * draw
            for k in 0..q {
                let l_row = &self.factor.row(k)[..=k];
                let v = dot(l_row, &draw[..=k]);
                if k < NUM_MODES {
                    u[(i, k)] = v;
                } else {
                    x[(i, k - NUM_MODES)] = v;
                }
            }
            let zi = self.phi.tr_matvec(u.row(i));
            let signal = dot(u.row(i), &self.xi_coeffs);
            let noise: f64 = rng.sample(StandardNormal);
            y[i] = dot(x.row(i), &self.beta) + signal + self.config.noise_sd * noise;
            z_rows.push(zi);
        }
        let z = z_rows
            .into_iter()
            .map(|vals| FunctionalSample::new(self.grid.clone(), vals))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| SimError::Data(error_text(&e)))?;
        let raw = RawData::new(y, x, z, vec![]).map_err(|e| SimError::Data(error_text(&e)))?;
        Ok((raw, u))
    }

    /// Centered dataset plus the truth record, using the config's seed.
    pub fn generate(&self) -> Result<(Dataset, TruthRecord), SimError> {
        self.generate_with_seed(self.config.seed)
    }

    pub fn generate_with_seed(&self, seed: u64) -> Result<(Dataset, TruthRecord), SimError> {
        let (raw, u) = self.generate_raw(seed, self.config.n)?;
        let dataset = center(raw).map_err(|e| SimError::Data(error_text(&e)))?;
        let truth = TruthRecord {
            beta: self.beta.clone(),
            xi_coeffs: self.xi_coeffs.clone(),
            u_scores: u,
            noise_variance: self.config.noise_sd * self.config.noise_sd,
        };
        Ok((dataset, truth))
    }
}

fn validate_config(config: &Example1Config) -> Result<(), SimError> {
    if config.n < 2 {
        return Err(SimError::InvalidConfig(String::from("n must be at least 2")));
    }
    if config.p < 5 {
        return Err(SimError::InvalidConfig(String::from(
            "p must be at least 5 to hold the five nonzero coefficients",
        )));
    }
    if config.m < 2 {
        return Err(SimError::InvalidConfig(String::from("m must be at least 2")));
    }
    if !(config.rho1.abs() < 1.0) || !(config.rho2.abs() < 1.0) {
        return Err(SimError::InvalidConfig(String::from("correlations must lie in (-1, 1)")));
    }
    if !(config.noise_sd >= 0.0) {
        return Err(SimError::InvalidConfig(String::from("noise_sd must be nonnegative")));
    }
    if config.c0 == 0 {
        return Err(SimError::InvalidConfig(String::from("c0 must be a positive index")));
    }
    Ok(())
}

/// Joint covariance of `(U_1..U_50, X_1..X_p)`:
/// `Var(U_k) = sigma_k^2`, `Var(X) = AR(rho2)` Toeplitz, and
/// `Cov(U_k, X_l) = rho1^{|k-l|+1} sigma_k` for `k <= 4` (X has unit
/// variance, so the paper's correlation scales by `sigma_k`).
fn joint_covariance(config: &Example1Config) -> Matrix {
    let p = config.p;
    let q = NUM_MODES + p;
    let mut c = Matrix::zeros(q, q);
    for k in 1..=NUM_MODES {
        c[(k - 1, k - 1)] = score_variance(k, config.c0, config.variance_mode);
    }
    for l in 0..p {
        for l2 in 0..p {
            c[(NUM_MODES + l, NUM_MODES + l2)] = libm::pow(config.rho2, (l as f64 - l2 as f64).abs());
        }
    }
    for k in 1..=4usize.min(NUM_MODES) {
        let sigma_k = libm::sqrt(score_variance(k, config.c0, config.variance_mode));
        for l in 1..=p {
            let cov = libm::pow(config.rho1, (k as f64 - l as f64).abs() + 1.0) * sigma_k;
            c[(k - 1, NUM_MODES + l - 1)] = cov;
            c[(NUM_MODES + l - 1, k - 1)] = cov;
        }
    }
    c
}

/// Verify the joint covariance has minimum eigenvalue >= 1e-8 (via a
/// shifted Cholesky attempt); jitter by `deficit + 1e-8` when mildly
/// violated, reject when the deficit exceeds 1e-2.
fn factor_joint_covariance(config: &Example1Config) -> Result<(Matrix, Option<f64>), SimError> {
    let mut c = joint_covariance(config);
    c.add_diag_mut(-1e-8);
    let shifted_ok = Cholesky::new(&c).is_ok();
    c.add_diag_mut(1e-8);
    if shifted_ok {
        let f = Cholesky::new(&c).map_err(|_| SimError::CovarianceNotRepairable {
            deficit: 0.0,
            rho1: config.rho1,
            rho2: config.rho2,
            mode: config.variance_mode,
        })?;
        return Ok((lower_of(f, c.rows()), None));
    }
    // estimate the deficit by doubling a diagonal shift
    let mut deficit = 1e-10;
    loop {
        let mut trial = c.clone();
        trial.add_diag_mut(deficit);
        if Cholesky::new(&trial).is_ok() {
            break;
        }
        deficit *= 2.0;
        if deficit > 1e-2 {
            return Err(SimError::CovarianceNotRepairable {
                deficit,
                rho1: config.rho1,
                rho2: config.rho2,
                mode: config.variance_mode,
            });
        }
    }
    let jitter = deficit + 1e-8;
    c.add_diag_mut(jitter);
    let f = Cholesky::new(&c).map_err(|_| SimError::CovarianceNotRepairable {
        deficit,
        rho1: config.rho1,
        rho2: config.rho2,
        mode: config.variance_mode,
    })?;
    Ok((lower_of(f, c.rows()), Some(jitter)))
}

fn lower_of(f: Cholesky, _n: usize) -> Matrix {
    f.into_lower_factor()
}

fn error_text(e: &dyn fmt::Display) -> String {
    use alloc::string::ToString;
    e.to_string()
}

/// Estimation scenario (`xi` amplitude 4): centered dataset plus truth.
pub fn gen_example1(config: Example1Config) -> Result<(Dataset, TruthRecord), SimError> {
    ScenarioGenerator::example1(config)?.generate()
}

/// Testing scenario (`xi` amplitude `b`): centered dataset plus truth.
pub fn gen_example2(config: Example1Config, b: f64) -> Result<(Dataset, TruthRecord), SimError> {
    ScenarioGenerator::example2(config, b)?.generate()
}
