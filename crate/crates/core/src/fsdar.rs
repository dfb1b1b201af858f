//! Support detection and root finding for the profiled l0 problem.
//!
//! After profiling out the functional coefficient, the fit solves
//!
//! ```text
//! min_beta (2n)^{-1} (Y - X beta)' P_lambda (Y - X beta) + tau ||beta||_0
//! ```
//!
//! by alternating a top-J support selection on `|beta + d|` (where
//! `d = X' P_lambda (Y - X beta) / n` is the dual) with an exact weighted
//! least-squares refit on the selected support, stopping when the support
//! is stable. A converged pair `(beta, d)` satisfies the hard-thresholding
//! KKT conditions `beta = H_tau(beta + d)`, `d_A = 0`, which certifies a
//! local minimizer; the certificate residual is reported with every fit.
//!
//! Always-active covariates are forced into the support each iteration and
//! excluded from the top-J competition (they are unpenalized).

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::data::{recover_intercept, Dataset};
use crate::linalg::{at_b, dot, Cholesky, Matrix};
use crate::rkhs::{GramMatrix, RkhsError, Smoother};

/// Deterministic rule for breaking ties in the top-J selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieBreak {
    /// Prefer the lower column index when `|beta_i + d_i|` values tie at
    /// the selection threshold.
    #[default]
    LowerIndex,
}

/// Solver inputs besides the data: sparsity budget, smoothing parameter,
/// iteration cap, and the initial coefficient vector.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Number of penalized covariates allowed into the support (always-
    /// active covariates come on top of this budget).
    pub sparsity: usize,
    pub lambda: f64,
    pub max_iter: usize,
    /// Starting value; `None` means all zeros.
    pub beta0: Option<Vec<f64>>,
    pub tie_break: TieBreak,
}

impl SolverConfig {
    pub fn new(sparsity: usize, lambda: f64) -> Self {
        SolverConfig { sparsity, lambda, max_iter: 50, beta0: None, tie_break: TieBreak::LowerIndex }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_beta0(mut self, beta0: Vec<f64>) -> Self {
        self.beta0 = Some(beta0);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    /// Iteration cap reached before the support stabilized.
    MaxIter,
    /// A support revisited non-consecutively; the best-objective iterate
    /// was returned.
    Cycled,
}

/// Full fit: sparse coefficients, representer expansion, evaluated
/// functional estimate, and the certificate/diagnostic values.
#[derive(Clone, Debug)]
pub struct FitResult {
    /// Length-p coefficient vector; inactive entries are exactly zero.
    pub beta: Vec<f64>,
    /// Sorted indices with nonzero coefficients (always-active included).
    pub active_set: Vec<usize>,
    /// Representer coefficients, length n (zeros for scalar-only fits).
    pub c: Vec<f64>,
    /// Functional estimate on the observation grid.
    pub xi_eval: Vec<f64>,
    /// Intercept recovered from the centering record.
    pub intercept: f64,
    pub lambda: f64,
    /// Implied hard-thresholding level: `sqrt(2 tau)` equals the J-th
    /// largest `|beta + d|` over penalized coordinates.
    pub tau_effective: f64,
    /// The sparsity budget J the fit was run with.
    pub sparsity: usize,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Value of the penalized objective at the fit.
    pub objective: f64,
    pub status: FitStatus,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.status == FitStatus::Converged
    }
}

/// Per-iteration record of the solver path.
#[derive(Clone, Debug, Default)]
pub struct SolverTrace {
    /// Active set after each support selection.
    pub active_sets: Vec<Vec<usize>>,
    /// Profiled quadratic loss after each refit.
    pub objectives: Vec<f64>,
    /// Final dual vector (zeroed on the active set, as the iteration
    /// defines it).
    pub dual: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SolverError {
    InvalidConfig(String),
    /// The active-set normal equations were rank deficient even after a
    /// small jitter; the offending columns are reported.
    CollinearActiveSet { columns: Vec<usize> },
    Rkhs(RkhsError),
}

impl fmt::Display for SolverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverError::InvalidConfig(s) => write!(f, "invalid solver configuration: {s}"),
            SolverError::CollinearActiveSet { columns } => {
                write!(f, "collinear active set: columns {columns:?}")
            }
            SolverError::Rkhs(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SolverError {}

impl From<RkhsError> for SolverError {
    fn from(e: RkhsError) -> Self {
        SolverError::Rkhs(e)
    }
}

/// Elementwise hard thresholding: zero where `|v_i| < sqrt(2 tau)`, keep
/// otherwise (the boundary is kept).
pub fn hard_threshold(v: &[f64], tau: f64) -> Vec<f64> {
    debug_assert!(tau >= 0.0);
    let thr = libm::sqrt(2.0 * tau);
    v.iter().map(|&x| if x.abs() < thr { 0.0 } else { x }).collect()
}

/// The J-th largest entry of `|v|`; duplicates count separately.
pub fn kth_largest_abs(v: &[f64], j: usize) -> Result<f64, SolverError> {
    if j == 0 || j > v.len() {
        return Err(SolverError::InvalidConfig(alloc::format!(
            "order statistic {j} out of range for length {}",
            v.len()
        )));
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let pos = v.len() - j;
    mags.select_nth_unstable_by(pos, |a, b| a.total_cmp(b));
    Ok(mags[pos])
}

/// The profiled design at a fixed smoothing level: caches `P_lambda X` and
/// `P_lambda Y` so that sweeps over the sparsity budget (and bootstrap
/// refits over new responses) reuse the expensive products. The
/// `scalar_only` variant fits the pure scalar model (`P = I`, no
/// functional term), which the nullity test needs.
pub struct ProfiledDesign<'a> {
    dataset: &'a Dataset,
    gram: Option<&'a GramMatrix>,
    smoother: Option<Smoother>,
    /// `P_lambda X`; `None` means the identity projection (scalar-only).
    wx: Option<Matrix>,
}

impl<'a> ProfiledDesign<'a> {
    pub fn new(
        dataset: &'a Dataset,
        gram: &'a GramMatrix,
        lambda: f64,
    ) -> Result<Self, SolverError> {
        if gram.n() != dataset.n() {
            return Err(SolverError::InvalidConfig(alloc::format!(
                "Gram matrix dimension {} does not match n = {}",
                gram.n(),
                dataset.n()
            )));
        }
        if gram.grid_fingerprint() != dataset.grid().fingerprint() {
            return Err(SolverError::Rkhs(RkhsError::GridMismatch));
        }
        let smoother = Smoother::new(gram, lambda)?;
        let wx = smoother.p_lambda().matmul(dataset.x());
        Ok(ProfiledDesign { dataset, gram: Some(gram), smoother: Some(smoother), wx: Some(wx) })
    }

    /// Identity projection: ordinary l0-constrained least squares on the
    /// scalar covariates alone.
    pub fn scalar_only(dataset: &'a Dataset) -> Self {
        ProfiledDesign { dataset, gram: None, smoother: None, wx: None }
    }

    pub fn smoother(&self) -> Option<&Smoother> {
        self.smoother.as_ref()
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    fn wx(&self) -> &Matrix {
        self.wx.as_ref().unwrap_or_else(|| self.dataset.x())
    }

    fn project(&self, v: &[f64]) -> Vec<f64> {
        match &self.smoother {
            Some(s) => s.apply(v),
            None => v.to_vec(),
        }
    }

    fn project_precise(&self, v: &[f64]) -> Vec<f64> {
        match &self.smoother {
            Some(s) => s.apply_precise(v),
            None => v.to_vec(),
        }
    }

    /// `(2n)^{-1} r' P_lambda r` for `r = y - X beta`.
    pub fn quadratic_loss(&self, y: &[f64], beta: &[f64]) -> f64 {
        let r = self.residual(y, beta);
        let pr = self.project_precise(&r);
        dot(&r, &pr) / (2.0 * y.len() as f64)
    }

    fn residual(&self, y: &[f64], beta: &[f64]) -> Vec<f64> {
        let xb = self.dataset.x().matvec(beta);
        y.iter().zip(&xb).map(|(a, b)| a - b).collect()
    }

    pub fn solve(
        &self,
        config: &SolverConfig,
    ) -> Result<(FitResult, SolverTrace), SolverError> {
        self.solve_with_response(config, self.dataset.y())
    }

    /// Run the support-detection iteration against an alternate response
    /// (used by the residual bootstrap); `y` must have length n.
    pub fn solve_with_response(
        &self,
        config: &SolverConfig,
        y: &[f64],
    ) -> Result<(FitResult, SolverTrace), SolverError> {
        let n = self.dataset.n();
        let p = self.dataset.p();
        let aa = self.dataset.always_active();
        validate_config(config, n, p, aa.len(), y.len())?;

        let x = self.dataset.x();
        let wx = self.wx();
        let py = self.project_precise(y);
        let candidates: Vec<usize> = {
            let aa_set: BTreeSet<usize> = aa.iter().copied().collect();
            (0..p).filter(|i| !aa_set.contains(i)).collect()
        };

        let mut beta: Vec<f64> = match &config.beta0 {
            Some(b0) => b0.clone(),
            None => vec![0.0; p],
        };
        // d = X' P (y - X beta) / n = (P X)' r / n
        let mut dual = {
            let r = self.residual(y, &beta);
            let mut d = wx.tr_matvec(&r);
            for v in &mut d {
                *v /= n as f64;
            }
            d
        };

        let mut trace = SolverTrace::default();
        let mut prev_active: Option<Vec<usize>> = None;
        let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
        let mut best: Option<(f64, Vec<f64>, Vec<f64>, Vec<usize>)> = None;
        let mut status = FitStatus::MaxIter;
        let mut iterations = 0usize;

        loop {
            let scores: Vec<f64> = beta.iter().zip(&dual).map(|(b, d)| b + d).collect();
            let active = select_support(&scores, &candidates, aa, config.sparsity);

            if prev_active.as_ref() == Some(&active) {
                status = FitStatus::Converged;
                break;
            }
            if seen.contains(&active) {
                status = FitStatus::Cycled;
                if let Some((_, b_best, d_best, a_best)) = best.take() {
                    beta = b_best;
                    dual = d_best;
                    prev_active = Some(a_best);
                }
                break;
            }
            if iterations >= config.max_iter {
                break;
            }
            seen.insert(active.clone());
            iterations += 1;

            // exact weighted least squares on the support
            let xa = x.select_columns(&active);
            let wa = wx.select_columns(&active);
            let mut normal = at_b(&xa, &wa);
            normal.symmetrize_mut();
            let rhs = xa.tr_matvec(&py);
            let factor = match Cholesky::new(&normal) {
                Ok(f) => f,
                Err(_) => {
                    let trace = normal.trace();
                    if !(trace > 0.0) {
                        return Err(SolverError::CollinearActiveSet { columns: active });
                    }
                    let jitter = 1e-10 * trace / active.len() as f64;
                    let mut jittered = normal.clone();
                    jittered.add_diag_mut(jitter);
                    match Cholesky::new(&jittered) {
                        Ok(f) => f,
                        Err(_) => {
                            return Err(SolverError::CollinearActiveSet { columns: active });
                        }
                    }
                }
            };
            let beta_a = factor.solve_refined(&normal, &rhs, 1);

            beta = vec![0.0; p];
            for (&col, &b) in active.iter().zip(&beta_a) {
                beta[col] = b;
            }
            let r_active = {
                let fit = xa.matvec(&beta_a);
                y.iter().zip(&fit).map(|(a, b)| a - b).collect::<Vec<f64>>()
            };
            dual = wx.tr_matvec(&r_active);
            for v in &mut dual {
                *v /= n as f64;
            }
            for &col in &active {
                dual[col] = 0.0;
            }

            // profiled quadratic loss of the iterate (explicit-matrix path
            // is accurate enough for the trace and the cycle guard)
            let pr = self.project(&r_active);
            let obj = dot(&r_active, &pr) / (2.0 * n as f64);
            trace.active_sets.push(active.clone());
            trace.objectives.push(obj);
            if best.as_ref().map_or(true, |(b, ..)| obj < *b) {
                best = Some((obj, beta.clone(), dual.clone(), active.clone()));
            }
            prev_active = Some(active);
        }

        let active = prev_active.unwrap_or_default();
        trace.dual = dual.clone();
        let fit = self.finish(config, y, beta, dual, active, iterations, status)?;
        Ok((fit, trace))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        config: &SolverConfig,
        y: &[f64],
        beta: Vec<f64>,
        dual: Vec<f64>,
        active: Vec<usize>,
        iterations: usize,
        status: FitStatus,
    ) -> Result<FitResult, SolverError> {
        let n = self.dataset.n();
        let aa: BTreeSet<usize> = self.dataset.always_active().iter().copied().collect();
        let r = self.residual(y, &beta);

        let (c, xi_eval, fit_fun, penalty) = match (&self.smoother, self.gram) {
            (Some(s), Some(g)) => {
                let c = s.representer_coeffs(&r)?;
                let xi = g.xi_on_grid(self.dataset.z(), &c)?;
                let fit_fun = g.sigma().matvec(&c);
                let norm_sq_h = dot(&fit_fun, &c);
                (c, xi, fit_fun, 0.5 * config.lambda * norm_sq_h)
            }
            _ => (vec![0.0; n], vec![0.0; self.dataset.grid().len()], vec![0.0; n], 0.0),
        };

        // tau implied by the J-th largest |beta + d| over penalized coords
        let scores: Vec<f64> = beta.iter().zip(&dual).map(|(b, d)| b + d).collect();
        let penalized_scores: Vec<f64> = (0..scores.len())
            .filter(|i| !aa.contains(i))
            .map(|i| scores[i])
            .collect();
        let sqrt2tau = if penalized_scores.is_empty() {
            0.0
        } else {
            kth_largest_abs(&penalized_scores, config.sparsity.min(penalized_scores.len()))?
        };
        let tau = 0.5 * sqrt2tau * sqrt2tau;

        let nonzero_penalized = beta
            .iter()
            .enumerate()
            .filter(|(i, b)| !aa.contains(i) && **b != 0.0)
            .count();
        let rss: f64 = r.iter().zip(&fit_fun).map(|(ri, fi)| (ri - fi) * (ri - fi)).sum();
        let objective = rss / (2.0 * n as f64) + tau * nonzero_penalized as f64 + penalty;

        let kkt_residual = kkt_residual(&beta, &dual, &active, &aa, tau);

        let intercept = recover_intercept(&beta, &xi_eval, self.dataset.centering())
            .map_err(|e| SolverError::InvalidConfig(alloc::format!("{e}")))?;

        Ok(FitResult {
            beta,
            active_set: active,
            c,
            xi_eval,
            intercept,
            lambda: config.lambda,
            tau_effective: tau,
            sparsity: config.sparsity,
            iterations,
            kkt_residual,
            objective,
            status,
        })
    }
}

fn validate_config(
    config: &SolverConfig,
    n: usize,
    p: usize,
    n_always: usize,
    y_len: usize,
) -> Result<(), SolverError> {
    if y_len != n {
        return Err(SolverError::InvalidConfig(alloc::format!(
            "response length {y_len} does not match n = {n}"
        )));
    }
    if config.sparsity == 0 {
        return Err(SolverError::InvalidConfig(String::from("sparsity must be positive")));
    }
    if config.max_iter == 0 {
        return Err(SolverError::InvalidConfig(String::from("max_iter must be positive")));
    }
    let cap = (n - 1).min(p);
    if config.sparsity + n_always > cap {
        return Err(SolverError::InvalidConfig(alloc::format!(
            "sparsity {} plus {} always-active exceeds min(n-1, p) = {}",
            config.sparsity,
            n_always,
            cap
        )));
    }
    if let Some(b0) = &config.beta0 {
        if b0.len() != p {
            return Err(SolverError::InvalidConfig(alloc::format!(
                "initial beta length {} does not match p = {p}",
                b0.len()
            )));
        }
        if b0.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidConfig(String::from("initial beta must be finite")));
        }
    }
    Ok(())
}

/// Top-J support among the candidates by `|score|`, ties broken toward the
/// lower column index; always-active columns are prepended. Returns a
/// sorted index vector.
fn select_support(
    scores: &[f64],
    candidates: &[usize],
    always_active: &[usize],
    j: usize,
) -> Vec<usize> {
    let mut ranked: Vec<usize> = candidates.to_vec();
    ranked.sort_unstable_by(|&a, &b| {
        scores[b]
            .abs()
            .total_cmp(&scores[a].abs())
            .then(a.cmp(&b))
    });
    let mut active: Vec<usize> = always_active.to_vec();
    active.extend(ranked.into_iter().take(j));
    active.sort_unstable();
    active
}

/// `max(||beta - H_tau(beta + d)||_inf over penalized coords, ||d_A||_inf)`.
fn kkt_residual(
    beta: &[f64],
    dual: &[f64],
    active: &[usize],
    always_active: &BTreeSet<usize>,
    tau: f64,
) -> f64 {
    let thr = libm::sqrt(2.0 * tau);
    let mut worst = 0.0f64;
    for i in 0..beta.len() {
        if always_active.contains(&i) {
            continue;
        }
        let s = beta[i] + dual[i];
        let h = if s.abs() < thr { 0.0 } else { s };
        worst = worst.max((beta[i] - h).abs());
    }
    for &i in active {
        worst = worst.max(dual[i].abs());
    }
    worst
}

/// Fit at a fixed `(lambda, J)`: builds the profiled design and runs the
/// support-detection iteration.
pub fn fsdar_fit(
    dataset: &Dataset,
    gram: &GramMatrix,
    config: &SolverConfig,
) -> Result<(FitResult, SolverTrace), SolverError> {
    ProfiledDesign::new(dataset, gram, config.lambda)?.solve(config)
}

/// Recompute the dual from scratch and return the KKT certificate
/// residual; a value below 1e-8 certifies a local minimizer of the
/// profiled problem.
pub fn kkt_check(
    dataset: &Dataset,
    gram: &GramMatrix,
    fit: &FitResult,
) -> Result<f64, SolverError> {
    let n = dataset.n();
    let smoother = Smoother::new(gram, fit.lambda)?;
    let xb = dataset.x().matvec(&fit.beta);
    let r: Vec<f64> = dataset.y().iter().zip(&xb).map(|(a, b)| a - b).collect();
    let pr = smoother.apply_precise(&r);
    let mut dual = dataset.x().tr_matvec(&pr);
    for v in &mut dual {
        *v /= n as f64;
    }
    let aa: BTreeSet<usize> = dataset.always_active().iter().copied().collect();
    let scores: Vec<f64> = fit.beta.iter().zip(&dual).map(|(b, d)| b + d).collect();
    let penalized: Vec<f64> = (0..scores.len()).filter(|i| !aa.contains(i)).map(|i| scores[i]).collect();
    let sqrt2tau = if penalized.is_empty() {
        0.0
    } else {
        kth_largest_abs(&penalized, fit.sparsity.min(penalized.len()))?
    };
    let tau = 0.5 * sqrt2tau * sqrt2tau;
    Ok(kkt_residual(&fit.beta, &dual, &fit.active_set, &aa, tau))
}

/// `(2n)^{-1} (y - X beta)' P_lambda (y - X beta)`: the quadratic part of
/// the profiled objective, equal to the minimum over `xi` of the full
/// penalized loss at this `beta`.
pub fn profiled_objective(dataset: &Dataset, smoother: &Smoother, beta: &[f64]) -> f64 {
    let xb = dataset.x().matvec(beta);
    let r: Vec<f64> = dataset.y().iter().zip(&xb).map(|(a, b)| a - b).collect();
    let pr = smoother.apply_precise(&r);
    dot(&r, &pr) / (2.0 * dataset.n() as f64)
}

/// Residual sum of squares of the full fit `y - X beta - Sigma c` plus the
/// smoothness penalty: the penalized loss of the joint objective without
/// the l0 term. Shared by the tuning criteria and the nullity test.
pub fn penalized_loss(dataset: &Dataset, gram: &GramMatrix, fit: &FitResult) -> f64 {
    let n = dataset.n() as f64;
    let xb = dataset.x().matvec(&fit.beta);
    let sc = gram.sigma().matvec(&fit.c);
    let rss: f64 = dataset
        .y()
        .iter()
        .zip(&xb)
        .zip(&sc)
        .map(|((y, b), s)| {
            let e = y - b - s;
            e * e
        })
        .sum();
    let norm_h = dot(&sc, &fit.c);
    rss / (2.0 * n) + 0.5 * fit.lambda * norm_h
}

/// Scalar-only penalized loss (no functional term): `||y - X beta||^2 / 2n`.
pub fn scalar_loss(dataset: &Dataset, beta: &[f64]) -> f64 {
    let xb = dataset.x().matvec(beta);
    let rss: f64 = dataset.y().iter().zip(&xb).map(|(y, b)| (y - b) * (y - b)).sum();
    rss / (2.0 * dataset.n() as f64)
}
