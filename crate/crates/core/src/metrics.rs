//! Estimation, selection, and prediction metrics for simulated scenarios,
//! plus marginal screening and the variance-explained decomposition used
//! on real designs.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::data::{variance, Dataset, RawData};
use crate::fsdar::FitResult;
use crate::linalg::{at_b, dot, Cholesky};
use crate::simgen::{eigenbasis, TruthRecord};

#[derive(Clone, Debug, PartialEq)]
pub enum MetricsError {
    GridMismatch { context: &'static str },
    LengthMismatch { context: &'static str, expected: usize, got: usize },
    ZeroVariance,
    ControlsCollinear,
    KeepTopTooLarge { keep_top: usize, p: usize },
    GroupIndexOutOfRange { index: usize, p: usize },
    GroupsOverlap { index: usize },
    NotOneDimensional,
    Sim(String),
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::GridMismatch { context } => write!(f, "grid mismatch in {context}"),
            MetricsError::LengthMismatch { context, expected, got } => {
                write!(f, "length mismatch in {context}: expected {expected}, got {got}")
            }
            MetricsError::ZeroVariance => write!(f, "response has zero variance"),
            MetricsError::ControlsCollinear => write!(f, "control columns are collinear"),
            MetricsError::KeepTopTooLarge { keep_top, p } => {
                write!(f, "keep_top {keep_top} exceeds the number of columns {p}")
            }
            MetricsError::GroupIndexOutOfRange { index, p } => {
                write!(f, "group index {index} out of range for p = {p}")
            }
            MetricsError::GroupsOverlap { index } => {
                write!(f, "predictor {index} appears in more than one group")
            }
            MetricsError::NotOneDimensional => {
                write!(f, "truth evaluation requires a one-dimensional grid")
            }
            MetricsError::Sim(s) => write!(f, "{s}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for MetricsError {}

/// One replicate's worth of evaluation metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    /// Truly nonzero coefficients estimated as zero.
    pub false_zero: usize,
    /// Truly zero coefficients estimated as nonzero (always-active
    /// columns are not counted; they are not subject to selection).
    pub false_nonzero: usize,
    pub mse_beta: f64,
    pub mse_xi: f64,
    pub rmse_xi: f64,
    pub pmse: f64,
    /// Filled in by the runner; zero when timing is disabled.
    pub wall_time_seconds: f64,
    pub lambda: f64,
    pub sparsity: usize,
    pub converged: bool,
}

/// Evaluate a fit against the generating truth and a fresh raw test set:
/// selection errors, coefficient and functional estimation error (by
/// quadrature on the training grid), and prediction MSE on the test set.
pub fn compute_metrics(
    dataset: &Dataset,
    fit: &FitResult,
    truth: &TruthRecord,
    test: &RawData,
) -> Result<MetricsRow, MetricsError> {
    let p = dataset.p();
    if truth.beta.len() != p || fit.beta.len() != p {
        return Err(MetricsError::LengthMismatch {
            context: "coefficient vectors",
            expected: p,
            got: truth.beta.len().min(fit.beta.len()),
        });
    }
    let grid = dataset.grid();
    if fit.xi_eval.len() != grid.len() {
        return Err(MetricsError::GridMismatch { context: "fitted xi vs training grid" });
    }
    if test.z.first().map(|s| s.grid().fingerprint()) != Some(grid.fingerprint()) {
        return Err(MetricsError::GridMismatch { context: "test samples vs training grid" });
    }

    let aa = dataset.always_active();
    let mut false_zero = 0usize;
    let mut false_nonzero = 0usize;
    let mut mse_beta = 0.0;
    for i in 0..p {
        let t = truth.beta[i];
        let e = fit.beta[i];
        if t != 0.0 && e == 0.0 {
            false_zero += 1;
        }
        if t == 0.0 && e != 0.0 && !aa.contains(&i) {
            false_nonzero += 1;
        }
        mse_beta += (e - t) * (e - t);
    }

    let xi_star = xi_truth_on_grid(dataset, truth)?;
    let w = grid.quad_weights();
    let mut mse_xi = 0.0;
    let mut xi_norm = 0.0;
    for ((&xs, &xh), &wj) in xi_star.iter().zip(&fit.xi_eval).zip(w) {
        mse_xi += wj * (xh - xs) * (xh - xs);
        xi_norm += wj * xs * xs;
    }
    let rmse_xi = if xi_norm > 0.0 { mse_xi / xi_norm } else { 0.0 };

    let pmse = prediction_mse(fit, test)?;

    Ok(MetricsRow {
        false_zero,
        false_nonzero,
        mse_beta,
        mse_xi,
        rmse_xi,
        pmse,
        wall_time_seconds: 0.0,
        lambda: fit.lambda,
        sparsity: fit.sparsity,
        converged: fit.converged(),
    })
}

/// The true functional coefficient evaluated on the dataset grid.
pub fn xi_truth_on_grid(dataset: &Dataset, truth: &TruthRecord) -> Result<Vec<f64>, MetricsError> {
    let grid = dataset.grid();
    if grid.is_tensor() {
        return Err(MetricsError::NotOneDimensional);
    }
    let mut xi = Vec::with_capacity(grid.len());
    for pt in grid.points() {
        let t = match pt {
            crate::data::Point::One(t) => t,
            _ => return Err(MetricsError::NotOneDimensional),
        };
        let mut acc = 0.0;
        for (k, &coef) in truth.xi_coeffs.iter().enumerate() {
            if coef != 0.0 {
                acc += coef
                    * eigenbasis(k + 1, t).map_err(|e| MetricsError::Sim(error_text(&e)))?;
            }
        }
        xi.push(acc);
    }
    Ok(xi)
}

/// Mean squared prediction error on raw (uncentered) test data using the
/// fit's intercept, coefficients, and functional estimate.
pub fn prediction_mse(fit: &FitResult, test: &RawData) -> Result<f64, MetricsError> {
    let n = test.y.len();
    if test.x.rows() != n || test.z.len() != n {
        return Err(MetricsError::LengthMismatch {
            context: "test data",
            expected: n,
            got: test.x.rows().min(test.z.len()),
        });
    }
    if test.x.cols() != fit.beta.len() {
        return Err(MetricsError::LengthMismatch {
            context: "test design columns",
            expected: fit.beta.len(),
            got: test.x.cols(),
        });
    }
    let w = test.z[0].quad_weights();
    if w.len() != fit.xi_eval.len() {
        return Err(MetricsError::GridMismatch { context: "test grid vs fitted xi" });
    }
    let mut acc = 0.0;
    for i in 0..n {
        let zint: f64 = test.z[i]
            .values()
            .iter()
            .zip(w)
            .zip(&fit.xi_eval)
            .map(|((z, wv), xv)| z * wv * xv)
            .sum();
        let pred = fit.intercept + dot(test.x.row(i), &fit.beta) + zint;
        let e = test.y[i] - pred;
        acc += e * e;
    }
    Ok(acc / n as f64)
}

/// Marginal screening: residualize the response and every candidate
/// column on the control columns, rank by absolute correlation, and keep
/// the top `keep_top` (rank order; ties resolve toward the lower index).
pub fn screen(
    dataset: &Dataset,
    keep_top: usize,
    controls: &[usize],
) -> Result<Vec<usize>, MetricsError> {
    let p = dataset.p();
    if keep_top > p {
        return Err(MetricsError::KeepTopTooLarge { keep_top, p });
    }
    for &c in controls {
        if c >= p {
            return Err(MetricsError::GroupIndexOutOfRange { index: c, p });
        }
    }
    let x = dataset.x();
    let y = dataset.y();

    // residualizer against the control block
    let residualize: Option<(crate::linalg::Matrix, Cholesky)> = if controls.is_empty() {
        None
    } else {
        let xc = x.select_columns(controls);
        let mut gramc = at_b(&xc, &xc);
        gramc.symmetrize_mut();
        let f = Cholesky::new(&gramc).map_err(|_| MetricsError::ControlsCollinear)?;
        Some((xc, f))
    };

    let resid = |v: &[f64]| -> Vec<f64> {
        match &residualize {
            None => v.to_vec(),
            Some((xc, f)) => {
                let rhs = xc.tr_matvec(v);
                let coef = f.solve(&rhs);
                let fitted = xc.matvec(&coef);
                v.iter().zip(&fitted).map(|(a, b)| a - b).collect()
            }
        }
    };

    let ry = resid(y);
    let ry_norm = libm::sqrt(dot(&ry, &ry));
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for jcol in 0..p {
        if controls.contains(&jcol) {
            continue;
        }
        let col = x.column(jcol);
        let rc = resid(&col);
        let denom = ry_norm * libm::sqrt(dot(&rc, &rc));
        let corr = if denom > 0.0 { (dot(&ry, &rc) / denom).abs() } else { 0.0 };
        scored.push((corr, jcol));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(keep_top).map(|(_, j)| j).collect())
}

/// A block of the variance-explained partition.
#[derive(Clone, Debug, PartialEq)]
pub enum Group {
    /// A set of scalar predictor columns.
    Scalars(Vec<usize>),
    /// The functional predictor.
    Functional,
}

/// Per-group proportion of the response variance explained by the group's
/// fitted contribution: `Var(X_G' beta_G) / Var(y)` for scalar groups and
/// `Var(integral Z xi)/Var(y)` for the functional group.
pub fn variance_explained(
    dataset: &Dataset,
    fit: &FitResult,
    groups: &[Group],
) -> Result<Vec<f64>, MetricsError> {
    let var_y = variance(dataset.y());
    if var_y <= 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let p = dataset.p();
    let mut seen = alloc::vec![false; p];
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let contribution: Vec<f64> = match g {
            Group::Scalars(idx) => {
                for &i in idx {
                    if i >= p {
                        return Err(MetricsError::GroupIndexOutOfRange { index: i, p });
                    }
                    if seen[i] {
                        return Err(MetricsError::GroupsOverlap { index: i });
                    }
                    seen[i] = true;
                }
                (0..dataset.n())
                    .map(|i| idx.iter().map(|&j| dataset.x()[(i, j)] * fit.beta[j]).sum())
                    .collect()
            }
            Group::Functional => {
                let w = dataset.grid().quad_weights();
                dataset
                    .z()
                    .iter()
                    .map(|z| {
                        z.values()
                            .iter()
                            .zip(w)
                            .zip(&fit.xi_eval)
                            .map(|((zv, wv), xv)| zv * wv * xv)
                            .sum()
                    })
                    .collect()
            }
        };
        out.push(variance(&contribution) / var_y);
    }
    Ok(out)
}

fn error_text(e: &dyn fmt::Display) -> String {
    use alloc::string::ToString;
    e.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{center, dataset_without_functional, RawData};
    use crate::fsdar::FitStatus;
    use crate::linalg::Matrix;
    use crate::simgen::{true_beta, Example1Config, ScenarioGenerator};

    fn zero_fit(p: usize, m: usize) -> FitResult {
        FitResult {
            beta: alloc::vec![0.0; p],
            active_set: Vec::new(),
            c: Vec::new(),
            xi_eval: alloc::vec![0.0; m],
            intercept: 0.0,
            lambda: 0.01,
            tau_effective: 0.0,
            sparsity: 1,
            iterations: 1,
            kkt_residual: 0.0,
            objective: 0.0,
            status: FitStatus::Converged,
        }
    }

    #[test]
    fn zero_fit_metrics_match_hand_arithmetic() {
        let cfg = Example1Config::new(30, 10, 4);
        let g = ScenarioGenerator::example1(cfg).unwrap();
        let (d, truth) = g.generate().unwrap();
        let (test, _) = g.generate_raw(99, 20).unwrap();
        let fit = zero_fit(10, d.grid().len());
        let row = compute_metrics(&d, &fit, &truth, &test).unwrap();
        assert_eq!(row.false_zero, 5);
        assert_eq!(row.false_nonzero, 0);
        // ||beta*||^2 = 9 + 2.25 + 1 + 6.25 + 4 = 22.5
        assert!((row.mse_beta - 22.5).abs() < 1e-12);
        assert!(row.mse_xi > 0.0);
        assert!((row.rmse_xi - 1.0).abs() < 1e-9); // xi_hat = 0 -> relative error 1
    }

    #[test]
    fn perfect_fit_has_zero_errors_and_noise_level_pmse() {
        let cfg = Example1Config::new(200, 8, 11);
        let g = ScenarioGenerator::example1(cfg).unwrap();
        let (d, truth) = g.generate().unwrap();
        let (test, _) = g.generate_raw(1234, 400).unwrap();
        let mut fit = zero_fit(8, d.grid().len());
        fit.beta = true_beta(8);
        fit.active_set = alloc::vec![0, 1, 2, 3, 4];
        fit.xi_eval = g.xi_star_on_grid();
        fit.intercept = 0.0;
        let row = compute_metrics(&d, &fit, &truth, &test).unwrap();
        assert_eq!(row.false_zero, 0);
        assert_eq!(row.false_nonzero, 0);
        assert_eq!(row.mse_beta, 0.0);
        assert!(row.mse_xi < 1e-20);
        // oracle predictions leave only the unit noise (population means
        // are zero, so the zero intercept is correct up to sampling error)
        assert!((row.pmse - 1.0).abs() < 0.25, "pmse = {}", row.pmse);
    }

    #[test]
    fn screening_finds_an_exact_marginal_signal() {
        let n = 40;
        let p = 9;
        let x = Matrix::from_fn(n, p, |i, j| {
            // deterministic pseudo-design, no column duplicates
            libm::sin((i * p + j + 1) as f64 * 0.7) + 0.1 * j as f64
        });
        let y: Vec<f64> = (0..n).map(|i| x[(i, 7)]).collect();
        let d = dataset_without_functional(y, x, vec![]).unwrap();
        let ranked = screen(&d, p, &[]).unwrap();
        assert_eq!(ranked.len(), p);
        assert_eq!(ranked[0], 7);
        let top3 = screen(&d, 3, &[]).unwrap();
        assert_eq!(top3.len(), 3);
        assert_eq!(top3[0], 7);
    }

    #[test]
    fn screening_controls_are_residualized_and_excluded() {
        let n = 60;
        // y = x0 + x1 where x1 = x0 + small unique part: controlling x0
        // must surface x1's unique contribution, and x0 is excluded
        let x = Matrix::from_fn(n, 3, |i, j| match j {
            0 => libm::cos(i as f64 * 0.3),
            1 => libm::cos(i as f64 * 0.3) + 0.2 * libm::sin(i as f64 * 1.1),
            _ => libm::sin(i as f64 * 0.9),
        });
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] + x[(i, 1)]).collect();
        let d = dataset_without_functional(y, x, vec![]).unwrap();
        let ranked = screen(&d, 2, &[0]).unwrap();
        assert!(!ranked.contains(&0));
        assert_eq!(ranked[0], 1);
    }

    #[test]
    fn screening_rejects_collinear_controls() {
        let n = 20;
        let x = Matrix::from_fn(n, 3, |i, j| if j < 2 { i as f64 } else { (i * i) as f64 });
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let d = dataset_without_functional(y, x, vec![]).unwrap();
        assert_eq!(screen(&d, 1, &[0, 1]).unwrap_err(), MetricsError::ControlsCollinear);
    }

    #[test]
    fn variance_explained_decomposes() {
        let cfg = Example1Config::new(300, 8, 21);
        let g = ScenarioGenerator::example1(cfg).unwrap();
        let (d, _) = g.generate().unwrap();
        let mut fit = zero_fit(8, d.grid().len());

        // all-zero fit explains nothing
        let zero = variance_explained(&d, &fit, &[Group::Scalars((0..8).collect()), Group::Functional])
            .unwrap();
        assert_eq!(zero, alloc::vec![0.0, 0.0]);

        // the oracle fit explains everything but the noise share
        fit.beta = true_beta(8);
        fit.xi_eval = g.xi_star_on_grid();
        let parts = variance_explained(
            &d,
            &fit,
            &[Group::Scalars((0..8).collect()), Group::Functional],
        )
        .unwrap();
        let total: f64 = parts.iter().sum();
        // Var(y) ~ scalar + functional + cross-covariance + 1 (noise);
        // the group shares ignore the cross term, so just check scale
        assert!(total > 0.7 && total < 1.3, "total share {total}");
        assert!(parts.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn variance_explained_validates_groups() {
        let cfg = Example1Config::new(20, 6, 3);
        let (d, _) = ScenarioGenerator::example1(cfg).unwrap().generate().unwrap();
        let fit = zero_fit(6, d.grid().len());
        assert!(matches!(
            variance_explained(&d, &fit, &[Group::Scalars(alloc::vec![0, 9])]),
            Err(MetricsError::GroupIndexOutOfRange { .. })
        ));
        assert!(matches!(
            variance_explained(
                &d,
                &fit,
                &[Group::Scalars(alloc::vec![0, 1]), Group::Scalars(alloc::vec![1, 2])]
            ),
            Err(MetricsError::GroupsOverlap { index: 1 })
        ));
        // zero-variance response
        let x = Matrix::from_fn(4, 6, |i, j| (i + j) as f64);
        let d0 = center(RawData::new(alloc::vec![2.0; 4], x, mk_zero_z(4), vec![]).unwrap()).unwrap();
        let fit0 = zero_fit(6, d0.grid().len());
        assert_eq!(
            variance_explained(&d0, &fit0, &[Group::Functional]).unwrap_err(),
            MetricsError::ZeroVariance
        );
    }

    fn mk_zero_z(n: usize) -> Vec<crate::data::FunctionalSample> {
        let grid = crate::data::Grid::uniform(2).unwrap();
        (0..n)
            .map(|_| crate::data::FunctionalSample::new(grid.clone(), alloc::vec![0.0, 0.0]).unwrap())
            .collect()
    }
}
