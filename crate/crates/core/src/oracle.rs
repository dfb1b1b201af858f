//! Independent brute-force cross-checks: exhaustive best-subset search of
//! the profiled loss, and a spectral rebuild of the smoother. These stay
//! implementation-independent of the iterative solver so they can serve as
//! ground truth on small instances.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::data::Dataset;
use crate::linalg::{at_b, dot, sym_eigen, Cholesky, Matrix};
use crate::rkhs::{GramMatrix, Smoother};

#[derive(Clone, Debug, PartialEq)]
pub enum OracleError {
    /// More subsets than the enumeration budget allows.
    BudgetExceeded { subsets: u128, budget: u128 },
    InvalidInput(String),
    /// Every candidate subset was rank deficient.
    AllSubsetsSingular,
    TooLarge { n: usize, cap: usize },
    Eigen(String),
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::BudgetExceeded { subsets, budget } => {
                write!(f, "exhaustive search needs {subsets} subsets, budget is {budget}")
            }
            OracleError::InvalidInput(s) => write!(f, "invalid oracle input: {s}"),
            OracleError::AllSubsetsSingular => write!(f, "every candidate subset was singular"),
            OracleError::TooLarge { n, cap } => {
                write!(f, "spectral smoother capped at n <= {cap}, got {n}")
            }
            OracleError::Eigen(s) => write!(f, "eigensolver failure: {s}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for OracleError {}

/// Result of the exhaustive search.
#[derive(Clone, Debug)]
pub struct OracleResult {
    /// Globally best support (always-active columns included), sorted.
    pub best_subset: Vec<usize>,
    /// Length-p coefficient vector of the best subset.
    pub beta: Vec<f64>,
    /// Profiled quadratic loss at the best subset.
    pub objective: f64,
    pub subsets_evaluated: u64,
}

const SUBSET_BUDGET: u128 = 1_000_000;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
        if acc > SUBSET_BUDGET * 1000 {
            return u128::MAX;
        }
    }
    acc
}

/// Enumerate every support of size at most `j` (always-active columns
/// forced in), solve the `P_lambda`-weighted least squares on each, and
/// return the global minimizer of the profiled quadratic loss. Ties go to
/// the lexicographically smaller subset.
pub fn best_subset(
    dataset: &Dataset,
    smoother: &Smoother,
    j: usize,
) -> Result<OracleResult, OracleError> {
    let n = dataset.n();
    let p = dataset.p();
    if smoother.n() != n {
        return Err(OracleError::InvalidInput(String::from("smoother dimension mismatch")));
    }
    if j == 0 || j > p {
        return Err(OracleError::InvalidInput(alloc::format!("subset size {j} out of range")));
    }
    let aa = dataset.always_active();
    let candidates: Vec<usize> = (0..p).filter(|i| !aa.contains(i)).collect();
    let j_eff = j.min(candidates.len());
    if candidates.len() > 15 {
        let mut total: u128 = 0;
        for s in 0..=j_eff {
            total = total.saturating_add(binomial(candidates.len(), s));
        }
        if total > SUBSET_BUDGET {
            return Err(OracleError::BudgetExceeded { subsets: total, budget: SUBSET_BUDGET });
        }
    }

    let x = dataset.x();
    let y = dataset.y();
    let wx = smoother.p_lambda().matmul(x);
    let py = smoother.apply_precise(y);

    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    let mut evaluated: u64 = 0;

    let mut evaluate = |support: &[usize]| {
        evaluated += 1;
        let mut full: Vec<usize> = aa.iter().copied().chain(support.iter().copied()).collect();
        full.sort_unstable();
        let obj_beta = if full.is_empty() {
            let pr = smoother.apply_precise(y);
            Some((dot(y, &pr) / (2.0 * n as f64), Vec::new()))
        } else {
            let xa = x.select_columns(&full);
            let wa = wx.select_columns(&full);
            let mut normal = at_b(&xa, &wa);
            normal.symmetrize_mut();
            let rhs = xa.tr_matvec(&py);
            match Cholesky::new(&normal) {
                Ok(f) => {
                    let beta_a = f.solve_refined(&normal, &rhs, 1);
                    let fitted = xa.matvec(&beta_a);
                    let r: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
                    let pr = smoother.apply_precise(&r);
                    Some((dot(&r, &pr) / (2.0 * n as f64), beta_a))
                }
                Err(_) => None,
            }
        };
        if let Some((obj, beta_a)) = obj_beta {
            let replace = match &best {
                None => true,
                Some((b_obj, b_set, _)) => obj < *b_obj || (obj == *b_obj && full < *b_set),
            };
            if replace {
                best = Some((obj, full, beta_a));
            }
        }
    };

    // size-ascending enumeration, lexicographic within each size
    for size in 0..=j_eff {
        if size == 0 {
            evaluate(&[]);
            continue;
        }
        let mut combo: Vec<usize> = (0..size).collect();
        'combos: loop {
            let support: Vec<usize> = combo.iter().map(|&i| candidates[i]).collect();
            evaluate(&support);
            let mut i = size;
            while i > 0 {
                i -= 1;
                if combo[i] < candidates.len() - size + i {
                    combo[i] += 1;
                    for k in (i + 1)..size {
                        combo[k] = combo[k - 1] + 1;
                    }
                    continue 'combos;
                }
            }
            break;
        }
    }

    drop(evaluate);
    let Some((objective, subset, beta_a)) = best else {
        return Err(OracleError::AllSubsetsSingular);
    };
    let mut beta = vec![0.0; p];
    for (&col, &b) in subset.iter().zip(&beta_a) {
        beta[col] = b;
    }
    Ok(OracleResult { best_subset: subset, beta, objective, subsets_evaluated: evaluated })
}

/// Rebuild `P_lambda` from the eigendecomposition of the Gram matrix:
/// `P = V diag(n lambda / (mu_i + n lambda)) V'`. An independent route to
/// the factorization-based smoother.
pub fn spectral_smoother(gram: &GramMatrix, lambda: f64) -> Result<Matrix, OracleError> {
    let n = gram.n();
    const CAP: usize = 500;
    if n > CAP {
        return Err(OracleError::TooLarge { n, cap: CAP });
    }
    if !(lambda > 0.0) {
        return Err(OracleError::InvalidInput(String::from("lambda must be positive")));
    }
    let eig = sym_eigen(gram.sigma()).map_err(|e| OracleError::Eigen(e.detail))?;
    let nl = n as f64 * lambda;
    let mut p = Matrix::zeros(n, n);
    for k in 0..n {
        let w = nl / (eig.values[k] + nl);
        for i in 0..n {
            let vik = eig.vectors[(i, k)];
            if vik == 0.0 {
                continue;
            }
            let scaled = w * vik;
            for j2 in 0..n {
                p[(i, j2)] += scaled * eig.vectors[(j2, k)];
            }
        }
    }
    p.symmetrize_mut();
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{dataset_without_functional, Grid};
    use crate::fsdar::{fsdar_fit, SolverConfig};
    use crate::rkhs::{gram, KernelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_dataset(n: usize, p: usize, seed: u64) -> crate::data::Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        let beta = crate::simgen::true_beta(p);
        let y: Vec<f64> = (0..n)
            .map(|i| dot(x.row(i), &beta) + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        dataset_without_functional(y, x, vec![]).unwrap()
    }

    #[test]
    fn full_subset_is_weighted_least_squares() {
        let d = random_dataset(30, 4, 3);
        let g = gram(&KernelSpec::sobolev2(), d.z()).unwrap();
        let s = Smoother::new(&g, 0.1).unwrap();
        let res = best_subset(&d, &s, 4).unwrap();
        assert_eq!(res.best_subset, vec![0, 1, 2, 3]);
        // direct WLS (P = I here since Sigma = 0)
        let xtx = at_b(d.x(), d.x());
        let rhs = d.x().tr_matvec(d.y());
        let f = Cholesky::new(&xtx).unwrap();
        let want = f.solve_refined(&xtx, &rhs, 1);
        for (got, want) in res.beta.iter().zip(&want) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn orthonormal_oracle_keeps_largest_marginals() {
        // orthonormal columns, P = I: the best subset of size J holds the
        // J largest |X'y/n|
        let n = 50;
        let p = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for _ in 0..p {
            let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let m = v.iter().sum::<f64>() / n as f64;
            for x in &mut v {
                *x -= m;
            }
            for c in &cols {
                let proj = dot(&v, c) / dot(c, c);
                for (x, cv) in v.iter_mut().zip(c) {
                    *x -= proj * cv;
                }
            }
            cols.push(v);
        }
        for c in &mut cols {
            let s = libm::sqrt(dot(c, c) / n as f64);
            for x in c.iter_mut() {
                *x /= s;
            }
        }
        let x = Matrix::from_fn(n, p, |i, j| cols[j][i]);
        let beta = [0.5, -3.0, 0.0, 2.0, 0.0, -1.0, 0.0, 0.1];
        let y: Vec<f64> = (0..n).map(|i| dot(x.row(i), &beta)).collect();
        let d = dataset_without_functional(y, x, vec![]).unwrap();
        let g = gram(&KernelSpec::sobolev2(), d.z()).unwrap();
        let s = Smoother::new(&g, 0.1).unwrap();
        let res = best_subset(&d, &s, 3).unwrap();
        // marginals equal beta under orthonormality: top three are 1, 3, 5
        assert_eq!(res.best_subset, vec![1, 3, 5]);
    }

    #[test]
    fn fsdar_never_beats_the_oracle() {
        for seed in 0..8u64 {
            let d = random_dataset(40, 8, 100 + seed);
            let g = gram(&KernelSpec::sobolev2(), d.z()).unwrap();
            let lambda = 0.05;
            let s = Smoother::new(&g, lambda).unwrap();
            let (fit, _) = fsdar_fit(&d, &g, &SolverConfig::new(3, lambda)).unwrap();
            let oracle = best_subset(&d, &s, 3).unwrap();
            let fit_obj = crate::fsdar::profiled_objective(&d, &s, &fit.beta);
            assert!(fit_obj - oracle.objective >= -1e-8, "fsdar {fit_obj} < oracle {}", oracle.objective);
        }
    }

    #[test]
    fn budget_guard_triggers() {
        let d = random_dataset(25, 40, 9);
        let g = gram(&KernelSpec::sobolev2(), d.z()).unwrap();
        let s = Smoother::new(&g, 0.1).unwrap();
        assert!(matches!(best_subset(&d, &s, 10), Err(OracleError::BudgetExceeded { .. })));
    }

    #[test]
    fn spectral_smoother_matches_diagonal_formula() {
        let grid = Grid::uniform(4).unwrap();
        let mut sigma = Matrix::zeros(3, 3);
        sigma[(0, 0)] = 1.0;
        sigma[(1, 1)] = 2.0;
        sigma[(2, 2)] = 4.0;
        let g = GramMatrix::from_matrix(sigma, &grid).unwrap();
        let lambda = 0.5;
        let p = spectral_smoother(&g, lambda).unwrap();
        let nl = 1.5;
        for (i, mu) in [1.0, 2.0, 4.0].iter().enumerate() {
            assert!((p[(i, i)] - nl / (mu + nl)).abs() < 1e-12);
        }
        // zero matrix gives the identity
        let g0 = GramMatrix::from_matrix(Matrix::zeros(3, 3), &grid).unwrap();
        let p0 = spectral_smoother(&g0, 0.1).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((p0[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spectral_and_direct_smoother_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 12;
        let a = Matrix::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        let sigma = at_b(&a, &a);
        let grid = Grid::uniform(4).unwrap();
        let g = GramMatrix::from_matrix(sigma, &grid).unwrap();
        let s = Smoother::new(&g, 0.01).unwrap();
        let p = spectral_smoother(&g, 0.01).unwrap();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((p[(i, j)] - s.p_lambda()[(i, j)]).abs());
            }
        }
        assert!(worst <= 1e-8, "disagreement {worst}");
    }
}
