//! Property tests for the solver building blocks and the shared numeric
//! contracts.

use pflm_core::data::{center, dataset_without_functional, FunctionalSample, Grid, RawData};
use pflm_core::fsdar::{fsdar_fit, hard_threshold, kth_largest_abs, SolverConfig};
use pflm_core::linalg::{dot, sym_eigen, Matrix};
use pflm_core::rkhs::{gram, GramMatrix, KernelSpec, Smoother};
use proptest::prelude::*;

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, len)
}

fn random_raw(seed: u64, n: usize, p: usize, m: usize) -> (Vec<f64>, Matrix, Vec<FunctionalSample>) {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let x = Matrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
    let grid = Grid::uniform(m).unwrap();
    let z: Vec<FunctionalSample> = (0..n)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            let vals: Vec<f64> = (0..m)
                .map(|j| {
                    let t = j as f64 / (m - 1) as f64;
                    a * (std::f64::consts::PI * t).cos() + b * t
                })
                .collect();
            FunctionalSample::new(grid.clone(), vals).unwrap()
        })
        .collect();
    (y, x, z)
}

proptest! {
    #[test]
    fn hard_threshold_zeroes_strictly_below_the_boundary(
        v in finite_vec(1..40),
        tau in 0.0f64..50.0,
    ) {
        let out = hard_threshold(&v, tau);
        let thr = (2.0 * tau).sqrt();
        for (o, x) in out.iter().zip(&v) {
            if x.abs() < thr {
                prop_assert_eq!(*o, 0.0);
            } else {
                prop_assert_eq!(*o, *x);
            }
        }
    }

    #[test]
    fn kth_largest_matches_a_full_sort(v in finite_vec(1..40), j_seed in 0usize..40) {
        let j = 1 + j_seed % v.len();
        let got = kth_largest_abs(&v, j).unwrap();
        let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        mags.sort_by(|a, b| b.total_cmp(a));
        prop_assert_eq!(got, mags[j - 1]);
    }

    #[test]
    fn trapezoid_weights_sum_to_the_span(mut pts in prop::collection::vec(0.0f64..1.0, 2..30)) {
        pts.sort_by(|a, b| a.total_cmp(b));
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        prop_assume!(pts.len() >= 2);
        let span = pts[pts.len() - 1] - pts[0];
        let grid = Grid::from_points(pts).unwrap();
        let total: f64 = grid.quad_weights().iter().sum();
        prop_assert!((total - span).abs() <= 1e-10 * span.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn centering_is_idempotent(seed in 0u64..1000) {
        let (y, x, z) = random_raw(seed, 12, 4, 6);
        let raw = RawData::new(y, x, z, vec![]).unwrap();
        let once = center(raw).unwrap();
        let again = center(RawData::from(once.clone())).unwrap();
        for (a, b) in once.y().iter().zip(again.y()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in once.x().data().iter().zip(again.x().data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!(again.centering().y_mean.abs() < 1e-10);
    }

    #[test]
    fn gram_is_symmetric_positive_semidefinite(seed in 0u64..500) {
        let (_, _, z) = random_raw(seed, 8, 1, 10);
        let g = gram(&KernelSpec::sobolev2(), &z).unwrap();
        prop_assert!(g.sigma().asymmetry() <= 1e-12);
        let eig = sym_eigen(g.sigma()).unwrap();
        let norm = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(eig.values[0] >= -1e-8 * norm.max(1e-12));
    }

    #[test]
    fn permuting_columns_permutes_the_fit(seed in 0u64..200) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let (y, x, _) = random_raw(seed, 30, 6, 4);
        // strengthen two coordinates so the support is stable
        let y: Vec<f64> = (0..30)
            .map(|i| y[i] + 3.0 * x[(i, 1)] - 2.0 * x[(i, 4)])
            .collect();
        let mut perm: Vec<usize> = (0..6).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        perm.shuffle(&mut rng);

        let d1 = dataset_without_functional(y.clone(), x.clone(), vec![]).unwrap();
        let xp = Matrix::from_fn(30, 6, |i, j| x[(i, perm[j])]);
        let d2 = dataset_without_functional(y, xp, vec![]).unwrap();
        let g1 = gram(&KernelSpec::sobolev2(), d1.z()).unwrap();
        let g2 = gram(&KernelSpec::sobolev2(), d2.z()).unwrap();
        let cfg = SolverConfig::new(2, 0.05);
        let (f1, _) = fsdar_fit(&d1, &g1, &cfg).unwrap();
        let (f2, _) = fsdar_fit(&d2, &g2, &cfg).unwrap();
        for j in 0..6 {
            prop_assert!((f2.beta[j] - f1.beta[perm[j]]).abs() < 1e-9);
        }
    }

    #[test]
    fn rkhs_norm_is_nonincreasing_in_lambda(seed in 0u64..200) {
        let (y, _, z) = random_raw(seed, 10, 1, 8);
        let g = gram(&KernelSpec::sobolev2(), &z).unwrap();
        let mut last = f64::INFINITY;
        for lambda in [1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
            let s = Smoother::new(&g, lambda).unwrap();
            let c = s.representer_coeffs(&y).unwrap();
            let norm = dot(&g.sigma().matvec(&c), &c);
            prop_assert!(norm <= last + 1e-9 * last.abs().max(1.0));
            last = norm;
        }
    }
}

#[test]
fn smoother_limits_follow_the_eigenvalue_formula() {
    // rank-deficient Sigma: lambda -> inf gives I, lambda -> 0 gives the
    // projector onto null(Sigma)
    let a = Matrix::from_fn(3, 6, |i, j| ((i * 6 + j) as f64 * 0.37).sin());
    let sigma = {
        let mut s = Matrix::zeros(6, 6);
        for i in 0..6 {
            for j in 0..6 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a[(k, i)] * a[(k, j)];
                }
                s[(i, j)] = acc;
            }
        }
        s
    };
    let grid = Grid::uniform(4).unwrap();
    let g = GramMatrix::from_matrix(sigma.clone(), &grid).unwrap();

    let s_inf = Smoother::new(&g, 1e9).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((s_inf.p_lambda()[(i, j)] - want).abs() < 1e-6);
        }
    }

    let s_zero = Smoother::new(&g, 1e-12).unwrap();
    let eig = sym_eigen(&sigma).unwrap();
    let mut projector = Matrix::zeros(6, 6);
    for k in 0..6 {
        if eig.values[k].abs() < 1e-8 {
            for i in 0..6 {
                for j in 0..6 {
                    projector[(i, j)] += eig.vectors[(i, k)] * eig.vectors[(j, k)];
                }
            }
        }
    }
    for i in 0..6 {
        for j in 0..6 {
            assert!(
                (s_zero.p_lambda()[(i, j)] - projector[(i, j)]).abs() < 1e-4,
                "entry ({i},{j})"
            );
        }
    }
}

#[test]
fn centered_fit_matches_explicit_intercept_oracle() {
    // centering + fit on the active set must agree with augmented least
    // squares [1, X_A] on the raw data, both in the coefficients and in
    // the recovered intercept
    use pflm_core::linalg::{at_b, Cholesky};
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4242);
    let n = 40;
    let p = 5;
    let x = Matrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
    let y: Vec<f64> = (0..n)
        .map(|i| 7.0 + 2.5 * x[(i, 0)] - 1.5 * x[(i, 3)] + 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let centered = dataset_without_functional(y.clone(), x.clone(), vec![]).unwrap();
    let g1 = gram(&KernelSpec::sobolev2(), centered.z()).unwrap();
    let (fit, _) = fsdar_fit(&centered, &g1, &SolverConfig::new(2, 0.05)).unwrap();
    assert_eq!(fit.active_set, vec![0, 3]);

    // oracle: OLS of raw y on [1, X_A]
    let xa = Matrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else { x[(i, fit.active_set[j - 1])] });
    let mut xtx = at_b(&xa, &xa);
    xtx.symmetrize_mut();
    let rhs = xa.tr_matvec(&y);
    let f = Cholesky::new(&xtx).unwrap();
    let coef = f.solve_refined(&xtx, &rhs, 2);

    assert!((coef[0] - fit.intercept).abs() < 1e-8, "intercept {} vs {}", coef[0], fit.intercept);
    assert!((coef[1] - fit.beta[0]).abs() < 1e-8);
    assert!((coef[2] - fit.beta[3]).abs() < 1e-8);
}
