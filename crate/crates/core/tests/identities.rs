//! Numerical identities tying the independent computation routes
//! together: the profiling identity, the dual as the gradient of the
//! profiled loss, spectral vs factorization smoothers, and the
//! representer linear system.

use pflm_core::data::{center, FunctionalSample, Grid, RawData};
use pflm_core::fsdar::profiled_objective;
use pflm_core::linalg::{dot, Matrix};
use pflm_core::oracle::spectral_smoother;
use pflm_core::rkhs::{gram, KernelSpec, Smoother};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_instance(seed: u64, n: usize, p: usize, m: usize) -> pflm_core::data::Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::uniform(m).unwrap();
    let z: Vec<FunctionalSample> = (0..n)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            let c: f64 = rng.sample(StandardNormal);
            let vals: Vec<f64> = (0..m)
                .map(|j| {
                    let t = j as f64 / (m - 1) as f64;
                    a + b * t + c * (2.0 * std::f64::consts::PI * t).sin()
                })
                .collect();
            FunctionalSample::new(grid.clone(), vals).unwrap()
        })
        .collect();
    let x = Matrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
    let y: Vec<f64> = (0..n)
        .map(|i| {
            2.0 * x[(i, 0)] - x[(i, p - 1)]
                + z[i].integral()
                + 0.5 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    center(RawData::new(y, x, z, vec![]).unwrap()).unwrap()
}

#[test]
fn profiling_identity_holds_to_1e10() {
    for seed in 0..20u64 {
        let d = random_instance(seed, 15, 5, 12);
        let g = gram(&KernelSpec::sobolev2(), d.z()).unwrap();
        let lambda = 0.01 + 0.01 * seed as f64;
        let s = Smoother::new(&g, lambda).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 999);
        let beta: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

        let direct = profiled_objective(&d, &s, &beta);

        // plug the representer coefficients back into the joint objective
        let xb = d.x().matvec(&beta);
        let r: Vec<f64> = d.y().iter().zip(&xb).map(|(a, b)| a - b).collect();
        let c = s.representer_coeffs(&r).unwrap();
        let sc = g.sigma().matvec(&c);
        let rss: f64 = r.iter().zip(&sc).map(|(rv, sv)| (rv - sv) * (rv - sv)).sum();
        let joint = rss / (2.0 * 15.0) + 0.5 * lambda * dot(&sc, &c);

        assert!(
            (direct - joint).abs() <= 1e-10,
            "seed {seed}: profiled {direct} vs joint {joint}"
        );
    }
}

#[test]
fn dual_is_the_negative_gradient_of_the_profiled_loss() {
    for seed in 0..10u64 {
        let d = random_instance(seed, 15, 4, 10);
        let g = gram(&KernelSpec::sobolev2(), d.z()).unwrap();
        let s = Smoother::new(&g, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let beta: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

        // analytic gradient: -X' P (y - X beta) / n
        let xb = d.x().matvec(&beta);
        let r: Vec<f64> = d.y().iter().zip(&xb).map(|(a, b)| a - b).collect();
        let pr = s.apply_precise(&r);
        let grad: Vec<f64> = d.x().tr_matvec(&pr).iter().map(|v| -v / 15.0).collect();

        for j in 0..4 {
            let h = 1e-5 * (1.0 + beta[j].abs());
            let mut bp = beta.clone();
            bp[j] += h;
            let mut bm = beta.clone();
            bm[j] -= h;
            let fd = (profiled_objective(&d, &s, &bp) - profiled_objective(&d, &s, &bm)) / (2.0 * h);
            let rel = (fd - grad[j]).abs() / grad[j].abs().max(1e-8);
            assert!(rel <= 1e-5, "seed {seed} coord {j}: fd {fd} vs grad {}", grad[j]);
        }
    }
}

#[test]
fn spectral_and_factorized_smoothers_agree_to_1e8() {
    for seed in 0..10u64 {
        let d = random_instance(seed, 18, 3, 14);
        let g = gram(&KernelSpec::sobolev2(), d.z()).unwrap();
        let lambda = if seed % 2 == 0 { 1e-4 } else { 0.05 };
        let s = Smoother::new(&g, lambda).unwrap();
        let spectral = spectral_smoother(&g, lambda).unwrap();
        let mut worst = 0.0f64;
        for i in 0..18 {
            for j in 0..18 {
                worst = worst.max((spectral[(i, j)] - s.p_lambda()[(i, j)]).abs());
            }
        }
        assert!(worst <= 1e-8, "seed {seed}: max difference {worst}");
    }
}

#[test]
fn representer_system_residual_below_1e10() {
    for seed in 0..20u64 {
        let d = random_instance(seed, 20, 3, 12);
        let g = gram(&KernelSpec::sobolev2(), d.z()).unwrap();
        let lambda = [1e-5, 1e-3, 0.1][seed as usize % 3];
        let s = Smoother::new(&g, lambda).unwrap();
        let c = s.representer_coeffs(d.y()).unwrap();
        let mut shifted = g.sigma().clone();
        shifted.add_diag_mut(20.0 * lambda);
        let back = shifted.matvec(&c);
        let worst = back
            .iter()
            .zip(d.y())
            .fold(0.0f64, |w, (b, y)| w.max((b - y).abs()));
        assert!(worst <= 1e-10, "seed {seed} lambda {lambda}: residual {worst}");
    }
}
