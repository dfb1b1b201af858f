//! Monte Carlo replication runner: generate, tune, fit, test, and score
//! each replicate in parallel over a bounded worker pool, then emit
//! deterministic CSV reports.
//!
//! Determinism: replicate `r` derives every seed it needs from
//! `derive_seed(root, r)` (data, test set, bootstrap), results are
//! collected in replicate order regardless of scheduling, and all files
//! are written by one thread with round-trip float formatting. With
//! `timing = none` the outputs are byte-identical across thread budgets.

use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use pflm_core::data::{center, Dataset};
use pflm_core::fsdar::{ProfiledDesign, SolverConfig};
use pflm_core::inference::{coef_pvalues, test_functional, Calibration, TestResult};
use pflm_core::metrics::{compute_metrics, MetricsRow};
use pflm_core::rkhs::{gram, GramMatrix};
use pflm_core::seeding::derive_seed;
use pflm_core::simgen::{Example1Config, ScenarioGenerator};
use pflm_core::tuning::{tune, TuningGrid, TuningReport};

use crate::config::{ExperimentConfig, Scenario, TestSetting, Timing};
use crate::csvio::{fmt_f64, CsvOut};

/// Outcome of one replicate; failures carry the error text.
#[derive(Clone, Debug)]
pub struct ReplicateRecord {
    pub index: usize,
    pub seed: u64,
    pub metrics: Option<MetricsRow>,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub records: Vec<ReplicateRecord>,
    pub failed: usize,
    /// Fraction of successful replicates rejecting at the 5% level
    /// (testing scenarios only).
    pub rejection_rate: Option<f64>,
}

pub fn scenario_generator(cfg: &ExperimentConfig) -> Result<ScenarioGenerator> {
    let sim_cfg = Example1Config {
        n: cfg.n,
        p: cfg.p,
        c0: cfg.c0,
        rho1: cfg.rho1,
        rho2: cfg.rho2,
        m: cfg.m,
        noise_sd: cfg.noise_sd,
        variance_mode: cfg.variance_mode,
        seed: cfg.seed,
    };
    let generator = match cfg.scenario {
        Scenario::Example1 => ScenarioGenerator::example1(sim_cfg)?,
        Scenario::Example2 => ScenarioGenerator::example2(sim_cfg, cfg.b)?,
        Scenario::Csv => bail!("csv scenario has no generator"),
    };
    Ok(generator)
}

pub fn tuning_grid(cfg: &ExperimentConfig) -> TuningGrid {
    TuningGrid { lambdas: cfg.lambdas(), js: cfg.js() }
}

pub fn base_solver_config(cfg: &ExperimentConfig) -> SolverConfig {
    SolverConfig::new(1, cfg.lambda_min).with_max_iter(cfg.max_iter)
}

fn calibration_for(cfg: &ExperimentConfig, replicate_seed: u64) -> Option<Calibration> {
    match cfg.calibration {
        TestSetting::Off => None,
        TestSetting::Bootstrap { replicates } => Some(Calibration::Bootstrap {
            replicates,
            seed: derive_seed(replicate_seed, 2),
        }),
        TestSetting::ChiSquare { df } => Some(Calibration::ChiSquare { df }),
    }
}

/// Run one replicate end to end: generate -> tune -> fit -> test -> score.
pub fn run_replicate(
    generator: &ScenarioGenerator,
    cfg: &ExperimentConfig,
    index: usize,
) -> ReplicateRecord {
    let seed_r = derive_seed(cfg.seed, index as u64);
    let inner = || -> Result<(MetricsRow, Option<TestResult>)> {
        let (dataset, truth) = generator.generate_with_seed(derive_seed(seed_r, 0))?;
        let (test_raw, _) = generator.generate_raw(derive_seed(seed_r, 1), cfg.test_n)?;
        let gm = gram(&cfg.kernel, dataset.z())?;
        let started = Instant::now();
        let report = tune(&dataset, &gm, &tuning_grid(cfg), &base_solver_config(cfg))?;
        let elapsed = started.elapsed().as_secs_f64();
        let mut metrics = compute_metrics(&dataset, &report.fit, &truth, &test_raw)?;
        metrics.wall_time_seconds = match cfg.timing {
            Timing::Wall => elapsed,
            Timing::None => 0.0,
        };
        let test = match calibration_for(cfg, seed_r) {
            Some(cal) => Some(test_functional(&dataset, &gm, &report.fit, &cal)?),
            None => None,
        };
        Ok((metrics, test))
    };
    match inner() {
        Ok((metrics, test)) => ReplicateRecord {
            index,
            seed: seed_r,
            metrics: Some(metrics),
            statistic: test.as_ref().map(|t| t.statistic),
            p_value: test.as_ref().map(|t| t.p_value),
            error: None,
        },
        Err(e) => ReplicateRecord {
            index,
            seed: seed_r,
            metrics: None,
            statistic: None,
            p_value: None,
            error: Some(format!("{e:#}")),
        },
    }
}

/// Run the full experiment and write all reports under `cfg.out`.
/// Returns the report and the process exit code (0 clean, 2 partial
/// failures under the threshold).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentReport, i32)> {
    if cfg.scenario == Scenario::Csv {
        run_csv_experiment(cfg)?;
        return Ok((ExperimentReport { records: Vec::new(), failed: 0, rejection_rate: None }, 0));
    }
    let generator = scenario_generator(cfg)?;

    let records: Vec<ReplicateRecord> = {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .context("cannot build worker pool")?;
        pool.install(|| {
            use rayon::prelude::*;
            (0..cfg.replicates)
                .into_par_iter()
                .map(|r| run_replicate(&generator, cfg, r))
                .collect()
        })
    };

    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let failure_fraction = failed as f64 / cfg.replicates as f64;
    if failure_fraction > cfg.failure_threshold {
        let first = records
            .iter()
            .find_map(|r| r.error.as_deref())
            .unwrap_or("unknown");
        bail!(
            "{failed}/{} replicates failed (threshold {}); first error: {first}",
            cfg.replicates,
            cfg.failure_threshold
        );
    }

    write_replicates_csv(&cfg.out.join("replicates.csv"), &records)?;
    write_summary_csv(&cfg.out.join("summary.csv"), &records)?;

    // figure-equivalent outputs from replicate 0 (deterministic, computed
    // outside the pool)
    write_replicate0_surfaces(cfg, &generator)?;

    let rejection_rate = if cfg.calibration != TestSetting::Off {
        write_tests_csv(&cfg.out.join("tests.csv"), &records)?;
        let rate = rejection_rate(&records);
        write_size_power_csv(&cfg.out.join("size_power.csv"), cfg, &records, rate)?;
        rate
    } else {
        None
    };

    let exit = if failed > 0 { 2 } else { 0 };
    Ok((ExperimentReport { records, failed, rejection_rate }, exit))
}

pub fn rejection_rate(records: &[ReplicateRecord]) -> Option<f64> {
    let ps: Vec<f64> = records.iter().filter_map(|r| r.p_value).collect();
    if ps.is_empty() {
        return None;
    }
    Some(ps.iter().filter(|&&p| p <= 0.05).count() as f64 / ps.len() as f64)
}

fn write_replicates_csv(path: &Path, records: &[ReplicateRecord]) -> Result<()> {
    let mut w = CsvOut::create(
        path,
        &[
            "replicate", "seed", "false_zero", "false_nonzero", "mse_beta", "mse_xi", "rmse_xi",
            "pmse", "lambda", "sparsity", "converged", "time_s", "error",
        ],
    )?;
    for r in records {
        let row = match &r.metrics {
            Some(m) => vec![
                r.index.to_string(),
                r.seed.to_string(),
                m.false_zero.to_string(),
                m.false_nonzero.to_string(),
                fmt_f64(m.mse_beta),
                fmt_f64(m.mse_xi),
                fmt_f64(m.rmse_xi),
                fmt_f64(m.pmse),
                fmt_f64(m.lambda),
                m.sparsity.to_string(),
                m.converged.to_string(),
                fmt_f64(m.wall_time_seconds),
                String::new(),
            ],
            None => {
                let mut row = vec![r.index.to_string(), r.seed.to_string()];
                row.extend(std::iter::repeat_with(String::new).take(10));
                row.push(r.error.clone().unwrap_or_default().replace(',', ";"));
                row
            }
        };
        w.row(&row)?;
    }
    w.finish()
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregate table in the simulation-report layout: one `mean(sd)` cell
/// per metric column.
fn write_summary_csv(path: &Path, records: &[ReplicateRecord]) -> Result<()> {
    let ok: Vec<&MetricsRow> = records.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let col = |f: &dyn Fn(&MetricsRow) -> f64| -> String {
        let vals: Vec<f64> = ok.iter().map(|m| f(m)).collect();
        let (m, s) = mean_sd(&vals);
        format!("{m:.3}({s:.3})")
    };
    let mut w = CsvOut::create(
        path,
        &["FZ", "FN", "MSE_beta", "MSE_xi", "RMSE_xi", "PMSE", "Time_s"],
    )?;
    w.row(&[
        col(&|m| m.false_zero as f64),
        col(&|m| m.false_nonzero as f64),
        col(&|m| m.mse_beta),
        col(&|m| m.mse_xi),
        col(&|m| m.rmse_xi),
        col(&|m| m.pmse),
        col(&|m| m.wall_time_seconds),
    ])?;
    w.finish()
}

// Criterion surface and the solution path (beta trajectory against the
// sparsity budget at the selected lambda) from replicate 0.
fn write_replicate0_surfaces(cfg: &ExperimentConfig, generator: &ScenarioGenerator) -> Result<()> {
    let seed_r = derive_seed(cfg.seed, 0);
    let (dataset, _) = generator.generate_with_seed(derive_seed(seed_r, 0))?;
    let gm = gram(&cfg.kernel, dataset.z())?;
    let report = tune(&dataset, &gm, &tuning_grid(cfg), &base_solver_config(cfg))?;
    write_surface_csv(&cfg.out.join("surface.csv"), &report)?;
    write_solution_path_csv(&cfg.out.join("solution_path.csv"), cfg, &dataset, &gm, &report)?;
    Ok(())
}

pub fn write_surface_csv(path: &Path, report: &TuningReport) -> Result<()> {
    let mut w = CsvOut::create(path, &["lambda", "sparsity", "objective", "gcv", "hbic", "error"])?;
    for c in &report.cells {
        w.row(&[
            fmt_f64(c.lambda),
            c.sparsity.to_string(),
            fmt_f64(c.objective),
            fmt_f64(c.gcv),
            fmt_f64(c.hbic),
            c.error.clone().unwrap_or_default().replace(',', ";"),
        ])?;
    }
    w.finish()
}

pub fn write_solution_path_csv(
    path: &Path,
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    gm: &GramMatrix,
    report: &TuningReport,
) -> Result<()> {
    let p = dataset.p();
    let mut header: Vec<String> = vec!["sparsity".to_string(), "lambda".to_string()];
    header.extend((1..=p).map(|j| format!("beta{j}")));
    let mut w = CsvOut::create(path, &header.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
    let design = ProfiledDesign::new(dataset, gm, report.selected_lambda)
        .map_err(|e| anyhow!("{e}"))?;
    for j in cfg.js() {
        let solver = SolverConfig {
            sparsity: j,
            lambda: report.selected_lambda,
            max_iter: cfg.max_iter,
            beta0: None,
            tie_break: Default::default(),
        };
        match design.solve(&solver) {
            Ok((fit, _)) => {
                let mut row = vec![j.to_string(), fmt_f64(report.selected_lambda)];
                row.extend(fit.beta.iter().map(|v| fmt_f64(*v)));
                w.row(&row)?;
            }
            Err(_) => continue,
        }
    }
    w.finish()
}

fn write_tests_csv(path: &Path, records: &[ReplicateRecord]) -> Result<()> {
    let mut w = CsvOut::create(path, &["replicate", "statistic", "p_value", "reject_05"])?;
    for r in records {
        if let (Some(t), Some(p)) = (r.statistic, r.p_value) {
            w.row(&[
                r.index.to_string(),
                fmt_f64(t),
                fmt_f64(p),
                (p <= 0.05).to_string(),
            ])?;
        }
    }
    w.finish()
}

fn write_size_power_csv(
    path: &Path,
    cfg: &ExperimentConfig,
    records: &[ReplicateRecord],
    rate: Option<f64>,
) -> Result<()> {
    let mut w = CsvOut::create(path, &["b", "n", "p", "replicates_ok", "rejection_rate"])?;
    let ok = records.iter().filter(|r| r.p_value.is_some()).count();
    w.row(&[
        fmt_f64(cfg.b),
        cfg.n.to_string(),
        cfg.p.to_string(),
        ok.to_string(),
        rate.map(fmt_f64).unwrap_or_default(),
    ])?;
    w.finish()
}

/// Load csv-scenario data as a centered dataset with its Gram matrix.
pub fn load_csv_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, GramMatrix)> {
    let dir = cfg
        .data_dir
        .as_ref()
        .ok_or_else(|| anyhow!("csv scenario requires data_dir"))?;
    let raw = crate::csvio::read_raw_data(dir, &cfg.always_active, cfg.grid_shape)?;
    let dataset = center(raw)?;
    let gm = gram(&cfg.kernel, dataset.z())?;
    Ok((dataset, gm))
}

// csv scenario: one pass of tune + optional test + coefficient inference.
fn run_csv_experiment(cfg: &ExperimentConfig) -> Result<()> {
    let (dataset, gm) = load_csv_dataset(cfg)?;
    let report = tune(&dataset, &gm, &tuning_grid(cfg), &base_solver_config(cfg))?;
    write_surface_csv(&cfg.out.join("surface.csv"), &report)?;
    write_solution_path_csv(&cfg.out.join("solution_path.csv"), cfg, &dataset, &gm, &report)?;
    write_fit_outputs(&cfg.out, &dataset, &report)?;

    let inference = coef_pvalues(&dataset, &gm, &report.fit, None);
    if let Ok(inf) = inference {
        let mut w = CsvOut::create(
            &cfg.out.join("coefficients.csv"),
            &["index", "estimate", "std_error", "z", "p_value"],
        )?;
        for row in &inf.rows {
            w.row(&[
                (row.index + 1).to_string(),
                fmt_f64(row.estimate),
                fmt_f64(row.std_error),
                fmt_f64(row.z_score),
                fmt_f64(row.p_value),
            ])?;
        }
        w.finish()?;
    }

    if let Some(cal) = calibration_for(cfg, derive_seed(cfg.seed, 0)) {
        let res = test_functional(&dataset, &gm, &report.fit, &cal)?;
        write_test_result(&cfg.out.join("test.csv"), &res)?;
    }
    Ok(())
}

pub fn write_fit_outputs(
    out: &Path,
    dataset: &Dataset,
    report: &TuningReport,
) -> Result<()> {
    let fit = &report.fit;
    let mut bw = CsvOut::create(&out.join("beta.csv"), &["index", "estimate", "active"])?;
    for (i, b) in fit.beta.iter().enumerate() {
        bw.row(&[
            (i + 1).to_string(),
            fmt_f64(*b),
            fit.active_set.contains(&i).to_string(),
        ])?;
    }
    bw.finish()?;

    let mut xw = CsvOut::create(&out.join("xi.csv"), &["grid_index", "value"])?;
    for (i, v) in fit.xi_eval.iter().enumerate() {
        xw.row(&[(i + 1).to_string(), fmt_f64(*v)])?;
    }
    xw.finish()?;

    let mut sw = CsvOut::create(
        &out.join("selected.csv"),
        &[
            "lambda", "sparsity", "intercept", "objective", "kkt_residual", "iterations",
            "converged", "tau_effective",
        ],
    )?;
    sw.row(&[
        fmt_f64(fit.lambda),
        fit.sparsity.to_string(),
        fmt_f64(fit.intercept),
        fmt_f64(fit.objective),
        fmt_f64(fit.kkt_residual),
        fit.iterations.to_string(),
        fit.converged().to_string(),
        fmt_f64(fit.tau_effective),
    ])?;
    sw.finish()?;
    Ok(())
}

pub fn write_test_result(path: &Path, res: &TestResult) -> Result<()> {
    let mut w = CsvOut::create(
        path,
        &[
            "statistic", "p_value", "calibration", "null_active", "alt_active", "null_loss",
            "alt_loss",
        ],
    )?;
    let cal = match res.calibration {
        Calibration::Bootstrap { replicates, .. } => format!("bootstrap:B={replicates}"),
        Calibration::ChiSquare { df } => format!("chisq:df={df}"),
    };
    w.row(&[
        fmt_f64(res.statistic),
        fmt_f64(res.p_value),
        cal,
        res.null_fit.active_set.len().to_string(),
        res.alt_fit.active_set.len().to_string(),
        fmt_f64(res.null_fit.penalized_loss),
        fmt_f64(res.alt_fit.penalized_loss),
    ])?;
    w.finish()
}
