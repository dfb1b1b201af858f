//! Plain-text `key = value` configuration with strict key checking:
//! unknown keys are fatal so typos cannot silently change a run.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use pflm_core::rkhs::{Kernel1d, KernelSpec};
use pflm_core::simgen::VarianceMode;

/// Which data the run operates on.
#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    Example1,
    Example2,
    Csv,
}

/// How the functional nullity test is calibrated, or `Off`.
#[derive(Clone, Debug, PartialEq)]
pub enum TestSetting {
    Off,
    Bootstrap { replicates: usize },
    ChiSquare { df: f64 },
}

/// Whether wall-clock times are reported or written as zero (the latter
/// makes every output byte-reproducible across thread budgets).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Timing {
    Wall,
    None,
}

/// Full run configuration; defaults follow the base simulation scenario.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub c0: u32,
    pub rho1: f64,
    pub rho2: f64,
    /// Signal strength of the testing scenario.
    pub b: f64,
    pub variance_mode: VarianceMode,
    pub m: usize,
    pub noise_sd: f64,
    pub seed: u64,
    /// Fresh samples for the prediction error.
    pub test_n: usize,
    pub kernel: KernelSpec,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_count: usize,
    pub j_min: usize,
    pub j_max: usize,
    pub max_iter: usize,
    pub replicates: usize,
    /// 0 means the runtime default.
    pub threads: usize,
    pub out: PathBuf,
    pub calibration: TestSetting,
    pub timing: Timing,
    /// Abort when more than this fraction of replicates fail.
    pub failure_threshold: f64,
    /// Directory holding y.csv / x.csv / z.csv for the csv scenario.
    pub data_dir: Option<PathBuf>,
    /// Always-active column indices (1-based in the file, 0-based here).
    pub always_active: Vec<usize>,
    /// 2D grid shape for csv data; both or neither.
    pub grid_shape: Option<(usize, usize)>,
    /// Fixed-fit overrides used by the `fit` subcommand.
    pub lambda: Option<f64>,
    pub sparsity: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::Example1,
            n: 200,
            p: 150,
            c0: 1,
            rho1: 0.2,
            rho2: 0.3,
            b: 0.0,
            variance_mode: VarianceMode::Decaying,
            m: 100,
            noise_sd: 1.0,
            seed: 0,
            test_n: 200,
            kernel: KernelSpec::sobolev2(),
            lambda_min: 1e-5,
            lambda_max: 0.1,
            lambda_count: 50,
            j_min: 1,
            j_max: 50,
            max_iter: 50,
            replicates: 1,
            threads: 0,
            out: PathBuf::from("out"),
            calibration: TestSetting::Off,
            timing: Timing::Wall,
            failure_threshold: 0.2,
            data_dir: None,
            always_active: Vec::new(),
            grid_shape: None,
            lambda: None,
            sparsity: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut cfg = ExperimentConfig::default();
        let mut m1: Option<usize> = None;
        let mut m2: Option<usize> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value, got {line:?}", lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value, &mut m1, &mut m2)
                .with_context(|| format!("line {}: key {key:?}", lineno + 1))?;
        }
        match (m1, m2) {
            (Some(a), Some(b)) => cfg.grid_shape = Some((a, b)),
            (None, None) => {}
            _ => bail!("m1 and m2 must be given together"),
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(
        &mut self,
        key: &str,
        value: &str,
        m1: &mut Option<usize>,
        m2: &mut Option<usize>,
    ) -> Result<()> {
        match key {
            "example" => {
                self.scenario = match value {
                    "example1" => Scenario::Example1,
                    "example2" => Scenario::Example2,
                    "csv" => Scenario::Csv,
                    other => bail!("unknown scenario {other:?} (example1|example2|csv)"),
                }
            }
            "n" => self.n = parse(value)?,
            "p" => self.p = parse(value)?,
            "c0" => self.c0 = parse(value)?,
            "rho1" => self.rho1 = parse(value)?,
            "rho2" => self.rho2 = parse(value)?,
            "b" => self.b = parse(value)?,
            "variance_mode" => {
                self.variance_mode = match value {
                    "decaying" => VarianceMode::Decaying,
                    "literal" => VarianceMode::Literal,
                    other => bail!("unknown variance_mode {other:?} (decaying|literal)"),
                }
            }
            "m" => self.m = parse(value)?,
            "noise_sd" => self.noise_sd = parse(value)?,
            "seed" => self.seed = parse(value)?,
            "test_n" => self.test_n = parse(value)?,
            "kernel" => self.kernel = parse_kernel(value)?,
            "lambda_min" => self.lambda_min = parse(value)?,
            "lambda_max" => self.lambda_max = parse(value)?,
            "lambda_count" => self.lambda_count = parse(value)?,
            "j_min" => self.j_min = parse(value)?,
            "j_max" => self.j_max = parse(value)?,
            "max_iter" => self.max_iter = parse(value)?,
            "replicates" => self.replicates = parse(value)?,
            "threads" => self.threads = parse(value)?,
            "out" => self.out = PathBuf::from(value),
            "calibration" => self.calibration = parse_calibration(value)?,
            "timing" => {
                self.timing = match value {
                    "wall" => Timing::Wall,
                    "none" => Timing::None,
                    other => bail!("unknown timing {other:?} (wall|none)"),
                }
            }
            "failure_threshold" => self.failure_threshold = parse(value)?,
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "always_active" => {
                self.always_active = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| -> Result<usize> {
                        let one_based: usize = parse(s.trim())?;
                        if one_based == 0 {
                            bail!("always_active indices are 1-based");
                        }
                        Ok(one_based - 1)
                    })
                    .collect::<Result<_>>()?;
            }
            "m1" => *m1 = Some(parse(value)?),
            "m2" => *m2 = Some(parse(value)?),
            "lambda" => self.lambda = Some(parse(value)?),
            "sparsity" => self.sparsity = Some(parse(value)?),
            other => bail!("unknown configuration key {other:?}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            bail!("replicates must be at least 1");
        }
        if !(self.lambda_min > 0.0) || self.lambda_max < self.lambda_min {
            bail!("lambda grid must satisfy 0 < lambda_min <= lambda_max");
        }
        if self.lambda_count == 0 || self.j_min == 0 || self.j_max < self.j_min {
            bail!("grids must be nonempty with j_min <= j_max");
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            bail!("failure_threshold must be within [0, 1]");
        }
        if self.scenario == Scenario::Csv && self.data_dir.is_none() {
            bail!("csv scenario requires data_dir");
        }
        Ok(())
    }

    pub fn lambdas(&self) -> Vec<f64> {
        pflm_core::tuning::TuningGrid::even_lambdas(self.lambda_min, self.lambda_max, self.lambda_count)
    }

    pub fn js(&self) -> Vec<usize> {
        (self.j_min..=self.j_max).collect()
    }
}

fn parse<T: std::str::FromStr>(value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| anyhow!("cannot parse {value:?}: {e}"))
}

fn parse_kernel_1d(value: &str) -> Result<Kernel1d> {
    if value == "sobolev2" {
        return Ok(Kernel1d::Sobolev2);
    }
    if value == "brownian" {
        return Ok(Kernel1d::Brownian);
    }
    if value == "gaussian" {
        return Ok(Kernel1d::Gaussian { bandwidth: KernelSpec::default_gaussian_bandwidth(1.0) });
    }
    if let Some(rest) = value.strip_prefix("gaussian:") {
        return Ok(Kernel1d::Gaussian { bandwidth: parse(rest)? });
    }
    bail!("unknown kernel {value:?} (sobolev2|gaussian[:<sigma>]|brownian)")
}

pub fn parse_kernel(value: &str) -> Result<KernelSpec> {
    if let Some(rest) = value.strip_prefix("tensor:") {
        let (a, b) = rest
            .split_once(',')
            .ok_or_else(|| anyhow!("tensor kernel needs two components: tensor:<k1>,<k2>"))?;
        return Ok(KernelSpec::tensor(parse_kernel_1d(a.trim())?, parse_kernel_1d(b.trim())?));
    }
    Ok(KernelSpec::Scalar(parse_kernel_1d(value)?))
}

pub fn parse_calibration(value: &str) -> Result<TestSetting> {
    if value == "off" {
        return Ok(TestSetting::Off);
    }
    if value == "bootstrap" {
        return Ok(TestSetting::Bootstrap { replicates: 500 });
    }
    if let Some(rest) = value.strip_prefix("bootstrap:B=") {
        return Ok(TestSetting::Bootstrap { replicates: parse(rest)? });
    }
    if let Some(rest) = value.strip_prefix("chisq:df=") {
        return Ok(TestSetting::ChiSquare { df: parse(rest)? });
    }
    bail!("unknown calibration {value:?} (bootstrap:B=<count>|chisq:df=<v>|off)")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_a_full_config() {
        let f = write_config(
            "# comment\n\
             example = example2\n\
             n = 100\n\
             p = 20\n\
             b = 0.05\n\
             kernel = gaussian:0.3\n\
             calibration = bootstrap:B=250\n\
             timing = none\n\
             always_active = 1,3\n\
             seed = 42\n",
        );
        let cfg = ExperimentConfig::from_file(f.path()).unwrap();
        assert_eq!(cfg.scenario, Scenario::Example2);
        assert_eq!(cfg.n, 100);
        assert_eq!(cfg.b, 0.05);
        assert_eq!(cfg.kernel, KernelSpec::gaussian(0.3));
        assert_eq!(cfg.calibration, TestSetting::Bootstrap { replicates: 250 });
        assert_eq!(cfg.timing, Timing::None);
        assert_eq!(cfg.always_active, vec![0, 2]);
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn unknown_keys_are_fatal() {
        let f = write_config("lamda_min = 0.1\n");
        let err = ExperimentConfig::from_file(f.path()).unwrap_err();
        assert!(format!("{err:#}").contains("unknown configuration key"));
    }

    #[test]
    fn csv_scenario_needs_data_dir_and_grid_shape_is_paired() {
        let f = write_config("example = csv\n");
        assert!(ExperimentConfig::from_file(f.path()).is_err());
        let f = write_config("m1 = 10\n");
        assert!(ExperimentConfig::from_file(f.path()).is_err());
        let f = write_config("example = csv\ndata_dir = /tmp/x\nm1 = 10\nm2 = 15\n");
        let cfg = ExperimentConfig::from_file(f.path()).unwrap();
        assert_eq!(cfg.grid_shape, Some((10, 15)));
    }

    #[test]
    fn kernel_and_calibration_parsers() {
        assert_eq!(parse_kernel("sobolev2").unwrap(), KernelSpec::sobolev2());
        assert_eq!(parse_kernel("brownian").unwrap(), KernelSpec::brownian());
        assert!(matches!(
            parse_kernel("tensor:sobolev2,gaussian:0.5").unwrap(),
            KernelSpec::TensorProduct(Kernel1d::Sobolev2, Kernel1d::Gaussian { .. })
        ));
        assert!(parse_kernel("cubic").is_err());
        assert_eq!(parse_calibration("off").unwrap(), TestSetting::Off);
        assert_eq!(
            parse_calibration("chisq:df=2.5").unwrap(),
            TestSetting::ChiSquare { df: 2.5 }
        );
        assert!(parse_calibration("bootstrap:B=?").is_err());
    }
}
