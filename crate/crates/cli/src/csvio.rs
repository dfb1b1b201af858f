//! CSV ingestion and report emission.
//!
//! Input formats (all with a header row):
//! - `y.csv`: one column, the response.
//! - `x.csv`: n rows by p columns of scalar covariates, header row of names.
//! - `z.csv`: n rows by m columns, the functional predictor on the shared
//!   grid; for 2D data the columns are the row-major flattening of an
//!   `m1 x m2` tensor grid declared in the config.
//!
//! Output files are written with round-trip float formatting and fixed row
//! order, so identical runs produce byte-identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use pflm_core::data::{FunctionalSample, Grid, RawData};
use pflm_core::linalg::Matrix;

/// Shortest round-trip decimal representation; stable across platforms.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row: Vec<f64> = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .with_context(|| format!("{}: row {}: bad number {field:?}", path.display(), i + 2))
            })
            .collect::<Result<_>>()?;
        if row.len() != headers.len() {
            bail!("{}: row {} has {} fields, header has {}", path.display(), i + 2, row.len(), headers.len());
        }
        rows.push(row);
    }
    Ok((headers, rows))
}

/// Load `y.csv`, `x.csv`, `z.csv` from a directory into raw data on a
/// uniform grid over `[0,1]` (or `[0,1]^2` when `grid_shape` is given).
pub fn read_raw_data(
    dir: &Path,
    always_active: &[usize],
    grid_shape: Option<(usize, usize)>,
) -> Result<RawData> {
    let (_, yrows) = read_table(&dir.join("y.csv"))?;
    let y: Vec<f64> = yrows
        .iter()
        .map(|r| {
            if r.len() != 1 {
                bail!("y.csv must have exactly one column");
            }
            Ok(r[0])
        })
        .collect::<Result<_>>()?;

    let (_, xrows) = read_table(&dir.join("x.csv"))?;
    if xrows.len() != y.len() {
        bail!("x.csv has {} rows, y.csv has {}", xrows.len(), y.len());
    }
    let p = xrows.first().map_or(0, |r| r.len());
    let x = Matrix::from_fn(xrows.len(), p, |i, j| xrows[i][j]);

    let (_, zrows) = read_table(&dir.join("z.csv"))?;
    if zrows.len() != y.len() {
        bail!("z.csv has {} rows, y.csv has {}", zrows.len(), y.len());
    }
    let m = zrows.first().map_or(0, |r| r.len());
    let grid = match grid_shape {
        Some((m1, m2)) => {
            if m1 * m2 != m {
                bail!("z.csv has {m} columns but the declared grid is {m1} x {m2}");
            }
            Grid::uniform_tensor(m1, m2)?
        }
        None => Grid::uniform(m)?,
    };
    let z: Vec<FunctionalSample> = zrows
        .into_iter()
        .map(|vals| FunctionalSample::new(grid.clone(), vals).map_err(anyhow::Error::from))
        .collect::<Result<_>>()?;

    Ok(RawData::new(y, x, z, always_active.to_vec())?)
}

/// A row-oriented CSV writer with deterministic formatting.
pub struct CsvOut {
    w: BufWriter<File>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = BufWriter::new(f);
        writeln!(w, "{}", header.join(","))?;
        Ok(CsvOut { w })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.w, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

/// Write the simulated dataset in the ingestion format plus `truth.csv`
/// (long format: component, index, value).
pub fn write_simulated(
    dir: &Path,
    raw: &RawData,
    truth_beta: &[f64],
    xi_coeffs: &[f64],
    noise_variance: f64,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut yw = CsvOut::create(&dir.join("y.csv"), &["y"])?;
    for v in &raw.y {
        yw.row(&[fmt_f64(*v)])?;
    }
    yw.finish()?;

    let p = raw.x.cols();
    let xnames: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    let mut xw = CsvOut::create(&dir.join("x.csv"), &xnames.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
    for i in 0..raw.x.rows() {
        xw.row(&raw.x.row(i).iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>())?;
    }
    xw.finish()?;

    let m = raw.z[0].values().len();
    let znames: Vec<String> = (1..=m).map(|j| format!("z{j}")).collect();
    let mut zw = CsvOut::create(&dir.join("z.csv"), &znames.iter().map(|s| s.as_str()).collect::<Vec<_>>())?;
    for s in &raw.z {
        zw.row(&s.values().iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>())?;
    }
    zw.finish()?;

    let mut tw = CsvOut::create(&dir.join("truth.csv"), &["component", "index", "value"])?;
    for (i, v) in truth_beta.iter().enumerate() {
        tw.row(&["beta".to_string(), (i + 1).to_string(), fmt_f64(*v)])?;
    }
    for (i, v) in xi_coeffs.iter().enumerate() {
        tw.row(&["xi_coeff".to_string(), (i + 1).to_string(), fmt_f64(*v)])?;
    }
    tw.row(&["noise_variance".to_string(), "1".to_string(), fmt_f64(noise_variance)])?;
    tw.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulated_data_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::uniform(4).unwrap();
        let z: Vec<FunctionalSample> = (0..3)
            .map(|i| {
                FunctionalSample::new(grid.clone(), vec![i as f64, 0.5, -1.25, 2.0]).unwrap()
            })
            .collect();
        let raw = RawData::new(
            vec![1.5, -2.25, 0.125],
            Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            z,
            vec![],
        )
        .unwrap();
        write_simulated(dir.path(), &raw, &[3.0, 0.0], &[0.5; 3], 1.0).unwrap();
        let back = read_raw_data(dir.path(), &[1], None).unwrap();
        assert_eq!(back.y, raw.y);
        assert_eq!(back.x.data(), raw.x.data());
        for (a, b) in back.z.iter().zip(&raw.z) {
            assert_eq!(a.values(), b.values());
        }
        assert_eq!(back.always_active, vec![1]);
    }

    #[test]
    fn tensor_shape_must_match_columns() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::uniform(4).unwrap();
        let z: Vec<FunctionalSample> = (0..2)
            .map(|_| FunctionalSample::new(grid.clone(), vec![0.0; 4]).unwrap())
            .collect();
        let raw = RawData::new(vec![0.0, 1.0], Matrix::zeros(2, 1), z, vec![]).unwrap();
        write_simulated(dir.path(), &raw, &[0.0], &[0.0], 1.0).unwrap();
        assert!(read_raw_data(dir.path(), &[], Some((3, 2))).is_err());
        let ok = read_raw_data(dir.path(), &[], Some((2, 2))).unwrap();
        assert!(ok.z[0].grid().is_tensor());
    }

    #[test]
    fn float_formatting_round_trips_and_handles_specials() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 12345.6789, f64::MAX] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }
}
