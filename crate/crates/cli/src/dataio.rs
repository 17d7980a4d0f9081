//! CSV ingestion and seeded synthetic datasets.

use std::path::Path;

use lorp::Dataset;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// A dataset together with the covariate column names it was read with.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub data: Dataset,
    pub x_names: Vec<String>,
    pub target: String,
}

/// Reads a headed CSV file; `target` becomes `y`, every other column
/// becomes a covariate in header order.
pub fn load_csv(path: &Path, target: &str) -> Result<LoadedData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    let t = headers.iter().position(|h| h == target).ok_or_else(|| {
        CliError::Data(format!("column '{target}' not found in header {headers:?}"))
    })?;
    if headers.len() < 2 {
        return Err(CliError::Data(
            "need at least one covariate column besides the target".into(),
        ));
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        // Data rows are numbered from 1; the header is line 1 of the file.
        let row = r + 1;
        if record.len() != headers.len() {
            return Err(CliError::Data(format!(
                "row {row}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Data(format!(
                    "row {row}, column '{}': '{cell}' is not a number",
                    headers[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!(
                    "row {row}, column '{}': value {v} is not finite",
                    headers[c]
                )));
            }
            if c == t {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    if n < 2 {
        return Err(CliError::Data(format!(
            "need at least 2 data rows, found {n}"
        )));
    }
    let m = headers.len() - 1;
    let x = DMatrix::from_row_slice(n, m, &xs);
    let data = Dataset::new(x, DVector::from_vec(ys))?;
    let x_names = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != t)
        .map(|(_, h)| h.clone())
        .collect();
    Ok(LoadedData {
        data,
        x_names,
        target: target.to_owned(),
    })
}

/// Writes covariates and response as a headed CSV (`x` or `x1..xm`, then `y`).
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    write_csv_to(data, std::fs::File::create(path)?)
}

pub fn write_csv_to<W: std::io::Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let m = data.m();
    let mut header: Vec<String> = if m == 1 {
        vec!["x".into()]
    } else {
        (1..=m).map(|j| format!("x{j}")).collect()
    };
    header.push("y".into());
    w.write_record(&header)
        .map_err(|e| CliError::Data(e.to_string()))?;
    for (i, row) in data.rows().iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(data.y()[i].to_string());
        w.write_record(&rec)
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    /// `f(x) = c0 + c1 x + c2 x^2 + ...`
    Polynomial { coeffs: Vec<f64> },
    /// `f(x) = sin(2 pi freq x)`
    Sine { freq: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub kind: SynthKind,
    pub n: usize,
    pub noise_sd: f64,
    pub x_range: (f64, f64),
}

impl SynthKind {
    fn eval(&self, x: f64) -> f64 {
        match self {
            SynthKind::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
            SynthKind::Sine { freq } => (2.0 * std::f64::consts::PI * freq * x).sin(),
        }
    }
}

/// Equally spaced covariates on `x_range` and `y = f(x) + noise`.
///
/// The noise stream depends only on `seed`, so two seeds give datasets that
/// differ in `y` alone.
pub fn gen_synthetic(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    let (lo, hi) = spec.x_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(CliError::Usage(format!("invalid x range [{lo}, {hi}]")));
    }
    if spec.n < 2 {
        return Err(CliError::Usage(format!("need n >= 2, got {}", spec.n)));
    }
    if !(spec.noise_sd >= 0.0 && spec.noise_sd.is_finite()) {
        return Err(CliError::Usage(format!(
            "noise_sd must be >= 0, got {}",
            spec.noise_sd
        )));
    }
    if let SynthKind::Sine { freq } = spec.kind {
        if !freq.is_finite() {
            return Err(CliError::Usage(format!("invalid frequency {freq}")));
        }
    }
    let normal = Normal::new(0.0, spec.noise_sd).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = (hi - lo) / (spec.n - 1) as f64;
    let x: Vec<f64> = (0..spec.n)
        .map(|i| {
            if i == spec.n - 1 {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&xi| spec.kind.eval(xi) + normal.sample(&mut rng))
        .collect();
    Ok(Dataset::from_columns(&x, &y)?)
}

/// SHA-256 over `n`, `m` and every value's bit pattern, rows in order.
pub fn dataset_digest(data: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((data.n() as u64).to_le_bytes());
    h.update((data.m() as u64).to_le_bytes());
    for (i, row) in data.rows().iter().enumerate() {
        for v in row {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(data.y()[i].to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_rows() {
        let f = file("x,y\n1,1\n2,2\n");
        let d = load_csv(f.path(), "y").unwrap();
        assert_eq!((d.data.n(), d.data.m()), (2, 1));
        assert_eq!(d.data.y().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn target_in_the_middle() {
        let f = file("a,t,b\n1,10,5\n2,20,6\n3,30,7\n");
        let d = load_csv(f.path(), "t").unwrap();
        assert_eq!(d.x_names, vec!["a", "b"]);
        assert_eq!(d.data.rows()[1], vec![2.0, 6.0]);
        assert_eq!(d.data.y().as_slice(), &[10.0, 20.0, 30.0]);
    }

    #[test]
    fn load_errors() {
        let f = file("x,y\n1,1\n2,2\n");
        let e = load_csv(f.path(), "z").unwrap_err().to_string();
        assert!(e.contains("'z' not found"), "{e}");

        let f = file("x,y\n1,1\n2,abc\n");
        let e = load_csv(f.path(), "y").unwrap_err().to_string();
        assert!(e.contains("row 2") && e.contains("column 'y'"), "{e}");

        let f = file("x,y\n1,1\n");
        assert!(load_csv(f.path(), "y")
            .unwrap_err()
            .to_string()
            .contains("at least 2"));
        assert!(load_csv(Path::new("/nonexistent/file.csv"), "y").is_err());
    }

    fn spec(noise_sd: f64) -> SynthSpec {
        SynthSpec {
            kind: SynthKind::Polynomial {
                coeffs: vec![0.0, 1.0],
            },
            n: 11,
            noise_sd,
            x_range: (-1.0, 1.0),
        }
    }

    #[test]
    fn noiseless_identity() {
        let d = gen_synthetic(&spec(0.0), 3).unwrap();
        assert_eq!(d.x().column(0), d.y().column(0));
        assert_eq!(d.x()[(0, 0)], -1.0);
        assert_eq!(d.x()[(10, 0)], 1.0);
    }

    #[test]
    fn seeds() {
        let a = gen_synthetic(&spec(0.1), 1).unwrap();
        assert_eq!(a, gen_synthetic(&spec(0.1), 1).unwrap());
        let b = gen_synthetic(&spec(0.1), 2).unwrap();
        assert_eq!(a.x(), b.x());
        assert_ne!(a.y(), b.y());
    }

    #[test]
    fn synth_errors() {
        let mut s = spec(0.1);
        s.x_range = (1.0, 1.0);
        assert!(gen_synthetic(&s, 0).is_err());
        let mut s = spec(-1.0);
        s.n = 5;
        assert!(gen_synthetic(&s, 0).is_err());
        let mut s = spec(0.1);
        s.n = 1;
        assert!(gen_synthetic(&s, 0).is_err());
    }

    #[test]
    fn csv_round_trip_and_digest() {
        let d = gen_synthetic(&spec(0.1), 4).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&d, f.path()).unwrap();
        let back = load_csv(f.path(), "y").unwrap().data;
        assert_eq!(back, d);
        assert_eq!(dataset_digest(&back), dataset_digest(&d));
        assert_ne!(
            dataset_digest(&d),
            dataset_digest(&gen_synthetic(&spec(0.1), 5).unwrap())
        );
    }
}
