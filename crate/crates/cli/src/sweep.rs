//! Family sweeps: `family:param=lo..hi[:step]`.
//!
//! Integer families (`knn:k`, `knnprime:k`, `poly:d`) step by `step`
//! (default 1). For `kernel:sigma` the optional third part is the number of
//! geometrically spaced bandwidths (default 16). A single value such as
//! `poly:d=3` sweeps just that value.

use std::fmt;
use std::str::FromStr;

use lorp::RegressorSpec;
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Knn,
    KnnPrime,
    Kernel,
    Poly,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Knn => "knn",
            Family::KnnPrime => "knnprime",
            Family::Kernel => "kernel",
            Family::Poly => "poly",
        }
    }

    pub fn param(self) -> &'static str {
        match self {
            Family::Knn | Family::KnnPrime => "k",
            Family::Kernel => "sigma",
            Family::Poly => "d",
        }
    }
}

const DEFAULT_SIGMA_POINTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySweep {
    pub family: Family,
    /// The sweep as written on the command line.
    pub text: String,
    pub specs: Vec<RegressorSpec>,
}

impl FamilySweep {
    /// The swept parameter value of a spec in this family.
    pub fn param_value(spec: &RegressorSpec) -> f64 {
        match spec {
            RegressorSpec::Knn { k } | RegressorSpec::KnnPrime { k } => *k as f64,
            RegressorSpec::GaussianKernel { sigma } => *sigma,
            RegressorSpec::Polynomial { d } => *d as f64,
            _ => f64::NAN,
        }
    }
}

impl fmt::Display for FamilySweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

fn usage(text: &str, why: impl fmt::Display) -> CliError {
    CliError::Usage(format!("bad family sweep '{text}': {why}"))
}

fn int_range(text: &str, range: &str, step: Option<&str>) -> Result<Vec<usize>, CliError> {
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| usage(text, format!("'{s}' is not a nonnegative integer")))
    };
    let (lo, hi) = match range.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let v = parse(range)?;
            (v, v)
        }
    };
    let step = step.map(parse).transpose()?.unwrap_or(1);
    if step == 0 {
        return Err(usage(text, "step must be positive"));
    }
    if lo > hi {
        return Err(usage(text, format!("empty range {lo}..{hi}")));
    }
    Ok((lo..=hi).step_by(step).collect())
}

fn geometric_range(text: &str, range: &str, points: Option<&str>) -> Result<Vec<f64>, CliError> {
    let parse = |s: &str| match s.trim().parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(usage(text, format!("'{s}' is not a positive number"))),
    };
    let (lo, hi) = match range.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let v = parse(range)?;
            (v, v)
        }
    };
    if lo > hi {
        return Err(usage(text, format!("empty range {lo}..{hi}")));
    }
    if lo == hi {
        return Ok(vec![lo]);
    }
    let points = match points {
        Some(p) => p
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&p| p >= 2)
            .ok_or_else(|| usage(text, format!("point count '{p}' must be an integer >= 2")))?,
        None => DEFAULT_SIGMA_POINTS,
    };
    Ok(lorp::optim::log_grid(lo, hi, points))
}

impl FromStr for FamilySweep {
    type Err = CliError;

    fn from_str(text: &str) -> Result<Self, CliError> {
        let (fam, rest) = text
            .split_once(':')
            .ok_or_else(|| usage(text, "expected family:param=range"))?;
        let family = match fam.trim() {
            "knn" => Family::Knn,
            "knnprime" => Family::KnnPrime,
            "kernel" => Family::Kernel,
            "poly" => Family::Poly,
            other => return Err(usage(text, format!("unknown family '{other}'"))),
        };
        let (param, values) = rest
            .split_once('=')
            .ok_or_else(|| usage(text, "expected param=range"))?;
        if param.trim() != family.param() {
            return Err(usage(
                text,
                format!(
                    "family {} takes parameter '{}'",
                    family.name(),
                    family.param()
                ),
            ));
        }
        let (range, extra) = match values.split_once(':') {
            Some((r, s)) => (r, Some(s)),
            None => (values, None),
        };
        let specs = match family {
            Family::Knn => int_range(text, range, extra)?
                .into_iter()
                .map(|k| RegressorSpec::Knn { k })
                .collect(),
            Family::KnnPrime => int_range(text, range, extra)?
                .into_iter()
                .map(|k| RegressorSpec::KnnPrime { k })
                .collect(),
            Family::Poly => int_range(text, range, extra)?
                .into_iter()
                .map(|d| RegressorSpec::Polynomial { d })
                .collect(),
            Family::Kernel => geometric_range(text, range, extra)?
                .into_iter()
                .map(|sigma| RegressorSpec::GaussianKernel { sigma })
                .collect(),
        };
        Ok(FamilySweep {
            family,
            text: text.to_owned(),
            specs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> FamilySweep {
        s.parse().unwrap()
    }

    #[test]
    fn integer_sweeps() {
        assert_eq!(parse("knn:k=1..20").specs.len(), 20);
        assert_eq!(
            parse("poly:d=0..10:5").specs,
            vec![
                RegressorSpec::Polynomial { d: 0 },
                RegressorSpec::Polynomial { d: 5 },
                RegressorSpec::Polynomial { d: 10 }
            ]
        );
        assert_eq!(
            parse("knnprime:k=3").specs,
            vec![RegressorSpec::KnnPrime { k: 3 }]
        );
    }

    #[test]
    fn kernel_grid_is_geometric() {
        let s = parse("kernel:sigma=0.01..10:4").specs;
        let v: Vec<f64> = s.iter().map(FamilySweep::param_value).collect();
        assert_eq!(v.len(), 4);
        assert_eq!(v[0], 0.01);
        assert_eq!(v[3], 10.0);
        assert!((v[1] / v[0] - 10.0).abs() < 1e-9);
        assert_eq!(parse("kernel:sigma=0.01..10").specs.len(), 16);
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "knn",
            "knn:d=1..3",
            "tree:k=1..2",
            "knn:k=5..1",
            "knn:k=1..3:0",
            "poly:d=a..b",
            "kernel:sigma=0..1",
            "kernel:sigma=1..2:1",
        ] {
            let e = bad.parse::<FamilySweep>().unwrap_err();
            assert_eq!(e.exit_code(), 1, "{bad}");
        }
    }
}
