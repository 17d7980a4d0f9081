//! Brute-force loss-rank checks printed as JSON.
//!
//! Built-in fixtures: `sd` is the two-point dataset `x = (1, 2)`,
//! `y = (1, 2)` with responses restricted to `{0, 1, 2}`; `sc` is the same
//! dataset with responses ranging over the square `[0, 2]^2`. Both score the
//! polynomial regressors of degree 0, 1 and 2 (`d` basis functions).

use lorp::oracle::{exact_rank, grid_rank, mc_volume, BoxDomain, LossFunction, Sampling};
use lorp::{Dataset, RegressorSpec};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Example {
    Sd,
    Sc,
}

impl std::str::FromStr for Example {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sd" => Ok(Example::Sd),
            "sc" => Ok(Example::Sc),
            other => Err(CliError::Usage(format!(
                "unknown example '{other}', expected sd or sc"
            ))),
        }
    }
}

/// Loss functions of the candidates and the observed response.
pub struct OracleTarget {
    pub labels: Vec<String>,
    pub losses: Vec<LossFunction>,
    pub y_obs: Vec<f64>,
    /// Default value set (discrete fixture) or box (continuous fixture).
    pub values: Option<Vec<f64>>,
    pub domain: Option<BoxDomain>,
}

impl OracleTarget {
    pub fn from_specs(data: &Dataset, specs: &[(String, RegressorSpec)]) -> Result<Self> {
        let mut labels = Vec::new();
        let mut losses = Vec::new();
        for (label, spec) in specs {
            labels.push(label.clone());
            losses.push(LossFunction::quadratic(&spec.build(data)?));
        }
        Ok(Self {
            labels,
            losses,
            y_obs: data.y().iter().copied().collect(),
            values: None,
            domain: None,
        })
    }

    /// The fixture, restricted to the polynomial with `d` basis functions if given.
    pub fn example(which: Example, d: Option<usize>) -> Result<Self> {
        let data = Dataset::from_columns(&[1.0, 2.0], &[1.0, 2.0])?;
        let ds: Vec<usize> = match d {
            Some(d) if d <= 2 => vec![d],
            Some(d) => return Err(CliError::Usage(format!("fixture has d in 0..=2, got {d}"))),
            None => vec![0, 1, 2],
        };
        let specs: Vec<(String, RegressorSpec)> = ds
            .into_iter()
            .map(|d| (format!("d{d}"), RegressorSpec::Polynomial { d }))
            .collect();
        let mut t = Self::from_specs(&data, &specs)?;
        match which {
            Example::Sd => t.values = Some(vec![0.0, 1.0, 2.0]),
            Example::Sc => t.domain = Some(BoxDomain::cube(2, 0.0, 2.0)?),
        }
        Ok(t)
    }
}

fn one_or_many<T: Serialize>(items: Vec<T>) -> Value {
    let mut values: Vec<Value> = items
        .into_iter()
        .map(|i| serde_json::to_value(i).expect("serializable"))
        .collect();
    if values.len() == 1 {
        values.pop().expect("one item")
    } else {
        json!({ "results": values })
    }
}

/// Exact ranks over `values^n`; the selected candidate has the smallest rank.
pub fn exact_rank_cmd(target: &OracleTarget, values: Option<&[f64]>) -> Result<Value> {
    let values = values
        .or(target.values.as_deref())
        .ok_or_else(|| CliError::Usage("exact-rank needs --values or --example sd".into()))?;
    let ranks = target
        .losses
        .iter()
        .map(|l| exact_rank(l, &target.y_obs, values))
        .collect::<lorp::Result<Vec<u64>>>()?;
    let best = ranks
        .iter()
        .enumerate()
        .min_by_key(|&(i, r)| (*r, i))
        .map(|(i, _)| i)
        .expect("at least one candidate");
    let map: serde_json::Map<String, Value> = target
        .labels
        .iter()
        .zip(&ranks)
        .map(|(l, r)| (l.clone(), json!(r)))
        .collect();
    Ok(json!({
        "values": values,
        "ranks": map,
        "selected": target.labels[best],
    }))
}

#[derive(Serialize)]
struct GridOut<'a> {
    label: &'a str,
    eps: f64,
    count: u64,
    volume: f64,
}

pub fn grid_rank_cmd(target: &OracleTarget, domain: Option<&BoxDomain>, eps: f64) -> Result<Value> {
    let domain = resolve_domain(target, domain)?;
    let out = target
        .labels
        .iter()
        .zip(&target.losses)
        .map(|(label, loss)| {
            grid_rank(loss, &target.y_obs, &domain, eps).map(|g| GridOut {
                label,
                eps,
                count: g.count,
                volume: g.volume_estimate,
            })
        })
        .collect::<lorp::Result<Vec<_>>>()?;
    Ok(one_or_many(out))
}

#[derive(Serialize)]
struct McOut<'a> {
    label: &'a str,
    volume: f64,
    stderr: f64,
    hits: u64,
    samples: u64,
    seed: u64,
    zero_hits: bool,
}

pub fn mc_volume_cmd(
    target: &OracleTarget,
    domain: Option<&BoxDomain>,
    samples: u64,
    seed: u64,
) -> Result<Value> {
    let domain = resolve_domain(target, domain)?;
    let sampling = Sampling::new(samples, seed);
    let out = target
        .labels
        .iter()
        .zip(&target.losses)
        .map(|(label, loss)| {
            mc_volume(loss, &target.y_obs, &domain, &sampling).map(|v| McOut {
                label,
                volume: v.estimate,
                stderr: v.stderr,
                hits: v.hits,
                samples: v.samples,
                seed,
                zero_hits: v.zero_hits,
            })
        })
        .collect::<lorp::Result<Vec<_>>>()?;
    Ok(one_or_many(out))
}

fn resolve_domain(target: &OracleTarget, domain: Option<&BoxDomain>) -> Result<BoxDomain> {
    match (domain, &target.domain) {
        (Some(d), _) => Ok(d.clone()),
        (None, Some(d)) => Ok(d.clone()),
        (None, None) => Ok(BoxDomain::around(&target.y_obs)?),
    }
}
