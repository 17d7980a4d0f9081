//! Brute-force ground truth for loss ranks and loss volumes.
//!
//! Everything here works from a black-box loss over candidate response
//! vectors and so applies to any regressor and loss, at desk scale.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::HatMatrix;
use crate::error::{LorpError, Result};

/// Default cap on enumerated or gridded points.
pub const ENUMERATION_BUDGET: u64 = 10_000_000;

/// Loss of a candidate response vector `y'`.
#[derive(Clone)]
pub struct LossFunction {
    name: String,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for LossFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LossFunction").field("name", &self.name).finish()
    }
}

impl LossFunction {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    /// Quadratic loss `||y' - M y'||^2` of a linear regressor.
    pub fn quadratic(m: &HatMatrix) -> Self {
        let resid = DMatrix::<f64>::identity(m.n(), m.n()) - m.entries();
        Self::new(format!("quadratic[{}]", m.spec()), move |y| {
            (&resid * DVector::from_column_slice(y)).norm_squared()
        })
    }

    /// Quadratic form `y'^T S y'`.
    pub fn quadratic_form(s: DMatrix<f64>) -> Self {
        Self::new("quadratic_form", move |y| {
            let v = DVector::from_column_slice(y);
            v.dot(&(&s * &v))
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        (self.f)(y)
    }
}

/// `loss <= level`, with a small allowance so that exact ties computed along
/// different floating-point paths still count as ties.
fn within(loss: f64, level: f64) -> bool {
    loss <= level + 1e-9 * level.abs().max(1e-3)
}

/// Axis-aligned box for sampling and gridding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(LorpError::InvalidInput("box bounds must be nonempty and of equal length".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(LorpError::InvalidInput("box needs finite lo < hi in every coordinate".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    /// `[min(y) - 3 range, max(y) + 3 range]^n`, with unit range when `y` is constant.
    pub fn around(y: &[f64]) -> Result<Self> {
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = if hi > lo { hi - lo } else { 1.0 };
        Self::cube(y.len(), lo - 3.0 * range, hi + 3.0 * range)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }
}

/// Number of `y' ∈ values^n` with `loss(y') <= loss(y_obs)`.
pub fn exact_rank(loss: &LossFunction, y_obs: &[f64], values: &[f64]) -> Result<u64> {
    exact_rank_with_budget(loss, y_obs, values, ENUMERATION_BUDGET)
}

pub fn exact_rank_with_budget(
    loss: &LossFunction,
    y_obs: &[f64],
    values: &[f64],
    budget: u64,
) -> Result<u64> {
    if values.is_empty() || y_obs.is_empty() {
        return Err(LorpError::InvalidInput("value set and response must be nonempty".into()));
    }
    let n = y_obs.len();
    let total = (values.len() as f64).powi(n as i32);
    if total > budget as f64 {
        return Err(LorpError::TooLarge { points: total, budget });
    }
    let level = loss.eval(y_obs);
    let mut digits = vec![0usize; n];
    let mut point: Vec<f64> = vec![values[0]; n];
    let mut count = 0u64;
    loop {
        if within(loss.eval(&point), level) {
            count += 1;
        }
        // Odometer increment over values^n.
        let mut i = 0;
        loop {
            if i == n {
                return Ok(count);
            }
            digits[i] += 1;
            if digits[i] < values.len() {
                point[i] = values[digits[i]];
                break;
            }
            digits[i] = 0;
            point[i] = values[0];
            i += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridRank {
    pub count: u64,
    /// `count * eps^n`.
    pub volume_estimate: f64,
}

/// Counts `eps`-grid points of the box (anchored at `lo`) with loss at most
/// `loss(y_obs)`.
pub fn grid_rank(loss: &LossFunction, y_obs: &[f64], domain: &BoxDomain, eps: f64) -> Result<GridRank> {
    grid_rank_with_budget(loss, y_obs, domain, eps, ENUMERATION_BUDGET)
}

pub fn grid_rank_with_budget(
    loss: &LossFunction,
    y_obs: &[f64],
    domain: &BoxDomain,
    eps: f64,
    budget: u64,
) -> Result<GridRank> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(LorpError::InvalidInput(format!("grid spacing must be positive, got {eps}")));
    }
    if y_obs.len() != domain.dim() {
        return Err(LorpError::InvalidInput("box dimension differs from response length".into()));
    }
    let n = domain.dim();
    let axes: Vec<Vec<f64>> = domain
        .lo
        .iter()
        .zip(&domain.hi)
        .map(|(&a, &b)| {
            let steps = ((b - a) / eps + 1e-9).floor() as u64;
            (0..=steps).map(|i| a + i as f64 * eps).collect()
        })
        .collect();
    let total: f64 = axes.iter().map(|a| a.len() as f64).product();
    if total > budget as f64 {
        return Err(LorpError::TooLarge { points: total, budget });
    }
    let level = loss.eval(y_obs);
    // Parallel over the first axis; each slice enumerates the rest in order.
    let count = axes[0]
        .par_iter()
        .map(|&first| {
            let mut digits = vec![0usize; n];
            let mut point: Vec<f64> = axes.iter().map(|a| a[0]).collect();
            point[0] = first;
            let mut c = 0u64;
            loop {
                if within(loss.eval(&point), level) {
                    c += 1;
                }
                let mut i = 1;
                loop {
                    if i >= n {
                        return c;
                    }
                    digits[i] += 1;
                    if digits[i] < axes[i].len() {
                        point[i] = axes[i][digits[i]];
                        break;
                    }
                    digits[i] = 0;
                    point[i] = axes[i][0];
                    i += 1;
                }
            }
        })
        .sum::<u64>();
    Ok(GridRank {
        count,
        volume_estimate: count as f64 * eps.powi(n as i32),
    })
}

/// Sampling configuration for the Monte-Carlo estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sampling {
    pub n_samples: u64,
    pub seed: u64,
    /// Samples are split into this many chunks, each with its own stream;
    /// results depend on `(seed, chunks)` but not on thread scheduling.
    pub chunks: u64,
}

impl Sampling {
    pub fn new(n_samples: u64, seed: u64) -> Self {
        Self {
            n_samples,
            seed,
            chunks: 16,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 1000 {
            return Err(LorpError::InvalidInput(format!(
                "need at least 1000 samples, got {}",
                self.n_samples
            )));
        }
        if self.chunks == 0 {
            return Err(LorpError::InvalidInput("chunk count must be positive".into()));
        }
        Ok(())
    }

    /// Runs `visit` on every sample of every chunk and merges the chunk
    /// accumulators in chunk order.
    fn run<A, F>(&self, domain: &BoxDomain, init: A, visit: F) -> A
    where
        A: Clone + Send + Sync + std::ops::AddAssign,
        F: Fn(&mut A, &[f64]) + Sync,
    {
        let per = self.n_samples / self.chunks;
        let extra = self.n_samples % self.chunks;
        let parts: Vec<A> = (0..self.chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(c);
                let draws = per + u64::from(c < extra);
                let mut acc = init.clone();
                let mut point = vec![0.0; domain.dim()];
                for _ in 0..draws {
                    for (i, p) in point.iter_mut().enumerate() {
                        *p = rng.random_range(domain.lo[i]..domain.hi[i]);
                    }
                    visit(&mut acc, &point);
                }
                acc
            })
            .collect();
        let mut total = init;
        for p in parts {
            total += p;
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolumeEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub hits: u64,
    pub samples: u64,
    /// No sample fell inside the region; widen the box or sample more.
    pub zero_hits: bool,
}

/// Volume of `{y' in box : loss(y') <= level}` by uniform rejection sampling.
pub fn mc_volume_below(
    loss: &LossFunction,
    level: f64,
    domain: &BoxDomain,
    sampling: &Sampling,
) -> Result<VolumeEstimate> {
    sampling.validate()?;
    let hits = sampling.run(domain, 0u64, |acc, p| {
        if within(loss.eval(p), level) {
            *acc += 1;
        }
    });
    let n = sampling.n_samples as f64;
    let p = hits as f64 / n;
    let vol = domain.volume();
    Ok(VolumeEstimate {
        estimate: vol * p,
        stderr: vol * (p * (1.0 - p) / n).sqrt(),
        hits,
        samples: sampling.n_samples,
        zero_hits: hits == 0,
    })
}

/// Loss volume at the observed level `loss(y_obs)`.
pub fn mc_volume(
    loss: &LossFunction,
    y_obs: &[f64],
    domain: &BoxDomain,
    sampling: &Sampling,
) -> Result<VolumeEstimate> {
    if y_obs.len() != domain.dim() {
        return Err(LorpError::InvalidInput("box dimension differs from response length".into()));
    }
    mc_volume_below(loss, loss.eval(y_obs), domain, sampling)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct PairCounts {
    a: u64,
    b: u64,
    both: u64,
}

impl std::ops::AddAssign for PairCounts {
    fn add_assign(&mut self, o: Self) {
        self.a += o.a;
        self.b += o.b;
        self.both += o.both;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolumeRatio {
    /// Estimate of `|V_B| / |V_A|`.
    pub ratio: f64,
    pub log_ratio: f64,
    /// Delta-method standard error of `log_ratio`.
    pub log_stderr: f64,
    /// Fraction of samples in `V_A` that also lie in `V_B`.
    pub frac_a_in_b: f64,
    /// Fraction of samples in `V_B` that also lie in `V_A`.
    pub frac_b_in_a: f64,
}

/// Estimates `|V_B| / |V_A|` for `V_X = {y' : loss_X(y') <= level_X}`.
///
/// Uniform box samples that are accepted into each region act as uniform
/// samples of that region; the ratio is then `P(B | A) / P(A | B)`, the two
/// cross-membership fractions. The log of the ratio is the loss-rank
/// difference `LR_B - LR_A`.
pub fn mc_volume_ratio(
    loss_a: &LossFunction,
    level_a: f64,
    loss_b: &LossFunction,
    level_b: f64,
    domain: &BoxDomain,
    sampling: &Sampling,
) -> Result<VolumeRatio> {
    sampling.validate()?;
    let c = sampling.run(domain, PairCounts::default(), |acc, p| {
        let in_a = within(loss_a.eval(p), level_a);
        let in_b = within(loss_b.eval(p), level_b);
        acc.a += u64::from(in_a);
        acc.b += u64::from(in_b);
        acc.both += u64::from(in_a && in_b);
    });
    if c.both == 0 {
        return Err(LorpError::IndeterminateRatio);
    }
    let frac_a_in_b = c.both as f64 / c.a as f64;
    let frac_b_in_a = c.both as f64 / c.b as f64;
    let ratio = frac_a_in_b / frac_b_in_a;
    let n = sampling.n_samples as f64;
    let (pa, pb, pab) = (c.a as f64 / n, c.b as f64 / n, c.both as f64 / n);
    let var = ((1.0 - pa) / pa + (1.0 - pb) / pb - 2.0 * (pab - pa * pb) / (pa * pb)) / n;
    Ok(VolumeRatio {
        ratio,
        log_ratio: ratio.ln(),
        log_stderr: var.max(0.0).sqrt(),
        frac_a_in_b,
        frac_b_in_a,
    })
}
