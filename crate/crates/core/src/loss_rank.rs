//! Regularized loss rank of a linear regressor.
//!
//! For a hat matrix `M` and quadratic loss, the set of responses fitted at
//! least as well as the observed `y` is the ellipsoid `{y' : y'^T S_a y' <= L}`
//! with `S_a = (I - M)^T (I - M) + a I`. Its log-volume is
//!
//! ```text
//! LR(a) = (n/2) log(y^T S_a y) - 1/2 log det S_a  [+ log v_n]
//! ```
//!
//! which is evaluated in O(n) per `a` from the eigenvalues of `S_0`, then
//! minimized over `a` and over candidate regressors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::HatMatrix;
use crate::error::{LorpError, Result};
use crate::optim::{bisect_log_scale, minimize_log_scale, ScanSettings};

/// What the regularizer penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// `a ||y||^2`, giving `S_a = S_0 + a I`.
    #[default]
    ResponseNorm,
    /// `a ||ŷ||^2`, giving `S_a = S_0 + a M^T M`.
    EstimateNorm,
}

/// `S_0 = (I - M)^T (I - M)` and the matrix multiplying the regularization
/// weight (`None` stands for the identity).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub s0: DMatrix<f64>,
    pub penalty_matrix: Option<DMatrix<f64>>,
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn build_s0(m: &HatMatrix, penalty: PenaltyKind) -> QuadraticForm {
    let n = m.n();
    let resid = DMatrix::<f64>::identity(n, n) - m.entries();
    let s0 = symmetrize(resid.transpose() * &resid);
    let penalty_matrix = match penalty {
        PenaltyKind::ResponseNorm => None,
        PenaltyKind::EstimateNorm => Some(symmetrize(m.entries().transpose() * m.entries())),
    };
    QuadraticForm { s0, penalty_matrix }
}

/// Everything needed to evaluate `LR(a)` for any `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCache {
    /// Eigenvalues of `S_0` on the kept subspace, nondecreasing, all >= 0.
    pub lambdas: Vec<f64>,
    /// `y^T S_0 y = ||(I - M) y||^2`.
    pub q0: f64,
    /// Squared norm of the penalized vector: `||y||^2`, `||y - ȳ1||^2` when the
    /// constant direction is filtered, or `||M y||^2` under the estimate penalty.
    pub y_sq: f64,
    pub n_total: usize,
    pub n_dropped: usize,
    pub generic_filtered: bool,
    pub penalty: PenaltyKind,
    /// `S_0` and `M^T M`, kept for the estimate penalty whose spectrum moves
    /// non-uniformly with `a`.
    estimate_form: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl SpectralCache {
    pub fn n_kept(&self) -> usize {
        self.n_total - self.n_dropped
    }
}

/// Default eigenvalue snapping tolerance: `1e-9 * max(1, max eigenvalue)`.
pub fn default_zero_tol(max_eigenvalue: f64) -> f64 {
    1e-9 * max_eigenvalue.max(1.0)
}

/// Orthonormal basis (n × (n-1)) of the complement of the constant vector,
/// from the Householder reflector that maps `e_1` onto `1/sqrt(n)`.
fn constant_complement_basis(n: usize) -> DMatrix<f64> {
    let u = 1.0 / (n as f64).sqrt();
    let mut v = DVector::from_element(n, u);
    v[0] -= 1.0;
    let vv = v.dot(&v);
    let reflector = DMatrix::<f64>::identity(n, n) - (&v * v.transpose()) * (2.0 / vv);
    reflector.columns(1, n - 1).into_owned()
}

fn sorted_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Eigen-decomposes `S_0` and records the scalars of the loss-rank objective.
///
/// Eigenvalues within `zero_tol` of zero are snapped to exactly 0; anything
/// below `-zero_tol` means `S_0` was not positive semidefinite.
pub fn spectral_cache(
    m: &HatMatrix,
    y: &DVector<f64>,
    penalty: PenaltyKind,
    filter_generic: bool,
    zero_tol: Option<f64>,
) -> Result<SpectralCache> {
    m.check_response(y)?;
    let n = m.n();
    if filter_generic && penalty == PenaltyKind::EstimateNorm {
        return Err(LorpError::InvalidInput(
            "generic-direction filtering requires the response-norm penalty".into(),
        ));
    }
    if filter_generic && n < 2 {
        return Err(LorpError::InvalidInput(
            "generic-direction filtering needs n >= 2".into(),
        ));
    }
    let form = build_s0(m, penalty);
    let residual = y - m.fitted(y);
    let q0 = residual.norm_squared();

    let mut lambdas = sorted_eigenvalues(form.s0.clone());
    let max_ev = lambdas.last().copied().unwrap_or(0.0);
    let tol = zero_tol.unwrap_or_else(|| default_zero_tol(max_ev));

    let (y_sq, n_dropped) = if filter_generic {
        let row_sums = m.entries().column_sum();
        let deviation = row_sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        if deviation > tol {
            return Err(LorpError::FilterInapplicable { deviation });
        }
        let h = constant_complement_basis(n);
        lambdas = sorted_eigenvalues(symmetrize(h.transpose() * &form.s0 * &h));
        let mean = y.mean();
        let centered = y.map(|v| v - mean);
        (centered.norm_squared(), 1)
    } else {
        match &form.penalty_matrix {
            None => (y.norm_squared(), 0),
            Some(_) => (m.fitted(y).norm_squared(), 0),
        }
    };

    for l in lambdas.iter_mut() {
        if *l < -tol {
            return Err(LorpError::NumericalFailure(format!(
                "S_0 has eigenvalue {l:e} below -{tol:e}; not positive semidefinite"
            )));
        }
        if l.abs() <= tol {
            *l = 0.0;
        }
    }

    let estimate_form = form.penalty_matrix.map(|g| (form.s0, g));
    Ok(SpectralCache {
        lambdas,
        q0,
        y_sq,
        n_total: n,
        n_dropped,
        generic_filtered: filter_generic,
        penalty,
        estimate_form,
    })
}

/// Log-volume of the unit ball in `k` dimensions, `log(pi^(k/2) / Γ(k/2 + 1))`.
pub fn log_unit_ball_volume(k: usize) -> f64 {
    let h = k as f64 / 2.0;
    h * std::f64::consts::PI.ln() - ln_gamma(h + 1.0)
}

/// `log(l + a)` without losing digits when `a` dominates.
fn log_shifted(l: f64, a: f64) -> f64 {
    if a > 0.0 {
        a.ln() + (l / a).ln_1p()
    } else {
        l.ln()
    }
}

struct Evaluation {
    penalized_loss: f64,
    logdet: f64,
}

fn evaluate(cache: &SpectralCache, alpha: f64) -> Result<Evaluation> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(LorpError::InvalidInput(format!(
            "regularization weight must be finite and >= 0, got {alpha}"
        )));
    }
    let penalized_loss = cache.q0 + alpha * cache.y_sq;
    let logdet = match &cache.estimate_form {
        None => {
            if alpha == 0.0 && cache.lambdas.iter().any(|&l| l <= 0.0) {
                return Err(LorpError::Singular(
                    "S_0 is singular, loss rank is +inf at zero regularization".into(),
                ));
            }
            cache.lambdas.iter().map(|&l| log_shifted(l, alpha)).sum()
        }
        Some((s0, g)) => {
            let ev = sorted_eigenvalues(s0 + g * alpha);
            let tol = default_zero_tol(ev.last().copied().unwrap_or(0.0));
            if ev[0] <= tol {
                return Err(LorpError::Singular(format!(
                    "S_0 + a M^T M is singular at a = {alpha:e}"
                )));
            }
            ev.iter().map(|v| v.ln()).sum()
        }
    };
    if !(penalized_loss > 0.0) {
        return Err(LorpError::DegenerateData(penalized_loss));
    }
    Ok(Evaluation {
        penalized_loss,
        logdet,
    })
}

fn objective(cache: &SpectralCache, e: &Evaluation, include_vn: bool) -> f64 {
    let k = cache.n_kept();
    let mut lr = 0.5 * k as f64 * e.penalized_loss.ln() - 0.5 * e.logdet;
    if include_vn {
        lr += log_unit_ball_volume(k);
    }
    lr
}

/// `LR(a) = (k/2) log(q0 + a y_sq) - 1/2 Σ log(λ_i + a)` with `k` the number
/// of kept dimensions, plus `log v_k` when `include_vn`.
pub fn loss_rank_at_alpha(cache: &SpectralCache, alpha: f64, include_vn: bool) -> Result<f64> {
    let e = evaluate(cache, alpha)?;
    Ok(objective(cache, &e, include_vn))
}

/// `dLR/da` for the response-norm penalty.
fn loss_rank_slope(cache: &SpectralCache, alpha: f64) -> f64 {
    let k = cache.n_kept() as f64;
    let pen = cache.q0 + alpha * cache.y_sq;
    0.5 * k * cache.y_sq / pen - 0.5 * cache.lambdas.iter().map(|l| 1.0 / (l + alpha)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaOptimum {
    pub alpha_star: f64,
    /// Minimal loss rank, `v_n` term excluded.
    pub lr_min: f64,
    pub flat: bool,
}

/// Minimizes `LR(a)` over `[lo, hi]`: log-grid scan, golden-section refinement
/// of the best cell, then (for the response-norm penalty) bisection on the
/// analytic slope over that cell. Golden section alone stalls near
/// `sqrt(eps)` relative accuracy in `a`; the slope root does not.
///
/// When the objective varies by less than `10 * rel_tol` over the whole grid it
/// is reported flat and `alpha_star` is the geometric mean of the bounds.
pub fn optimize_alpha(cache: &SpectralCache, settings: &ScanSettings) -> Result<AlphaOptimum> {
    let scan = minimize_log_scale(settings, |a| loss_rank_at_alpha(cache, a, false))?;
    if scan.total_variation < 10.0 * settings.rel_tol {
        let alpha_star = (settings.lo * settings.hi).sqrt();
        return Ok(AlphaOptimum {
            alpha_star,
            lr_min: loss_rank_at_alpha(cache, alpha_star, false)?,
            flat: true,
        });
    }
    let mut alpha_star = scan.argmin;
    if cache.estimate_form.is_none() {
        let (a, b) = scan.cell;
        let root = bisect_log_scale(a, b, |x| Ok(loss_rank_slope(cache, x)))?;
        // No interior root: a minimum on a search bound shows as the slope's sign there.
        let root = root.or_else(|| {
            if a == settings.lo && loss_rank_slope(cache, a) >= 0.0 {
                Some(a)
            } else if b == settings.hi && loss_rank_slope(cache, b) <= 0.0 {
                Some(b)
            } else {
                None
            }
        });
        if let Some(root) = root {
            if loss_rank_at_alpha(cache, root, false)? <= scan.min + 1e-12 * scan.min.abs().max(1.0)
            {
                alpha_star = root;
            }
        }
    }
    Ok(AlphaOptimum {
        alpha_star,
        lr_min: loss_rank_at_alpha(cache, alpha_star, false)?,
        flat: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AlphaChoice {
    Optimize {
        lo: f64,
        hi: f64,
        grid_points: usize,
        rel_tol: f64,
    },
    Fixed {
        alpha: f64,
    },
}

impl Default for AlphaChoice {
    fn default() -> Self {
        let s = ScanSettings::default();
        AlphaChoice::Optimize {
            lo: s.lo,
            hi: s.hi,
            grid_points: s.grid_points,
            rel_tol: s.rel_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossRankOptions {
    pub penalty: PenaltyKind,
    pub filter_generic: bool,
    pub alpha: AlphaChoice,
    pub include_vn: bool,
    /// Eigenvalue snapping tolerance; `None` uses [`default_zero_tol`].
    pub zero_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRankResult {
    pub alpha_star: f64,
    pub lr: f64,
    /// `y^T S_a y` at `alpha_star`.
    pub loss_at_alpha: f64,
    /// `log det S_a` at `alpha_star` (on the kept subspace).
    pub logdet_at_alpha: f64,
    pub include_vn: bool,
    pub flat_objective: bool,
    pub n_kept: usize,
}

/// Loss rank of one regressor, with the regularization weight optimized
/// (or fixed) according to `opts`.
pub fn loss_rank(m: &HatMatrix, y: &DVector<f64>, opts: &LossRankOptions) -> Result<LossRankResult> {
    let cache = spectral_cache(m, y, opts.penalty, opts.filter_generic, opts.zero_tol)?;
    let (alpha_star, flat) = match opts.alpha {
        AlphaChoice::Optimize {
            lo,
            hi,
            grid_points,
            rel_tol,
        } => {
            let opt = optimize_alpha(
                &cache,
                &ScanSettings {
                    lo,
                    hi,
                    grid_points,
                    rel_tol,
                },
            )?;
            (opt.alpha_star, opt.flat)
        }
        AlphaChoice::Fixed { alpha } => (alpha, false),
    };
    let e = evaluate(&cache, alpha_star)?;
    Ok(LossRankResult {
        alpha_star,
        lr: objective(&cache, &e, opts.include_vn),
        loss_at_alpha: e.penalized_loss,
        logdet_at_alpha: e.logdet,
        include_vn: opts.include_vn,
        flat_objective: flat,
        n_kept: cache.n_kept(),
    })
}

/// Per-candidate outcomes and the minimal-loss-rank winner.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Index of the winner; ties go to the earliest candidate.
    pub index: usize,
    pub outcomes: Vec<Result<LossRankResult>>,
}

impl Selection {
    pub fn winner(&self) -> &LossRankResult {
        self.outcomes[self.index]
            .as_ref()
            .expect("winner is always a successful candidate")
    }
}

/// Index of the smallest finite score, earliest on ties.
pub fn argmin_first<I>(scores: I) -> Option<usize>
where
    I: IntoIterator<Item = Option<f64>>,
{
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if let Some(v) = s.filter(|v| !v.is_nan()) {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

/// Scores every candidate (in parallel) and picks the minimal loss rank.
///
/// Failed candidates are kept in `outcomes` but excluded from the argmin.
pub fn select_model(
    candidates: &[HatMatrix],
    y: &DVector<f64>,
    opts: &LossRankOptions,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(LorpError::InvalidInput("no candidate regressors".into()));
    }
    let outcomes: Vec<Result<LossRankResult>> = candidates
        .par_iter()
        .map(|m| loss_rank(m, y, opts))
        .collect();
    let index = argmin_first(outcomes.iter().map(|o| o.as_ref().ok().map(|r| r.lr)))
        .ok_or(LorpError::SelectionFailed)?;
    Ok(Selection { index, outcomes })
}

/// `log |{y' : y'^T S_a y' <= L}| = log v_n + (n/2) log L - 1/2 Σ log(λ_i + a)`.
pub fn ellipsoid_volume(lambdas: &[f64], alpha: f64, level: f64) -> Result<f64> {
    if !(level >= 0.0) {
        return Err(LorpError::InvalidInput(format!(
            "loss level must be >= 0, got {level}"
        )));
    }
    let mut logdet = 0.0;
    for &l in lambdas {
        let axis = l + alpha;
        if !(axis > 0.0) {
            return Err(LorpError::Singular(format!(
                "ellipsoid axis with λ + a = {axis:e} is unbounded"
            )));
        }
        logdet += log_shifted(l, alpha);
    }
    let n = lambdas.len();
    Ok(log_unit_ball_volume(n) + 0.5 * n as f64 * level.ln() - 0.5 * logdet)
}
