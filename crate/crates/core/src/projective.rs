//! Closed-form loss rank for orthogonal projection regressors (`P = P^2 = P^T`).
//!
//! For a projection of trace `d`, `S_a` has `d` eigenvalues `a` and `n - d`
//! eigenvalues `1 + a`, so with `rho = 1 - y^T P y / y^T y`
//!
//! ```text
//! LR(a) = (n/2) log y^T y + (n/2) log(rho + a) - (d/2) log a - ((n-d)/2) log(1 + a)
//! ```
//!
//! which is minimized at `a = rho d / ((1 - rho) n - d)` with value
//! `(n/2) log y^T y - (n/2) KL(d/n || 1 - rho)`, valid while `1 - rho > d/n`.

use nalgebra::DVector;
use serde::Serialize;

use crate::data::HatMatrix;
use crate::error::{LorpError, Result};
use crate::loss_rank::{argmin_first, loss_rank, LossRankOptions};

/// Tolerance on `max |P^2 - P|` and `max |P - P^T|`.
pub const IDEMPOTENCE_TOL: f64 = 1e-8;
/// Below this relative residual the closed form is treated as a perfect fit.
pub const RHO_FLOOR: f64 = 1e-12;

/// Relative entropy between Bernoulli(p) and Bernoulli(q), `0 log 0 = 0`.
pub fn kl_bernoulli(p: f64, q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
        return Err(LorpError::InvalidInput(format!(
            "KL arguments must lie in [0, 1], got p = {p}, q = {q}"
        )));
    }
    let term = |a: f64, b: f64| -> Result<f64> {
        if a == 0.0 {
            Ok(0.0)
        } else if b == 0.0 {
            Err(LorpError::InfiniteDivergence { p, q })
        } else {
            Ok(a * (a / b).ln())
        }
    };
    Ok(term(p, q)? + term(1.0 - p, 1.0 - q)?)
}

/// The projective loss rank at a given regularization weight.
pub fn projective_lr_at_alpha(n: usize, d: f64, rho: f64, y_sq: f64, alpha: f64) -> f64 {
    let n = n as f64;
    let mut lr = 0.5 * n * y_sq.ln() + 0.5 * n * (rho + alpha).ln() - 0.5 * (n - d) * alpha.ln_1p();
    if d != 0.0 {
        lr -= 0.5 * d * alpha.ln();
    }
    lr
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectiveResult {
    /// `tr P`, real-valued so rank-deficient designs are tolerated.
    pub d: f64,
    pub rho: f64,
    pub alpha_min: f64,
    /// Closed-form minimal loss rank.
    pub lr: f64,
    /// `KL(d/n || 1 - rho)`.
    pub kl: f64,
    /// The loss rank evaluated directly at `alpha_min`, a self-check on `lr`.
    pub lr_at_alpha_min: f64,
}

/// Maximum deviation of `p` from being a symmetric idempotent matrix.
pub fn projection_residual(p: &HatMatrix) -> f64 {
    let e = p.entries();
    let idem = (e * e - e).amax();
    let sym = (e - e.transpose()).amax();
    idem.max(sym)
}

pub fn projective_loss_rank(p: &HatMatrix, y: &DVector<f64>) -> Result<ProjectiveResult> {
    projective_loss_rank_with_floor(p, y, RHO_FLOOR)
}

pub fn projective_loss_rank_with_floor(
    p: &HatMatrix,
    y: &DVector<f64>,
    rho_floor: f64,
) -> Result<ProjectiveResult> {
    p.check_response(y)?;
    let residual = projection_residual(p);
    if residual > IDEMPOTENCE_TOL {
        return Err(LorpError::NotAProjection { residual });
    }
    let n = p.n();
    let y_sq = y.norm_squared();
    if !(y_sq > 0.0) {
        return Err(LorpError::DegenerateData(y_sq));
    }
    closed_form(n, p.trace(), 1.0 - y.dot(&p.fitted(y)) / y_sq, y_sq, rho_floor)
}

/// Closed-form minimum from the sufficient statistics `n`, `d = tr P`,
/// `rho` and `y^T y`.
pub fn closed_form(n: usize, d: f64, rho: f64, y_sq: f64, rho_floor: f64) -> Result<ProjectiveResult> {
    let d_over_n = d / n as f64;
    if !(1.0 - rho > d_over_n) {
        return Err(LorpError::OutsideValidity {
            one_minus_rho: 1.0 - rho,
            d_over_n,
        });
    }
    if rho < rho_floor {
        return Err(LorpError::PerfectFit { rho });
    }
    let alpha_min = rho * d / ((1.0 - rho) * n as f64 - d);
    let kl = kl_bernoulli(d_over_n.clamp(0.0, 1.0), 1.0 - rho)?;
    let lr = 0.5 * n as f64 * y_sq.ln() - 0.5 * n as f64 * kl;
    Ok(ProjectiveResult {
        d,
        rho,
        alpha_min,
        lr,
        kl,
        lr_at_alpha_min: projective_lr_at_alpha(n, d, rho, y_sq, alpha_min),
    })
}

/// Score of one candidate in a projective selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectiveScore {
    /// Minimal loss rank, closed form where valid and numeric otherwise.
    pub lr: Option<f64>,
    /// `KL(tr P / n || y^T P y / y^T y)`, only where the closed form applies.
    pub kl: Option<f64>,
    pub closed_form: bool,
    pub error: Option<LorpError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectiveSelection {
    pub index: usize,
    pub scores: Vec<ProjectiveScore>,
}

/// Picks the projection of maximal KL score, i.e. minimal loss rank.
///
/// Candidates outside the closed form's validity region are scored by
/// numeric minimization with `fallback` options and compared on loss rank.
pub fn select_projective(
    candidates: &[HatMatrix],
    y: &DVector<f64>,
    fallback: &LossRankOptions,
) -> Result<ProjectiveSelection> {
    if candidates.is_empty() {
        return Err(LorpError::InvalidInput("no candidate projections".into()));
    }
    let scores: Vec<ProjectiveScore> = candidates
        .iter()
        .map(|p| match projective_loss_rank(p, y) {
            Ok(r) => ProjectiveScore {
                lr: Some(r.lr),
                kl: Some(r.kl),
                closed_form: true,
                error: None,
            },
            Err(_) => match loss_rank(p, y, fallback) {
                Ok(r) => ProjectiveScore {
                    lr: Some(r.lr),
                    kl: None,
                    closed_form: false,
                    error: None,
                },
                Err(e) => ProjectiveScore {
                    lr: None,
                    kl: None,
                    closed_form: false,
                    error: Some(e),
                },
            },
        })
        .collect();
    let index = argmin_first(scores.iter().map(|s| s.lr)).ok_or(LorpError::SelectionFailed)?;
    Ok(ProjectiveSelection { index, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn mean2() -> HatMatrix {
        HatMatrix::custom(DMatrix::from_element(2, 2, 0.5), "mean").unwrap()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_bernoulli(0.3, 0.3).unwrap(), 0.0);
        assert_relative_eq!(kl_bernoulli(0.0, 0.5).unwrap(), 2f64.ln(), epsilon = 1e-15);
        // 1/2 log(25/9) = log(5/3)
        assert_relative_eq!(kl_bernoulli(0.5, 0.9).unwrap(), 0.510_825_623_765_990_7, epsilon = 1e-15);
        assert_eq!(kl_bernoulli(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(kl_bernoulli(1.0, 1.0).unwrap(), 0.0);
        assert!(matches!(kl_bernoulli(0.5, 1.0), Err(LorpError::InfiniteDivergence { .. })));
        assert!(matches!(kl_bernoulli(0.5, 0.0), Err(LorpError::InfiniteDivergence { .. })));
        assert!(kl_bernoulli(1.5, 0.5).is_err());
    }

    #[test]
    fn mean_projection_closed_form() {
        let r = projective_loss_rank(&mean2(), &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_relative_eq!(r.d, 1.0);
        assert_relative_eq!(r.rho, 0.1, epsilon = 1e-15);
        assert_relative_eq!(r.alpha_min, 0.125, epsilon = 1e-14);
        assert_relative_eq!(r.kl, 0.510_825_623_765_990_7, epsilon = 1e-14);
        assert_relative_eq!(r.lr, 3f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(r.lr_at_alpha_min, r.lr, epsilon = 1e-14);
    }

    #[test]
    fn guards() {
        let p = mean2();
        assert!(matches!(
            projective_loss_rank(&p, &DVector::from_vec(vec![3.0, 3.0])),
            Err(LorpError::PerfectFit { .. })
        ));
        let zero = HatMatrix::custom(DMatrix::zeros(2, 2), "zero").unwrap();
        assert!(matches!(
            projective_loss_rank(&zero, &DVector::from_vec(vec![1.0, 2.0])),
            Err(LorpError::OutsideValidity { .. })
        ));
        let oblique = HatMatrix::custom(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]), "oblique").unwrap();
        assert!(matches!(
            projective_loss_rank(&oblique, &DVector::from_vec(vec![1.0, 2.0])),
            Err(LorpError::NotAProjection { .. })
        ));
        let half = HatMatrix::custom(DMatrix::identity(2, 2) * 0.5, "half").unwrap();
        assert!(matches!(
            projective_loss_rank(&half, &DVector::from_vec(vec![1.0, 2.0])),
            Err(LorpError::NotAProjection { .. })
        ));
        // Anti-correlated y: most energy orthogonal to the mean, 1 - rho < d/n.
        assert!(matches!(
            projective_loss_rank(&p, &DVector::from_vec(vec![1.0, -1.2])),
            Err(LorpError::OutsideValidity { .. })
        ));
    }

    #[test]
    fn selection_falls_back_and_breaks_ties_by_order() {
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let zero = HatMatrix::custom(DMatrix::zeros(2, 2), "zero").unwrap();
        let ident = HatMatrix::custom(DMatrix::identity(2, 2), "I").unwrap();
        let sel = select_projective(&[zero, mean2(), ident], &y, &LossRankOptions::default()).unwrap();
        assert_eq!(sel.index, 1);
        assert!(!sel.scores[0].closed_form && sel.scores[1].closed_form);
        assert_relative_eq!(sel.scores[0].lr.unwrap(), 5f64.ln(), epsilon = 1e-10);

        let sel = select_projective(&[mean2(), mean2()], &y, &LossRankOptions::default()).unwrap();
        assert_eq!(sel.index, 0);
        assert!(select_projective(&[], &y, &LossRankOptions::default()).is_err());
    }
}
