use thiserror::Error;

/// Errors raised by loss-rank computations, regressor construction and the
/// brute-force oracles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LorpError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("generic direction filter inapplicable: M·1 deviates from 1 by {deviation:e}")]
    FilterInapplicable { deviation: f64 },

    /// Loss and penalty both vanish, e.g. an all-zero response vector.
    #[error("degenerate data: regularized loss {0:e} is not positive")]
    DegenerateData(f64),

    #[error("singular: {0}")]
    Singular(String),

    #[error("not a projection: ||P^2 - P|| = {residual:e}")]
    NotAProjection { residual: f64 },

    #[error("outside closed-form validity region: 1 - rho = {one_minus_rho} <= d/n = {d_over_n}")]
    OutsideValidity { one_minus_rho: f64, d_over_n: f64 },

    #[error("perfect fit: rho = {rho:e} below floor, loss rank unbounded below")]
    PerfectFit { rho: f64 },

    #[error("infinite divergence: KL({p} || {q})")]
    InfiniteDivergence { p: f64, q: f64 },

    #[error("divergent series: spectral radius {radius} >= 1")]
    DivergentSeries { radius: f64 },

    #[error("problem too large: {points} points exceeds budget {budget}")]
    TooLarge { points: f64, budget: u64 },

    #[error("indeterminate ratio: regions share no sampled points")]
    IndeterminateRatio,

    #[error("selection failed: every candidate failed")]
    SelectionFailed,
}

pub type Result<T> = std::result::Result<T, LorpError>;
