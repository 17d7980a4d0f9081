//! Model selection by loss rank.
//!
//! A regressor is scored by the log-volume of fictitious response vectors
//! it fits at least as well as the observed ones; the regressor with the
//! smallest such volume wins. For linear regressors (`ŷ = M y`) with
//! quadratic loss the volume is that of an ellipsoid and is computed from the
//! spectrum of `(I - M)^T (I - M)`.
//!
//! - [`loss_rank`] - spectral evaluation and minimization of the loss rank
//! - [`regressors`] - hat matrices for kNN, kernel and least-squares families
//! - [`projective`] - closed form for projection regressors
//! - [`oracle`] - enumeration, grid counting and Monte-Carlo volume checks
//! - [`baselines`] - AIC, BIC, Gaussian evidence and effective dimension

pub mod baselines;
pub mod data;
pub mod error;
pub mod loss_rank;
pub mod optim;
pub mod oracle;
pub mod projective;
pub mod regressors;

pub use data::{Dataset, HatMatrix};
pub use error::{LorpError, Result};
pub use loss_rank::{
    loss_rank, select_model, AlphaChoice, LossRankOptions, LossRankResult, PenaltyKind,
};
pub use regressors::RegressorSpec;
