//! Observed data and linear-regressor hat matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{LorpError, Result};
use crate::regressors::RegressorSpec;

/// Covariates `x` (n × m) and responses `y` (length n).
///
/// The covariates are held fixed throughout; only `y` is compared against
/// fictitious alternatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(LorpError::InvalidInput(format!(
                "x has {} rows but y has length {}",
                x.nrows(),
                y.len()
            )));
        }
        if y.len() < 2 {
            return Err(LorpError::InvalidInput(format!(
                "need at least 2 observations, got {}",
                y.len()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(LorpError::InvalidInput("non-finite entry in dataset".into()));
        }
        Ok(Self { x, y })
    }

    /// Univariate convenience constructor.
    pub fn from_columns(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_column_slice(x.len(), 1, x),
            DVector::from_column_slice(y),
        )
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    /// Covariate rows as owned vectors, in observation order.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        rows_of(&self.x)
    }
}

pub(crate) fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// The n × n matrix `M` of a linear regressor on the training points,
/// `ŷ = M y`, tagged with the regressor that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct HatMatrix {
    entries: DMatrix<f64>,
    spec: RegressorSpec,
}

impl HatMatrix {
    pub fn new(entries: DMatrix<f64>, spec: RegressorSpec) -> Result<Self> {
        if !entries.is_square() {
            return Err(LorpError::InvalidInput(format!(
                "hat matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(LorpError::InvalidInput("non-finite hat matrix entry".into()));
        }
        Ok(Self { entries, spec })
    }

    /// A hat matrix with no regressor provenance beyond a free-form label.
    pub fn custom(entries: DMatrix<f64>, label: impl Into<String>) -> Result<Self> {
        Self::new(entries, RegressorSpec::Custom { label: label.into() })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn spec(&self) -> &RegressorSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn fitted(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.entries * y
    }

    pub(crate) fn check_response(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.n() {
            return Err(LorpError::InvalidInput(format!(
                "response length {} does not match hat matrix size {}",
                y.len(),
                self.n()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LorpError::InvalidInput("non-finite response".into()));
        }
        Ok(())
    }
}
