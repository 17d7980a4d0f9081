//! Hat-matrix constructors for k-nearest-neighbor, Gaussian-kernel and
//! linear-basis-function (including polynomial) regressors.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{rows_of, Dataset, HatMatrix};
use crate::error::{LorpError, Result};

/// Relative singular-value cutoff used by the least-squares projection.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Which regressor produced a hat matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RegressorSpec {
    Knn { k: usize },
    /// kNN that skips the query point itself.
    KnnPrime { k: usize },
    GaussianKernel { sigma: f64 },
    /// Least squares on the basis `1, x, ..., x^(d-1)`; `d = 0` is the zero regressor.
    Polynomial { d: usize },
    /// Least squares on a named feature map.
    Lbfr { feature_map: String },
    Custom { label: String },
}

impl RegressorSpec {
    /// Builds the hat matrix of this regressor on the dataset's covariates.
    pub fn build(&self, data: &Dataset) -> Result<HatMatrix> {
        match self {
            RegressorSpec::Knn { k } => knn_matrix(data.x(), *k, &Euclidean),
            RegressorSpec::KnnPrime { k } => knn_prime_matrix(data.x(), *k, &Euclidean),
            RegressorSpec::GaussianKernel { sigma } => gaussian_kernel_matrix(data.x(), *sigma),
            RegressorSpec::Polynomial { d } => {
                let phi = polynomial_design(&univariate(data.x())?, *d)?;
                Ok(lbfr_matrix(&phi)?.hat.with_spec(self.clone()))
            }
            RegressorSpec::Lbfr { .. } | RegressorSpec::Custom { .. } => {
                Err(LorpError::InvalidInput(format!(
                    "{self} has no built-in construction from covariates"
                )))
            }
        }
    }

    /// Whether the hat matrix is an orthogonal projection by construction.
    pub fn is_projective(&self) -> bool {
        matches!(self, RegressorSpec::Polynomial { .. } | RegressorSpec::Lbfr { .. })
    }
}

impl fmt::Display for RegressorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegressorSpec::Knn { k } => write!(f, "knn:k={k}"),
            RegressorSpec::KnnPrime { k } => write!(f, "knnprime:k={k}"),
            RegressorSpec::GaussianKernel { sigma } => write!(f, "kernel:sigma={sigma}"),
            RegressorSpec::Polynomial { d } => write!(f, "poly:d={d}"),
            RegressorSpec::Lbfr { feature_map } => write!(f, "lbfr:{feature_map}"),
            RegressorSpec::Custom { label } => write!(f, "custom:{label}"),
        }
    }
}

impl HatMatrix {
    fn with_spec(self, spec: RegressorSpec) -> HatMatrix {
        HatMatrix::new(self.entries().clone(), spec).expect("entries already validated")
    }
}

fn univariate(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != 1 {
        return Err(LorpError::InvalidInput(format!(
            "polynomial basis needs a single covariate, got {}",
            x.ncols()
        )));
    }
    Ok(x.column(0).iter().copied().collect())
}

/// Distance between two covariate rows.
pub trait Metric: Sync {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Euclidean;

impl Metric for Euclidean {
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt()
    }
}

impl<F> Metric for F
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self(a, b)
    }
}

/// Indices of all points ordered by distance to `rows[i]`.
///
/// The query point comes first even when other points coincide with it;
/// remaining ties go to the smaller index.
fn neighbor_order(rows: &[Vec<f64>], i: usize, metric: &dyn Metric) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(j, r)| (if j == i { 0.0 } else { metric.distance(&rows[i], r) }, j))
        .collect();
    order.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| (a.1 != i).cmp(&(b.1 != i)))
            .then_with(|| a.1.cmp(&b.1))
    });
    order.into_iter().map(|(_, j)| j).collect()
}

fn neighbor_average(
    x: &DMatrix<f64>,
    k: usize,
    skip_self: bool,
    metric: &dyn Metric,
) -> DMatrix<f64> {
    let rows = rows_of(x);
    let n = rows.len();
    let w = 1.0 / k as f64;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let order = neighbor_order(&rows, i, metric);
        for &j in order.iter().skip(usize::from(skip_self)).take(k) {
            m[(i, j)] = w;
        }
    }
    m
}

/// `M_ij = 1/k` when `x_j` is among the `k` nearest neighbors of `x_i`
/// (the point itself included), else 0.
pub fn knn_matrix(x: &DMatrix<f64>, k: usize, metric: &dyn Metric) -> Result<HatMatrix> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(LorpError::InvalidInput(format!(
            "kNN needs 1 <= k <= n = {n}, got k = {k}"
        )));
    }
    HatMatrix::new(neighbor_average(x, k, false, metric), RegressorSpec::Knn { k })
}

/// kNN over the `k` nearest neighbors excluding the point itself, giving a
/// zero diagonal.
pub fn knn_prime_matrix(x: &DMatrix<f64>, k: usize, metric: &dyn Metric) -> Result<HatMatrix> {
    let n = x.nrows();
    if k == 0 || k + 1 > n {
        return Err(LorpError::InvalidInput(format!(
            "kNN' needs 1 <= k <= n - 1 = {}, got k = {k}",
            n.saturating_sub(1)
        )));
    }
    HatMatrix::new(
        neighbor_average(x, k, true, metric),
        RegressorSpec::KnnPrime { k },
    )
}

/// Nadaraya-Watson weights with kernel `exp(-|x - x'|^2 / 2 sigma^2)`.
pub fn gaussian_kernel_matrix(x: &DMatrix<f64>, sigma: f64) -> Result<HatMatrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(LorpError::InvalidInput(format!(
            "kernel bandwidth must be positive, got {sigma}"
        )));
    }
    let rows = rows_of(x);
    let n = rows.len();
    let scale = 2.0 * sigma * sigma;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        // Self-weight is exp(0) = 1, so the normalizer never underflows.
        let mut total = 0.0;
        for j in 0..n {
            let d = Euclidean.distance(&rows[i], &rows[j]);
            let w = (-(d * d) / scale).exp();
            m[(i, j)] = w;
            total += w;
        }
        for j in 0..n {
            m[(i, j)] /= total;
        }
    }
    HatMatrix::new(m, RegressorSpec::GaussianKernel { sigma })
}

/// Feature matrix `Phi[i, a] = phi_a(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    phi: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn new(phi: DMatrix<f64>) -> Result<Self> {
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(LorpError::InvalidInput("non-finite feature value".into()));
        }
        Ok(Self { phi })
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn d(&self) -> usize {
        self.phi.ncols()
    }

    /// `B = Phi^T Phi`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.phi.transpose() * &self.phi
    }
}

/// Vandermonde design with columns `1, x, ..., x^(d-1)`.
pub fn polynomial_design(x: &[f64], d: usize) -> Result<FeatureMatrix> {
    FeatureMatrix::new(DMatrix::from_fn(x.len(), d, |i, a| x[i].powi(a as i32)))
}

/// Least-squares hat matrix together with the numerical rank of `Phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct LbfrHat {
    pub hat: HatMatrix,
    pub rank: usize,
}

/// `M = Phi B^+ Phi^T`, the orthogonal projection onto the column space of
/// `Phi`, computed from the thin SVD so rank-deficient designs are handled.
pub fn lbfr_matrix(phi: &FeatureMatrix) -> Result<LbfrHat> {
    lbfr_matrix_with_tol(phi, DEFAULT_RANK_TOL)
}

pub fn lbfr_matrix_with_tol(phi: &FeatureMatrix, rank_tol: f64) -> Result<LbfrHat> {
    let n = phi.n();
    let spec = RegressorSpec::Polynomial { d: phi.d() };
    if phi.d() == 0 || n == 0 {
        return Ok(LbfrHat {
            hat: HatMatrix::new(DMatrix::zeros(n, n), spec)?,
            rank: 0,
        });
    }
    let svd = phi.phi().clone().svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| LorpError::NumericalFailure("SVD did not return U".into()))?;
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax > 0.0 && s > rank_tol * smax)
        .map(|(i, _)| i)
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for &c in &keep {
        let col = u.column(c);
        m += &col * col.transpose();
    }
    // Exact symmetry; the sum of outer products is symmetric only up to round-off.
    let m = (&m + m.transpose()) * 0.5;
    Ok(LbfrHat {
        hat: HatMatrix::new(m, spec)?,
        rank: keep.len(),
    })
}

/// Prediction at a new covariate point from training data.
///
/// Loss-rank selection only uses the hat matrix on the training points;
/// this is provided for using the selected regressor afterwards.
pub fn predict(spec: &RegressorSpec, data: &Dataset, query: &[f64]) -> Result<f64> {
    if query.len() != data.m() {
        return Err(LorpError::InvalidInput(format!(
            "query has {} coordinates, data has {}",
            query.len(),
            data.m()
        )));
    }
    let rows = data.rows();
    let y = data.y();
    let n = data.n();
    let nearest = |k: usize, skip: usize| -> Result<f64> {
        if k == 0 || k + skip > n {
            return Err(LorpError::InvalidInput(format!("k = {k} out of range")));
        }
        let mut order: Vec<(f64, usize)> = rows
            .iter()
            .enumerate()
            .map(|(j, r)| (Euclidean.distance(query, r), j))
            .collect();
        order.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        Ok(order.iter().skip(skip).take(k).map(|&(_, j)| y[j]).sum::<f64>() / k as f64)
    };
    match spec {
        RegressorSpec::Knn { k } => nearest(*k, 0),
        RegressorSpec::KnnPrime { k } => nearest(*k, 1),
        RegressorSpec::GaussianKernel { sigma } => {
            let dists: Vec<f64> = rows.iter().map(|r| Euclidean.distance(query, r)).collect();
            let shift = dists.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let scale = 2.0 * sigma * sigma;
            let weights: Vec<f64> = dists
                .iter()
                .map(|d| (-(d * d - shift * shift) / scale).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            Ok(weights.iter().zip(y.iter()).map(|(w, v)| w * v).sum::<f64>() / total)
        }
        RegressorSpec::Polynomial { d } => {
            let phi = polynomial_design(&univariate(data.x())?, *d)?;
            if *d == 0 {
                return Ok(0.0);
            }
            let w = phi
                .phi()
                .clone()
                .pseudo_inverse(DEFAULT_RANK_TOL)
                .map_err(|e| LorpError::NumericalFailure(e.to_string()))?
                * y;
            let basis = DVector::from_fn(*d, |a, _| query[0].powi(a as i32));
            Ok(w.dot(&basis))
        }
        other => Err(LorpError::InvalidInput(format!(
            "no prediction rule for {other}"
        ))),
    }
}
