#![allow(dead_code)]

use lorp::regressors::{lbfr_matrix, FeatureMatrix};
use lorp::HatMatrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| normal(rng))
}

pub fn random_hat(rng: &mut ChaCha8Rng, n: usize) -> HatMatrix {
    HatMatrix::custom(gaussian_matrix(rng, n, n) * 0.5, "random").unwrap()
}

/// Distinct sorted covariates in [0, 1].
pub fn covariates(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    x.sort_by(f64::total_cmp);
    x
}

pub fn column(x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(x.len(), 1, x)
}

/// Projection onto a random Gaussian design with `d` columns.
pub fn random_projection(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (FeatureMatrix, HatMatrix) {
    let phi = FeatureMatrix::new(gaussian_matrix(rng, n, d)).unwrap();
    let hat = lbfr_matrix(&phi).unwrap().hat;
    (phi, hat)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
