mod common;

use common::*;
use lorp::loss_rank::{
    ellipsoid_volume, loss_rank_at_alpha, spectral_cache, AlphaChoice, LossRankOptions, PenaltyKind,
};
use lorp::oracle::{exact_rank, mc_volume_below, BoxDomain, LossFunction, Sampling};
use lorp::regressors::{knn_matrix, Euclidean};
use lorp::{loss_rank, select_model, Dataset, HatMatrix, RegressorSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn permute(m: &HatMatrix, y: &DVector<f64>, perm: &[usize]) -> (HatMatrix, DVector<f64>) {
    let n = perm.len();
    let e = m.entries();
    let pm = DMatrix::from_fn(n, n, |i, j| e[(perm[i], perm[j])]);
    let py = DVector::from_fn(n, |i, _| y[perm[i]]);
    (HatMatrix::custom(pm, "permuted").unwrap(), py)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn large_alpha_tends_to_log_norm(seed in any::<u64>(), n in 2usize..12, filter in any::<bool>()) {
        let mut r = rng(seed);
        let m = if filter {
            let x = covariates(&mut r, n);
            knn_matrix(&column(&x), 1 + n / 3, &Euclidean).unwrap()
        } else {
            random_hat(&mut r, n)
        };
        let y = gaussian_vector(&mut r, n);
        let cache = spectral_cache(&m, &y, PenaltyKind::ResponseNorm, filter, None).unwrap();
        prop_assume!(cache.y_sq > 1e-6);
        let lr = loss_rank_at_alpha(&cache, 1e12, false).unwrap();
        let limit = 0.5 * cache.n_kept() as f64 * cache.y_sq.ln();
        prop_assert!(rel_close(lr, limit, 1e-4), "lr {lr} vs limit {limit}");
    }

    #[test]
    fn small_alpha_diverges_with_a_null_direction(seed in any::<u64>(), n in 3usize..12, k in 2usize..4) {
        let mut r = rng(seed);
        let x = covariates(&mut r, n);
        let m = knn_matrix(&column(&x), k.min(n), &Euclidean).unwrap();
        let y = gaussian_vector(&mut r, n);
        let cache = spectral_cache(&m, &y, PenaltyKind::ResponseNorm, false, None).unwrap();
        prop_assert_eq!(cache.lambdas[0], 0.0);
        // With zero residual (M y = y) the objective is constant in alpha.
        prop_assume!(cache.q0 > 1e-8);
        let near_zero = loss_rank_at_alpha(&cache, 1e-12, false).unwrap();
        let at_one = loss_rank_at_alpha(&cache, 1.0, false).unwrap();
        prop_assert!(near_zero > at_one + 5.0, "{near_zero} vs {at_one}");
    }

    #[test]
    fn permutation_leaves_result_unchanged(seed in any::<u64>(), n in 2usize..10) {
        let mut r = rng(seed);
        let m = random_hat(&mut r, n);
        let y = gaussian_vector(&mut r, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left((seed % n as u64) as usize);
        perm.swap(0, n - 1);
        let (pm, py) = permute(&m, &y, &perm);
        let opts = LossRankOptions::default();
        let a = loss_rank(&m, &y, &opts).unwrap();
        let b = loss_rank(&pm, &py, &opts).unwrap();
        prop_assert!(rel_close(a.lr, b.lr, 1e-10), "{} vs {}", a.lr, b.lr);
        prop_assert!((a.alpha_star - b.alpha_star).abs() <= 1e-10 * a.alpha_star.max(1e-300),
            "{} vs {}", a.alpha_star, b.alpha_star);
    }

    #[test]
    fn cached_eigenvalues_are_nonnegative(seed in any::<u64>(), n in 2usize..15, estimate in any::<bool>()) {
        let mut r = rng(seed);
        let m = random_hat(&mut r, n);
        let y = gaussian_vector(&mut r, n);
        let penalty = if estimate { PenaltyKind::EstimateNorm } else { PenaltyKind::ResponseNorm };
        let cache = spectral_cache(&m, &y, penalty, false, None).unwrap();
        prop_assert!(cache.lambdas.iter().all(|&l| l >= 0.0));
        prop_assert!(cache.lambdas.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn ellipsoid_volume_increases_with_level(
        lambdas in proptest::collection::vec(0.0f64..5.0, 1..6),
        alpha in 1e-3f64..10.0,
        l in 1e-3f64..100.0,
    ) {
        let a = ellipsoid_volume(&lambdas, alpha, l).unwrap();
        let b = ellipsoid_volume(&lambdas, alpha, l * 1.01).unwrap();
        prop_assert!(b > a);
    }
}

#[test]
fn log_volume_matches_monte_carlo_in_two_and_three_dimensions() {
    let mut failures = 0;
    for case in 0..10u64 {
        let n = 2 + (case % 2) as usize;
        let mut r = rng(1000 + case);
        let m = random_hat(&mut r, n);
        let y = gaussian_vector(&mut r, n);
        let alpha = 0.5;
        let opts = LossRankOptions {
            alpha: AlphaChoice::Fixed { alpha },
            include_vn: true,
            ..Default::default()
        };
        let res = loss_rank(&m, &y, &opts).unwrap();

        let resid = DMatrix::<f64>::identity(n, n) - m.entries();
        let s = resid.transpose() * &resid + DMatrix::<f64>::identity(n, n) * alpha;
        let level = y.dot(&(&s * &y));
        let inv = s.clone().try_inverse().unwrap();
        let half: Vec<f64> = (0..n).map(|i| 1.01 * (level * inv[(i, i)]).sqrt()).collect();
        let domain = BoxDomain::new(half.iter().map(|h| -h).collect(), half.clone()).unwrap();
        let mc = mc_volume_below(&LossFunction::quadratic_form(s), level, &domain, &Sampling::new(200_000, case)).unwrap();
        if (res.lr.exp() - mc.estimate).abs() > 3.0 * mc.stderr {
            failures += 1;
        }
    }
    assert!(failures <= 1, "{failures} of 10 cases outside 3 standard errors");
}

fn example4() -> (Dataset, Vec<HatMatrix>) {
    let data = Dataset::from_columns(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
    let hats = (0..3)
        .map(|d| RegressorSpec::Polynomial { d }.build(&data).unwrap())
        .collect();
    (data, hats)
}

#[test]
fn example4_volume_ordering_agrees_with_discrete_ranks() {
    let (data, hats) = example4();
    let ranks: Vec<u64> = hats
        .iter()
        .map(|h| exact_rank(&LossFunction::quadratic(h), &[1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap())
        .collect();
    assert_eq!(ranks, vec![8, 7, 9]);

    // M = 0 and M = I both give log 5 for every alpha, so only the
    // strict part of the rank order (the mean beats both) is visible.
    for alpha in [0.05, 0.1, 0.125, 0.5, 1.0] {
        let lr: Vec<f64> = hats
            .iter()
            .map(|h| {
                let c = spectral_cache(h, data.y(), PenaltyKind::ResponseNorm, false, None).unwrap();
                loss_rank_at_alpha(&c, alpha, false).unwrap()
            })
            .collect();
        assert!(lr[1] < lr[0] && lr[1] < lr[2], "alpha {alpha}: {lr:?}");
        assert!((lr[0] - lr[2]).abs() < 1e-12);
    }
    let sel = select_model(&hats, data.y(), &LossRankOptions::default()).unwrap();
    assert_eq!(sel.index, 1);
    assert!((sel.winner().alpha_star - 0.125).abs() < 1e-10);
}

#[test]
fn selection_is_reproducible() {
    let mut r = rng(7);
    let hats: Vec<HatMatrix> = (0..8).map(|_| random_hat(&mut r, 6)).collect();
    let y = gaussian_vector(&mut r, 6);
    let a = select_model(&hats, &y, &LossRankOptions::default()).unwrap();
    let b = select_model(&hats, &y, &LossRankOptions::default()).unwrap();
    assert_eq!(a, b);
}
