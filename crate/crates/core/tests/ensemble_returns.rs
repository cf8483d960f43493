mod common;

use common::{ks_statistic, rescaled_cdf_sorted};
use credit_ensemble::ensemble_returns::*;
use credit_ensemble::numerics::{integrate_adaptive, AdaptiveTol};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tight() -> AdaptiveTol {
    AdaptiveTol {
        rel: 1e-12,
        abs: 1e-15,
        max_panels: 2000,
    }
}

fn moment(power: i32, n_eff: f64) -> f64 {
    let f = |x: f64| x.powi(power) * univariate_rescaled_density(x, n_eff).unwrap();
    integrate_adaptive(f, &[-200.0, -10.0, -1.0, 0.0, 1.0, 10.0, 200.0], tight()).unwrap()
}

#[test]
fn onefactor_integral_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for k in [2usize, 3, 5] {
        for _ in 0..20 {
            let c = rng.random_range(0.05..0.6);
            let n_eff = rng.random_range(3.0..8.0);
            let vols: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..0.4)).collect();
            let r: Vec<f64> = vols.iter().map(|s| s * rng.random_range(-2.5..2.5)).collect();
            let params = EnsembleParams::new(c, n_eff).unwrap();
            let a = averaged_density_onefactor(&r, &vols, &params).unwrap();
            let cov = CovarianceSpec::one_factor(vols.clone(), c).unwrap();
            let b = averaged_density(&r, &cov, n_eff).unwrap();
            assert!((a / b - 1.0).abs() < 1e-6, "K={k} c={c} N={n_eff} r={r:?}: {a} vs {b}");
        }
    }
}

#[test]
fn onefactor_reference_point() {
    let params = EnsembleParams::new(0.26, 4.2).unwrap();
    let vols = vec![0.1; 3];
    let r = [0.05, -0.05, 0.1];
    let a = averaged_density_onefactor(&r, &vols, &params).unwrap();
    let corr = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.26 });
    let cov = CovarianceSpec::full(vols, corr).unwrap();
    let b = averaged_density(&r, &cov, 4.2).unwrap();
    assert!((a / b - 1.0).abs() < 1e-6, "{a} vs {b}");
}

#[test]
fn large_n_approaches_gaussian() {
    let cov = CovarianceSpec::one_factor(vec![1.0, 1.0], 0.26).unwrap();
    for r in [[0.0, 0.5], [1.0, 1.0]] {
        let a = averaged_density(&r, &cov, 500.0).unwrap();
        let g = gaussian_density(&r, &cov).unwrap();
        assert!((a / g - 1.0).abs() < 0.02);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut sup: f64 = 0.0;
    for _ in 0..10 {
        let r = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        let a = averaged_density(&r, &cov, 1000.0).unwrap();
        let g = gaussian_density(&r, &cov).unwrap();
        sup = sup.max((a / g - 1.0).abs());
    }
    assert!(sup < 5e-3, "{sup}");
}

#[test]
fn large_n_matches_average_of_gaussians() {
    // E_z[N(r; 0, z Sigma / N)] by Monte Carlo over the chi-square variable.
    let n_eff = 500.0;
    let cov = CovarianceSpec::one_factor(vec![1.0, 1.0], 0.26).unwrap();
    let chi = rand_distr::Gamma::new(0.5 * n_eff, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let r = [1.0, 1.0];
    let g0 = gaussian_density(&r, &cov).unwrap();
    let q = {
        let det = 1.0 - 0.26f64 * 0.26;
        (r[0] * r[0] - 2.0 * 0.26 * r[0] * r[1] + r[1] * r[1]) / det
    };
    let m = 200_000;
    let mean = (0..m)
        .map(|_| {
            let s: f64 = rand_distr::Distribution::sample(&chi, &mut rng) / n_eff;
            g0 * (-0.5 * q * (1.0 / s - 1.0)).exp() / s
        })
        .sum::<f64>()
        / m as f64;
    let a = averaged_density(&r, &cov, n_eff).unwrap();
    assert!((a / mean - 1.0).abs() < 2e-3, "{a} vs {mean}");
}

#[test]
fn univariate_k_one_normalises() {
    let sigma = 0.35;
    let cov = CovarianceSpec::one_factor(vec![sigma], 0.0).unwrap();
    let f = |x: f64| averaged_density(&[x], &cov, 4.2).unwrap();
    let total = integrate_adaptive(f, &[-20.0 * sigma, -sigma, 0.0, sigma, 20.0 * sigma], tight()).unwrap();
    assert!((total - 1.0).abs() < 1e-6, "{total}");
}

#[test]
fn rescaled_density_curve_normalises() {
    let curve = rescaled_density_curve(4.2, &GridSpec::rescaled_returns()).unwrap();
    assert_eq!(curve.abscissae.len(), 2001);
    assert!((curve.trapezoid() - 1.0).abs() < 1e-6, "{}", curve.trapezoid());
}

#[test]
fn rescaled_density_has_unit_variance() {
    for n_eff in [4.2, 6.0] {
        assert!((moment(0, n_eff) - 1.0).abs() < 1e-9);
        assert!(moment(1, n_eff).abs() < 1e-12);
        assert!((moment(2, n_eff) - 1.0).abs() < 1e-4, "N={n_eff}");
    }
}

#[test]
fn rescaled_fourth_moment() {
    // Compound representation: E[r^4] = 3 E[(z/N)^2] = 3 (1 + 2/N).
    for n_eff in [6.0, 8.0, 20.0] {
        let m4 = moment(4, n_eff);
        assert!((m4 / (3.0 * (1.0 + 2.0 / n_eff)) - 1.0).abs() < 1e-6, "N={n_eff}: {m4}");
    }
}

#[test]
fn rescaled_density_tails() {
    // Symmetric, decreasing in |r|, heavier than Gaussian far out.
    for x in [0.3, 1.0, 4.0, 12.0] {
        let a = univariate_rescaled_density(x, 4.2).unwrap();
        assert_eq!(a, univariate_rescaled_density(-x, 4.2).unwrap());
        assert!(a < univariate_rescaled_density(x * 0.9, 4.2).unwrap());
    }
    let gauss = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    assert!(univariate_rescaled_density(5.0, 4.2).unwrap() > 100.0 * gauss(5.0));
    assert!(univariate_rescaled_density(0.0, 4.2).unwrap() > gauss(0.0));
}

#[test]
fn sampler_covariance_matches_sigma() {
    let n = 1_000_000;
    let cov = CovarianceSpec::one_factor(vec![1.0, 1.0], 0.26).unwrap();
    let r = sample_returns(&cov, 4.2, n, 1).unwrap();
    let sigma = cov.covariance_matrix();
    for i in 0..2 {
        for j in 0..2 {
            let prod: Vec<f64> = (0..n).map(|t| r[(t, i)] * r[(t, j)]).collect();
            let mean = prod.iter().sum::<f64>() / n as f64;
            let sd = (prod.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
            let se = sd / (n as f64).sqrt();
            assert!((mean - sigma[(i, j)]).abs() < 5.0 * se, "({i},{j}): {mean} vs {}", sigma[(i, j)]);
        }
    }
}

#[test]
fn sampler_independent_at_zero_correlation() {
    let n = 200_000;
    let cov = CovarianceSpec::one_factor(vec![0.2, 0.5], 0.0).unwrap();
    let r = sample_returns(&cov, 4.2, n, 2).unwrap();
    // Components share the chi-square scale, so they are uncorrelated but
    // not independent; the product standard error covers that.
    let prod: Vec<f64> = (0..n).map(|t| r[(t, 0)] * r[(t, 1)] / 0.1).collect();
    let mean = prod.iter().sum::<f64>() / n as f64;
    let sd = (prod.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    assert!(mean.abs() < 5.0 * sd / (n as f64).sqrt());
}

#[test]
fn sampler_fourth_moment_matches_quadrature() {
    let n_eff = 8.0;
    let n = 1_000_000;
    let cov = CovarianceSpec::one_factor(vec![1.0], 0.0).unwrap();
    let r = sample_returns(&cov, n_eff, n, 3).unwrap();
    let x4: Vec<f64> = r.column(0).iter().map(|x| x.powi(4)).collect();
    let mean = x4.iter().sum::<f64>() / n as f64;
    let sd = (x4.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    let oracle = moment(4, n_eff);
    assert!((mean - oracle).abs() < 5.0 * sd / (n as f64).sqrt(), "{mean} vs {oracle}");
    // Excess kurtosis 6/N for the compound representation.
    assert!((oracle - 3.0 - 6.0 / n_eff).abs() < 1e-6);
}

#[test]
fn sampler_passes_ks_against_rescaled_density() {
    for (n_eff, seed) in [(4.2, 31), (6.0, 32)] {
        let cov = CovarianceSpec::one_factor(vec![1.0], 0.0).unwrap();
        let r = sample_returns(&cov, n_eff, 100_000, seed).unwrap();
        let mut xs: Vec<f64> = r.column(0).iter().copied().collect();
        xs.sort_by(|a, b| a.total_cmp(b));
        let d = ks_statistic(&rescaled_cdf_sorted(&xs, n_eff));
        let critical = 1.628 / (xs.len() as f64).sqrt();
        assert!(d < critical, "N={n_eff}: D = {d}, critical {critical}");
    }
}

#[test]
fn sampler_reproducible_across_thread_counts() {
    let cov = CovarianceSpec::one_factor(vec![0.1, 0.2, 0.3], 0.26).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_returns(&cov, 4.2, 50_000, 5).unwrap())
    };
    assert_eq!(run(1), run(4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn densities_are_nonnegative(
        x in -50.0f64..50.0,
        y in -50.0f64..50.0,
        n_eff in 2.05f64..200.0,
        c in 0.0f64..0.95,
    ) {
        let u = univariate_rescaled_density(x, n_eff).unwrap();
        prop_assert!(u >= 0.0 && u.is_finite());
        let cov = CovarianceSpec::one_factor(vec![0.3, 1.2], c).unwrap();
        if x != 0.0 || y != 0.0 {
            let a = averaged_density(&[x, y], &cov, n_eff).unwrap();
            prop_assert!(a >= 0.0 && a.is_finite());
        }
        let g = gaussian_density(&[x, y], &cov).unwrap();
        prop_assert!(g >= 0.0);
    }
}
