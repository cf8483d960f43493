mod common;

use common::{ensemble_panel, ks_statistic, rescaled_cdf_sorted};
use credit_ensemble::calibration::*;
use credit_ensemble::ensemble_returns::{sample_returns, CovarianceSpec};
use credit_ensemble::portfolio_loss::HorizonUnit;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

fn tickers(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("T{j}")).collect()
}

fn rescaled_samples(n_eff: f64, count: usize, seed: u64) -> Vec<f64> {
    let cov = CovarianceSpec::one_factor(vec![1.0], 0.0).unwrap();
    sample_returns(&cov, n_eff, count, seed).unwrap().column(0).iter().copied().collect()
}

#[test]
fn gbm_return_moments() {
    // Daily steps of a GBM with yearly drift 0.17 and volatility 0.35.
    let (mu, rho, dt): (f64, f64, f64) = (0.17, 0.35, 1.0 / 252.0);
    let panel = ensemble_panel(1, 20_000, 0.0, 1e6, rho * dt.sqrt(), mu * dt, 3);
    let rm = compute_returns(&panel, 1, false).unwrap();
    let r: Vec<f64> = rm.returns.column(0).iter().copied().collect();
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let sd = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let expected_mean = (mu * dt).exp_m1();
    assert!((mean - expected_mean).abs() < 4.0 * sd / n.sqrt(), "{mean} vs {expected_mean}");
    assert!((sd - rho * dt.sqrt()).abs() < 4.0 * rho * dt.sqrt() / (2.0 * n).sqrt() + 1e-4 * rho);

    let dv = estimate_drift_vol(&rm, HorizonUnit::TradingDay).unwrap();
    let dv_year = estimate_drift_vol(&rm, HorizonUnit::Year).unwrap();
    assert!((dv_year[0].mu_hat - mu).abs() < 4.0 * rho / (n * dt).sqrt());
    assert!((dv_year[0].rho_hat - rho).abs() < 4.0 * rho / (2.0 * n).sqrt());
    assert!((dv[0].rho_hat - rho * dt.sqrt()).abs() < 4.0 * rho * dt.sqrt() / (2.0 * n).sqrt());
}

#[test]
fn monthly_scale_drift_vol() {
    // Monthly steps, mu = 0.013 per month and rho = 0.1 per sqrt(month).
    let panel = ensemble_panel(3, 6000, 0.2, 1e6, 0.1, 0.013, 5);
    let rm = compute_returns(&panel, 1, false).unwrap();
    let days = ReturnMatrix::new(rm.tickers.clone(), rm.returns.clone(), 20).unwrap();
    let n = rm.observations() as f64;
    for d in estimate_drift_vol(&days, HorizonUnit::Month).unwrap() {
        assert!((d.mu_hat - 0.013).abs() < 4.0 * 0.1 / n.sqrt(), "{d:?}");
        assert!((d.rho_hat - 0.1).abs() < 4.0 * 0.1 / (2.0 * n).sqrt(), "{d:?}");
    }
}

#[test]
fn independent_series_have_zero_mean_correlation() {
    let (t, k) = (5000, 10);
    let rm = ReturnMatrix::new(tickers(k), gaussian_matrix(t, k, 17), 1).unwrap();
    let c = mean_correlation(&rm).unwrap();
    let se = 1.0 / ((t * k * (k - 1) / 2) as f64).sqrt();
    assert!(c.abs() < 4.0 * se, "{c}");
}

#[test]
fn one_factor_panel_recovers_mean_correlation() {
    let panel = ensemble_panel(50, 5000, 0.26, 4.2, 0.02, 0.0, 99);
    let rm = compute_returns(&panel, 1, false).unwrap();
    let c = mean_correlation(&rm).unwrap();
    assert!((0.24..=0.28).contains(&c), "{c}");
}

#[test]
fn whitened_gaussian_returns_are_standardised() {
    let (t, k) = (4000, 6);
    let rm = ReturnMatrix::new(tickers(k), gaussian_matrix(t, k, 23) * 0.3, 1).unwrap();
    let pooled = rotate_and_rescale(&rm).unwrap();
    assert_eq!(pooled.len(), t * k);
    for comp in 0..k {
        let col: Vec<f64> = pooled.iter().skip(comp).step_by(k).copied().collect();
        let mean = col.iter().sum::<f64>() / t as f64;
        let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t as f64 - 1.0);
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-10, "{var}");
    }
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    assert!(mean.abs() < 4.0 / n.sqrt());
}

#[test]
fn whitened_ensemble_returns_follow_rescaled_density() {
    let n_eff = 4.2;
    let (t, k) = (20_000, 10);
    let cov = CovarianceSpec::one_factor(vec![0.05; k], 0.26).unwrap();
    let r = sample_returns(&cov, n_eff, t, 61).unwrap();
    let rm = ReturnMatrix::new(tickers(k), r, 1).unwrap();
    let pooled = rotate_and_rescale(&rm).unwrap();
    // Components of one window share the chi-square draw, so test each
    // component (i.i.d. over windows) separately.
    let critical = 1.628 / (t as f64).sqrt();
    for comp in [0, k / 2, k - 1] {
        let mut col: Vec<f64> = pooled.iter().skip(comp).step_by(k).copied().collect();
        col.sort_by(|a, b| a.total_cmp(b));
        let d = ks_statistic(&rescaled_cdf_sorted(&col, n_eff));
        assert!(d < critical, "component {comp}: D = {d}, critical {critical}");
    }
}

#[test]
fn fit_recovers_n_from_exact_samples() {
    for seed in 0..5 {
        let samples = rescaled_samples(5.0, 100_000, 1000 + seed);
        let fit = fit_n(&samples, (2.05, 50.0), FitMethod::MaximumLikelihood).unwrap();
        assert!((4.5..=5.5).contains(&fit.n_hat), "seed {seed}: {}", fit.n_hat);
        assert!(!fit.at_boundary);
        assert!(fit.trace.len() > 10);
    }
}

#[test]
fn gaussian_samples_pin_fit_to_upper_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<f64> = (0..50_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let fit = fit_n(&samples, (2.05, 30.0), FitMethod::MaximumLikelihood).unwrap();
    assert!(fit.at_boundary);
    assert_eq!(fit.n_hat, 30.0);
}

#[test]
fn likelihood_is_unimodal() {
    let samples = rescaled_samples(4.2, 20_000, 8);
    let grid: Vec<f64> = (0..50).map(|i| 2.1 + i as f64 * 0.4).collect();
    let ll: Vec<f64> = grid.iter().map(|&n| mean_log_likelihood(&samples, n).unwrap()).collect();
    let slopes: Vec<f64> = ll.windows(2).map(|w| w[1] - w[0]).collect();
    let sign_changes = slopes.windows(2).filter(|w| (w[0] > 0.0) != (w[1] > 0.0)).count();
    assert!(sign_changes <= 1, "{ll:?}");
}

#[test]
fn least_squares_mode_is_close_to_likelihood() {
    let samples = rescaled_samples(5.0, 100_000, 44);
    let ml = fit_n(&samples, (2.05, 50.0), FitMethod::MaximumLikelihood).unwrap();
    let ls = fit_n(&samples, (2.05, 50.0), FitMethod::LogHistogramLeastSquares).unwrap();
    assert_eq!(ls.method, FitMethod::LogHistogramLeastSquares);
    assert!((ls.n_hat - ml.n_hat).abs() < 1.0, "{} vs {}", ls.n_hat, ml.n_hat);
}

#[test]
fn identical_series_leave_n_unfitted() {
    let panel = ensemble_panel(1, 300, 0.0, 1e6, 0.02, 0.0, 1);
    let p = panel.prices();
    let doubled = DMatrix::from_fn(p.nrows(), 2, |r, _| p[(r, 0)]);
    let panel = PricePanel::new(tickers(2), panel.dates().to_vec(), doubled).unwrap();
    let opts = CalibrationOptions {
        horizon_days: 1,
        unit: HorizonUnit::TradingDay,
        ..CalibrationOptions::monthly()
    };
    let cal = calibrate(&panel, &opts).unwrap();
    assert!((cal.report.c_hat - 1.0).abs() < 1e-12);
    assert_eq!(cal.report.n_hat, None);
    assert!(!cal.report.diagnostics.warnings.is_empty());
}

#[test]
fn pipeline_on_ensemble_panel() {
    let panel = ensemble_panel(20, 4000, 0.26, 4.2, 0.02, 0.001, 7);
    let opts = CalibrationOptions {
        horizon_days: 1,
        unit: HorizonUnit::TradingDay,
        ..CalibrationOptions::monthly()
    };
    let cal = calibrate(&panel, &opts).unwrap();
    let r = &cal.report;
    assert_eq!(r.tickers.len(), 20);
    assert_eq!(r.mu_hat.len(), 20);
    assert_eq!(cal.rescaled.len(), 20 * 4000);
    assert!((r.c_hat - 0.26).abs() < 0.05);
    let n = r.n_hat.unwrap();
    assert!((3.0..6.0).contains(&n), "{n}");
    assert_eq!(r.dropped_rows, 0);
}
