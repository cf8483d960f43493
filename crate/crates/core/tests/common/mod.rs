#![allow(dead_code)]

use chrono::NaiveDate;
use credit_ensemble::calibration::PricePanel;
use credit_ensemble::ensemble_returns::{sample_returns, univariate_rescaled_density, CovarianceSpec};
use credit_ensemble::numerics::{integrate_adaptive, AdaptiveTol};
use nalgebra::DMatrix;

/// Price panel whose one-period log returns are drawn from the ensemble
/// sampler with volatility `vol` and drift `drift` per period.
pub fn ensemble_panel(k: usize, periods: usize, c: f64, n_eff: f64, vol: f64, drift: f64, seed: u64) -> PricePanel {
    let cov = CovarianceSpec::one_factor(vec![vol; k], c).unwrap();
    let r = sample_returns(&cov, n_eff, periods, seed).unwrap();
    let mut prices = DMatrix::zeros(periods + 1, k);
    for j in 0..k {
        prices[(0, j)] = 100.0;
        for t in 0..periods {
            prices[(t + 1, j)] = prices[(t, j)] * (r[(t, j)] + drift - 0.5 * vol * vol).exp();
        }
    }
    let start = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
    let dates = (0..=periods).map(|i| start + chrono::Days::new(i as u64)).collect();
    let tickers = (0..k).map(|j| format!("S{j:03}")).collect();
    PricePanel::new(tickers, dates, prices).unwrap()
}

/// Distribution function of the rescaled-return density at ascending points.
pub fn rescaled_cdf_sorted(sorted: &[f64], n_eff: f64) -> Vec<f64> {
    let g = |x: f64| univariate_rescaled_density(x, n_eff).unwrap();
    let tol = AdaptiveTol {
        rel: 1e-10,
        abs: 1e-14,
        max_panels: 200,
    };
    let integral = |a: f64, b: f64| if b > a { integrate_adaptive(g, &[a, b], tol).unwrap() } else { 0.0 };
    let first = sorted[0];
    let mut cdf = if first < 0.0 { 0.5 - integral(first, 0.0) } else { 0.5 + integral(0.0, first) };
    let mut prev = first;
    sorted
        .iter()
        .map(|&x| {
            cdf += integral(prev, x);
            prev = x;
            cdf
        })
        .collect()
}

/// Kolmogorov–Smirnov statistic of a sorted sample against `cdf` values.
pub fn ks_statistic(cdf: &[f64]) -> f64 {
    let n = cdf.len() as f64;
    cdf.iter()
        .enumerate()
        .map(|(i, f)| (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs()))
        .fold(0.0, f64::max)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
