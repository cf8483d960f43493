//! Parameter estimation from price panels.
//!
//! The pipeline reads a wide CSV of prices, forms returns over a fixed
//! horizon, estimates the mean correlation `c`, rotates the returns into the
//! eigenbasis of their sample covariance and rescales them to unit variance,
//! fits `N` to the pooled rescaled returns, and estimates per-asset drift and
//! volatility.

use crate::ensemble_returns::ln_univariate_rescaled_density;
use crate::numerics::sym_eigen;
use crate::portfolio_loss::HorizonUnit;
use crate::{Error, Result};
use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Read;

/// Prices of `K` assets on strictly increasing dates, with no gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    tickers: Vec<String>,
    dates: Vec<NaiveDate>,
    /// One row per date, one column per ticker.
    prices: DMatrix<f64>,
    dropped_rows: usize,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan") || c.eq_ignore_ascii_case("null")
}

impl PricePanel {
    pub fn new(tickers: Vec<String>, dates: Vec<NaiveDate>, prices: DMatrix<f64>) -> Result<Self> {
        if prices.ncols() != tickers.len() || prices.nrows() != dates.len() {
            return Err(Error::Dimension(format!(
                "{}x{} prices for {} dates and {} tickers",
                prices.nrows(),
                prices.ncols(),
                dates.len(),
                tickers.len()
            )));
        }
        if tickers.is_empty() {
            return Err(Error::Data("price panel has no tickers".into()));
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!("dates are not strictly increasing at {}", w[1])));
        }
        for (t, date) in dates.iter().enumerate() {
            for (k, ticker) in tickers.iter().enumerate() {
                let p = prices[(t, k)];
                if !(p > 0.0) || !p.is_finite() {
                    return Err(Error::Data(format!("nonpositive price {p} for {ticker} on {date}")));
                }
            }
        }
        Ok(Self {
            tickers,
            dates,
            prices,
            dropped_rows: 0,
        })
    }

    /// Read the wide format `date,TICKER1,TICKER2,...` with ISO-8601 dates.
    /// Rows with a missing price (empty, `NA`, `NaN`, `null`) are dropped
    /// and counted.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Parse(format!("CSV header: {e}")))?.clone();
        if headers.len() < 2 {
            return Err(Error::Parse("CSV needs a date column and at least one ticker".into()));
        }
        let tickers: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut dates = Vec::new();
        let mut flat = Vec::new();
        let mut dropped = 0;
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| Error::Parse(format!("CSV line {line}: {e}")))?;
            if record.len() != headers.len() {
                return Err(Error::Parse(format!(
                    "CSV line {line}: {} fields, expected {}",
                    record.len(),
                    headers.len()
                )));
            }
            let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
                .map_err(|e| Error::Parse(format!("CSV line {line}: bad date {:?}: {e}", &record[0])))?;
            if record.iter().skip(1).any(is_missing) {
                dropped += 1;
                continue;
            }
            for (cell, ticker) in record.iter().skip(1).zip(&tickers) {
                let p: f64 = cell
                    .parse()
                    .map_err(|_| Error::Parse(format!("CSV line {line}: bad price {cell:?} for {ticker}")))?;
                flat.push(p);
            }
            dates.push(date);
        }
        let prices = DMatrix::from_row_slice(dates.len(), tickers.len(), &flat);
        let mut panel = Self::new(tickers, dates, prices)?;
        panel.dropped_rows = dropped;
        Ok(panel)
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn prices(&self) -> &DMatrix<f64> {
        &self.prices
    }

    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }
}

/// Returns over a fixed horizon; one row per window, one column per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    pub tickers: Vec<String>,
    /// Start date of each window; empty for matrices built with [`ReturnMatrix::new`].
    pub dates: Vec<NaiveDate>,
    pub returns: DMatrix<f64>,
    /// Horizon in trading days.
    pub horizon_days: usize,
}

impl ReturnMatrix {
    pub fn new(tickers: Vec<String>, returns: DMatrix<f64>, horizon_days: usize) -> Result<Self> {
        if returns.ncols() != tickers.len() {
            return Err(Error::Dimension(format!("{} columns for {} tickers", returns.ncols(), tickers.len())));
        }
        if horizon_days == 0 {
            return Err(Error::InvalidParameter("return horizon must be at least one day".into()));
        }
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(Error::Data("returns must be finite".into()));
        }
        let dates = Vec::new();
        Ok(Self {
            tickers,
            dates,
            returns,
            horizon_days,
        })
    }

    pub fn observations(&self) -> usize {
        self.returns.nrows()
    }

    pub fn assets(&self) -> usize {
        self.returns.ncols()
    }
}

/// Simple returns `(S(t + dt) - S(t)) / S(t)`. Windows start every `dt`
/// rows, or every row with `overlapping`.
pub fn compute_returns(panel: &PricePanel, horizon_days: usize, overlapping: bool) -> Result<ReturnMatrix> {
    if horizon_days == 0 {
        return Err(Error::InvalidParameter("return horizon must be at least one day".into()));
    }
    let t_obs = panel.dates.len();
    if horizon_days >= t_obs {
        return Err(Error::Data(format!(
            "return horizon of {horizon_days} days needs more than {t_obs} price rows"
        )));
    }
    let step = if overlapping { 1 } else { horizon_days };
    let starts: Vec<usize> = (0..t_obs - horizon_days).step_by(step).collect();
    let k = panel.tickers.len();
    let mut returns = DMatrix::zeros(starts.len(), k);
    for (row, &t) in starts.iter().enumerate() {
        for col in 0..k {
            let (p0, p1) = (panel.prices[(t, col)], panel.prices[(t + horizon_days, col)]);
            if !(p0 > 0.0) || !(p1 > 0.0) {
                let (bad, date) = if p0 > 0.0 { (p1, panel.dates[t + horizon_days]) } else { (p0, panel.dates[t]) };
                return Err(Error::Data(format!(
                    "nonpositive price {bad} for {} on {date}",
                    panel.tickers[col]
                )));
            }
            returns[(row, col)] = (p1 - p0) / p0;
        }
    }
    Ok(ReturnMatrix {
        tickers: panel.tickers.clone(),
        dates: starts.iter().map(|&t| panel.dates[t]).collect(),
        returns,
        horizon_days,
    })
}

fn column_moments(rm: &ReturnMatrix) -> Vec<(f64, f64)> {
    let t = rm.observations() as f64;
    rm.returns
        .column_iter()
        .map(|c| {
            let mean = c.sum() / t;
            let var = c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t - 1.0);
            (mean, var)
        })
        .collect()
}

/// Sample covariance with denominator `T - 1`.
fn sample_covariance(rm: &ReturnMatrix) -> DMatrix<f64> {
    let t = rm.observations();
    let means: Vec<f64> = column_moments(rm).iter().map(|m| m.0).collect();
    let mut centred = rm.returns.clone();
    for (j, mut col) in centred.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    (centred.transpose() * &centred) / (t as f64 - 1.0)
}

/// Average of the `K(K-1)` off-diagonal sample correlations.
pub fn mean_correlation(rm: &ReturnMatrix) -> Result<f64> {
    let k = rm.assets();
    if k < 2 {
        return Err(Error::InvalidParameter("mean correlation needs at least two assets".into()));
    }
    if rm.observations() < 2 {
        return Err(Error::Data("mean correlation needs at least two observations".into()));
    }
    let cov = sample_covariance(rm);
    for j in 0..k {
        if !(cov[(j, j)] > 0.0) {
            return Err(Error::Data(format!("return series {} has zero variance", rm.tickers[j])));
        }
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                total += cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
            }
        }
    }
    Ok(total / (k * (k - 1)) as f64)
}

/// Pool of rotated and rescaled returns: each centred return vector is
/// mapped to `Lambda^{-1/2} U^T (r - mean)`, where `U Lambda U^T` is the
/// sample covariance, and all components of all windows are concatenated
/// (window-major).
pub fn rotate_and_rescale(rm: &ReturnMatrix) -> Result<Vec<f64>> {
    let (t, k) = (rm.observations(), rm.assets());
    if t < 2 {
        return Err(Error::Data("rotation needs at least two observations".into()));
    }
    let cov = sample_covariance(rm);
    let eig = sym_eigen(&cov)?;
    let largest = eig.values[0];
    let smallest = eig.values[k - 1];
    if !(smallest > 1e-12 * largest) {
        return Err(Error::Matrix(format!(
            "sample covariance is not positive definite ({t} observations, {k} assets): \
             reduce the number of assets or extend the data"
        )));
    }
    let means: Vec<f64> = column_moments(rm).iter().map(|m| m.0).collect();
    let inv_sqrt: Vec<f64> = eig.values.iter().map(|l| 1.0 / l.sqrt()).collect();
    let mut out = Vec::with_capacity(t * k);
    let mut centred = vec![0.0; k];
    for row in rm.returns.row_iter() {
        for j in 0..k {
            centred[j] = row[j] - means[j];
        }
        for (i, s) in inv_sqrt.iter().enumerate() {
            let v = eig.vectors.column(i);
            let proj: f64 = v.iter().zip(&centred).map(|(a, b)| a * b).sum();
            out.push(proj * s);
        }
    }
    Ok(out)
}

/// Objective used to fit `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Maximise the log-likelihood of the pooled samples.
    MaximumLikelihood,
    /// Minimise squared differences of log densities over a histogram on
    /// `[-6, 6]` (60 bins, empty bins skipped).
    LogHistogramLeastSquares,
}

/// Search record of a fit of `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NFit {
    pub n_hat: f64,
    pub method: FitMethod,
    /// Objective at `n_hat`: mean log-likelihood per sample for maximum
    /// likelihood, sum of squares for least squares.
    pub objective: f64,
    /// `(N, objective)` at every evaluation, in search order.
    pub trace: Vec<(f64, f64)>,
    pub at_boundary: bool,
    pub bounds: (f64, f64),
    pub samples: usize,
}

const MIN_FIT_SAMPLES: usize = 1000;
const GOLDEN_TOL: f64 = 1e-4;

/// Mean log-likelihood of `samples` under the rescaled-return density.
pub fn mean_log_likelihood(samples: &[f64], n_eff: f64) -> Result<f64> {
    let partial: Vec<f64> = samples
        .par_chunks(4096)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&x| ln_univariate_rescaled_density(x, n_eff))
                .sum::<Result<f64>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(partial.iter().sum::<f64>() / samples.len() as f64)
}

fn log_histogram_residual(hist: &[(f64, f64)], n_eff: f64) -> Result<f64> {
    hist.iter()
        .map(|&(x, ln_d)| ln_univariate_rescaled_density(x, n_eff).map(|m| (ln_d - m).powi(2)))
        .sum()
}

/// Fit `N` on `[n_lo, n_hi]` by golden-section search. An optimum at a
/// bound sets `at_boundary`.
pub fn fit_n(samples: &[f64], bounds: (f64, f64), method: FitMethod) -> Result<NFit> {
    let (lo, hi) = bounds;
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::Data(format!(
            "fitting N needs at least {MIN_FIT_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if !(lo > 2.0) || !(hi > lo) || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("N bounds must satisfy 2 < lo < hi, got ({lo}, {hi})")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("samples must be finite".into()));
    }
    let hist: Vec<(f64, f64)> = match method {
        FitMethod::MaximumLikelihood => Vec::new(),
        FitMethod::LogHistogramLeastSquares => {
            let (a, b, bins) = (-6.0, 6.0, 60usize);
            let width = (b - a) / bins as f64;
            let mut counts = vec![0usize; bins];
            for &x in samples {
                if (a..b).contains(&x) {
                    counts[((x - a) / width) as usize] += 1;
                }
            }
            let total = samples.len() as f64;
            counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &c)| (a + (i as f64 + 0.5) * width, (c as f64 / (total * width)).ln()))
                .collect()
        }
    };
    // Minimise `cost`; the likelihood is negated.
    let cost = |n: f64| -> Result<f64> {
        match method {
            FitMethod::MaximumLikelihood => mean_log_likelihood(samples, n).map(|v| -v),
            FitMethod::LogHistogramLeastSquares => log_histogram_residual(&hist, n),
        }
    };
    let mut trace = Vec::new();
    let mut eval = |n: f64| -> Result<f64> {
        let c = cost(n)?;
        trace.push((n, c));
        Ok(c)
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = eval(x1)?;
    let mut f2 = eval(x2)?;
    while b - a > GOLDEN_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = eval(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = eval(x2)?;
        }
    }
    let (mut n_hat, mut best) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    let mut at_boundary = false;
    for bound in [lo, hi] {
        let f = eval(bound)?;
        if f <= best {
            n_hat = bound;
            best = f;
            at_boundary = true;
        }
    }
    if !at_boundary && (n_hat - lo < 10.0 * GOLDEN_TOL || hi - n_hat < 10.0 * GOLDEN_TOL) {
        at_boundary = true;
    }
    if at_boundary {
        log::warn!("fitted N = {n_hat} lies at the search bound ({lo}, {hi})");
    }
    let objective = match method {
        FitMethod::MaximumLikelihood => -best,
        FitMethod::LogHistogramLeastSquares => best,
    };
    let trace = trace
        .into_iter()
        .map(|(n, c)| match method {
            FitMethod::MaximumLikelihood => (n, -c),
            FitMethod::LogHistogramLeastSquares => (n, c),
        })
        .collect();
    Ok(NFit {
        n_hat,
        method,
        objective,
        trace,
        at_boundary,
        bounds,
        samples: samples.len(),
    })
}

/// Drift and volatility of one asset, per horizon unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftVol {
    pub ticker: String,
    pub mu_hat: f64,
    pub rho_hat: f64,
}

/// Convention used by [`estimate_drift_vol`], reported with the fit.
pub const DRIFT_CONVENTION: &str =
    "rho_hat = std(ln(1+r))/sqrt(dt), mu_hat = mean(ln(1+r))/dt + rho_hat^2/2, dt in horizon units";

/// Per-asset `(mu_hat, rho_hat)` in `unit`, from the log of the gross
/// returns so that a geometric Brownian motion with drift `mu` and
/// volatility `rho` is recovered without bias.
pub fn estimate_drift_vol(rm: &ReturnMatrix, unit: HorizonUnit) -> Result<Vec<DriftVol>> {
    let t = rm.observations();
    if t < 2 {
        return Err(Error::Data("drift and volatility need at least two returns per asset".into()));
    }
    let dt = rm.horizon_days as f64 / unit.trading_days();
    rm.returns
        .column_iter()
        .zip(&rm.tickers)
        .map(|(col, ticker)| {
            let logs: Vec<f64> = col.iter().map(|r| r.ln_1p()).collect();
            if logs.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("return of -100% or below for {ticker}")));
            }
            let mean = logs.iter().sum::<f64>() / t as f64;
            let var = logs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (t as f64 - 1.0);
            let rho_hat = (var / dt).sqrt();
            Ok(DriftVol {
                ticker: ticker.clone(),
                mu_hat: mean / dt + 0.5 * rho_hat * rho_hat,
                rho_hat,
            })
        })
        .collect()
}

/// Settings of [`calibrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub horizon_days: usize,
    pub unit: HorizonUnit,
    pub overlapping: bool,
    pub n_bounds: (f64, f64),
    pub method: FitMethod,
}

impl CalibrationOptions {
    pub fn monthly() -> Self {
        Self {
            horizon_days: 20,
            unit: HorizonUnit::Month,
            overlapping: false,
            n_bounds: (2.05, 50.0),
            method: FitMethod::MaximumLikelihood,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub fit: Option<NFit>,
    pub horizon_days: usize,
    pub observations: usize,
    pub overlapping: bool,
    pub drift_convention: String,
    pub warnings: Vec<String>,
}

/// Result of a calibration; serialises with the keys `c_hat`, `n_hat`,
/// `mu_hat`, `rho_hat`, `dropped_rows`, `diagnostics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub c_hat: f64,
    /// `None` when the returns cannot be whitened (perfectly correlated
    /// series).
    pub n_hat: Option<f64>,
    pub tickers: Vec<String>,
    pub mu_hat: Vec<f64>,
    pub rho_hat: Vec<f64>,
    pub dropped_rows: usize,
    pub diagnostics: FitDiagnostics,
}

/// A fit together with the pooled rescaled returns it was fitted to.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub report: FitReport,
    pub rescaled: Vec<f64>,
}

/// Full pipeline: returns, mean correlation, rotation, fit of `N`, drift
/// and volatility.
pub fn calibrate(panel: &PricePanel, opts: &CalibrationOptions) -> Result<Calibration> {
    let rm = compute_returns(panel, opts.horizon_days, opts.overlapping)?;
    let k = rm.assets();
    let mut warnings = Vec::new();
    let c_hat = mean_correlation(&rm)?;
    let degenerate = c_hat >= 1.0 - 1e-12;
    if degenerate {
        warnings.push("all series are perfectly correlated; N cannot be fitted".to_string());
    } else if k > 1 && c_hat <= -1.0 / (k as f64 - 1.0) {
        warnings.push(format!("mean correlation {c_hat} is below the admissible -1/(K-1)"));
    }
    let (rescaled, fit) = if degenerate {
        (Vec::new(), None)
    } else {
        let rescaled = rotate_and_rescale(&rm)?;
        let fit = fit_n(&rescaled, opts.n_bounds, opts.method)?;
        if fit.at_boundary {
            warnings.push(format!(
                "fitted N = {} lies at the search bound ({}, {})",
                fit.n_hat, opts.n_bounds.0, opts.n_bounds.1
            ));
        }
        (rescaled, Some(fit))
    };
    if panel.dropped_rows() > 0 {
        warnings.push(format!("dropped {} rows with missing prices", panel.dropped_rows()));
    }
    let dv = estimate_drift_vol(&rm, opts.unit)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Calibration {
        report: FitReport {
            c_hat,
            n_hat: fit.as_ref().map(|f| f.n_hat),
            tickers: rm.tickers.clone(),
            mu_hat: dv.iter().map(|d| d.mu_hat).collect(),
            rho_hat: dv.iter().map(|d| d.rho_hat).collect(),
            dropped_rows: panel.dropped_rows(),
            diagnostics: FitDiagnostics {
                fit,
                horizon_days: opts.horizon_days,
                observations: rm.observations(),
                overlapping: opts.overlapping,
                drift_convention: DRIFT_CONVENTION.to_string(),
                warnings,
            },
        },
        rescaled,
    })
}
