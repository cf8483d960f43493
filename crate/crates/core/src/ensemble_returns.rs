//! Ensemble-averaged return distributions.
//!
//! Averaging a multivariate Gaussian over a Wishart ensemble of correlation
//! matrices with mean `C` and fluctuation parameter `N` gives a density that
//! only depends on `Sigma = sigma C sigma` and `N`, expressed through a
//! Bessel function of the second kind. Equivalently, returns are a
//! chi-square scale mixture of Gaussians,
//!
//! ```text
//! r | z ~ Normal(0, (z / N) Sigma),   z ~ ChiSquare(N),
//! ```
//!
//! which is valid for any real `N > 0` and is what the samplers use.

use crate::numerics::{
    gauss_hermite_scaled, integrate_adaptive, ln_bessel_k_scaled, ln_gamma, AdaptiveTol,
};
use crate::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// The two macroscopic parameters of the model: mean correlation `c` and
/// fluctuation strength `N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    c: f64,
    n_eff: f64,
}

impl EnsembleParams {
    /// Requires `0 <= c < 1` and `n_eff > 2`.
    pub fn new(c: f64, n_eff: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&c) {
            return Err(Error::InvalidParameter(format!(
                "mean correlation c must lie in [0, 1), got {c}"
            )));
        }
        if !(n_eff > 2.0) || !n_eff.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "fluctuation parameter N must be finite and exceed 2, got {n_eff}"
            )));
        }
        Ok(Self { c, n_eff })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn n_eff(&self) -> f64 {
        self.n_eff
    }
}

/// Correlation structure of a [`CovarianceSpec`].
#[derive(Debug, Clone, PartialEq)]
pub enum Correlation {
    /// All off-diagonal entries equal to `c`: `C = (1 - c) I + c e e^T`.
    OneFactor(f64),
    /// Explicit correlation matrix.
    Matrix(DMatrix<f64>),
}

/// Volatilities and correlations of `K` returns, `Sigma = sigma C sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    vols: Vec<f64>,
    correlation: Correlation,
}

impl CovarianceSpec {
    pub fn one_factor(vols: Vec<f64>, c: f64) -> Result<Self> {
        check_vols(&vols)?;
        let k = vols.len() as f64;
        // C is positive definite iff -1/(K-1) < c < 1.
        let lower = if vols.len() > 1 { -1.0 / (k - 1.0) } else { f64::NEG_INFINITY };
        if !(c < 1.0 && c > lower) {
            return Err(Error::Matrix(format!(
                "one-factor correlation c = {c} is not positive definite for K = {}",
                vols.len()
            )));
        }
        Ok(Self {
            vols,
            correlation: Correlation::OneFactor(c),
        })
    }

    pub fn full(vols: Vec<f64>, corr: DMatrix<f64>) -> Result<Self> {
        check_vols(&vols)?;
        let k = vols.len();
        if corr.nrows() != k || corr.ncols() != k {
            return Err(Error::Dimension(format!(
                "correlation matrix is {}x{} but there are {k} volatilities",
                corr.nrows(),
                corr.ncols()
            )));
        }
        for i in 0..k {
            if (corr[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::Matrix(format!("diagonal entry {i} of C is not one")));
            }
            for j in 0..k {
                if corr[(i, j)].abs() > 1.0 + 1e-12 {
                    return Err(Error::Matrix(format!("|C[{i},{j}]| exceeds one")));
                }
                if (corr[(i, j)] - corr[(j, i)]).abs() > 1e-10 {
                    return Err(Error::Matrix("correlation matrix is not symmetric".into()));
                }
            }
        }
        Ok(Self {
            vols,
            correlation: Correlation::Matrix(corr),
        })
    }

    pub fn dim(&self) -> usize {
        self.vols.len()
    }

    pub fn vols(&self) -> &[f64] {
        &self.vols
    }

    pub fn correlation(&self) -> &Correlation {
        &self.correlation
    }

    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        let k = self.dim();
        match &self.correlation {
            Correlation::OneFactor(c) => {
                DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { *c })
            }
            Correlation::Matrix(m) => m.clone(),
        }
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let c = self.correlation_matrix();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.vols[i] * c[(i, j)] * self.vols[j]
        })
    }

    fn factor(&self) -> Result<Factor> {
        let sigma = self.covariance_matrix();
        let chol = Cholesky::new(sigma).ok_or_else(|| {
            Error::Matrix("covariance matrix is singular or not positive definite".into())
        })?;
        let ln_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !ln_det.is_finite() {
            return Err(Error::Matrix("covariance matrix is singular".into()));
        }
        Ok(Factor { chol, ln_det })
    }
}

fn check_vols(vols: &[f64]) -> Result<()> {
    if vols.is_empty() {
        return Err(Error::InvalidParameter("at least one volatility is required".into()));
    }
    if let Some((k, v)) = vols.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "volatility {k} must be positive and finite, got {v}"
        )));
    }
    Ok(())
}

struct Factor {
    chol: Cholesky<f64, Dyn>,
    ln_det: f64,
}

impl Factor {
    /// `r^T Sigma^{-1} r`.
    fn quadratic_form(&self, r: &[f64]) -> f64 {
        let v = DVector::from_column_slice(r);
        let w = self.chol.l_dirty().solve_lower_triangular(&v).expect("non-singular factor");
        w.norm_squared()
    }
}

fn check_point(r: &[f64], cov: &CovarianceSpec) -> Result<()> {
    if r.len() != cov.dim() {
        return Err(Error::Dimension(format!(
            "return vector has {} components, covariance has {}",
            r.len(),
            cov.dim()
        )));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("return vector has non-finite components".into()));
    }
    Ok(())
}

fn check_n(n_eff: f64) -> Result<()> {
    if !(n_eff > 0.0) || !n_eff.is_finite() {
        return Err(Error::InvalidParameter(format!("N must be positive, got {n_eff}")));
    }
    Ok(())
}

/// Multivariate normal density with covariance `Sigma` at `r`.
pub fn gaussian_density(r: &[f64], cov: &CovarianceSpec) -> Result<f64> {
    check_point(r, cov)?;
    let f = cov.factor()?;
    let k = r.len() as f64;
    Ok((-0.5 * f.quadratic_form(r) - 0.5 * (k * LN_2PI + f.ln_det)).exp())
}

/// Natural log of [`averaged_density`].
pub fn ln_averaged_density(r: &[f64], cov: &CovarianceSpec, n_eff: f64) -> Result<f64> {
    check_point(r, cov)?;
    check_n(n_eff)?;
    let f = cov.factor()?;
    let k = r.len() as f64;
    let order = 0.5 * (k - n_eff);
    let ln_pref = 0.5 * k * n_eff.ln()
        - 0.5 * (n_eff - 2.0) * LN_2
        - ln_gamma(0.5 * n_eff)
        - 0.5 * (k * LN_2PI + f.ln_det);
    let q = f.quadratic_form(r);
    if q == 0.0 {
        // x^{-nu} K_nu(x) -> Gamma(-nu) 2^{-nu-1} as x -> 0 for nu < 0.
        if order < 0.0 {
            let m = -order;
            return Ok(ln_pref + ln_gamma(m) + (m - 1.0) * LN_2);
        }
        return Err(Error::Domain(format!(
            "averaged density diverges at r = 0 when K = {k} >= N = {n_eff}"
        )));
    }
    let x = (n_eff * q).sqrt();
    Ok(ln_pref + ln_bessel_k_scaled(order, x)? - x - order * x.ln())
}

/// Wishart-averaged multivariate return density
///
/// ```text
/// <g>(r | Sigma, N) = sqrt(N)^K / (sqrt(2)^{N-2} Gamma(N/2) sqrt(det(2 pi Sigma)))
///                     * K_{(K-N)/2}(sqrt(N q)) / sqrt(N q)^{(K-N)/2},   q = r^T Sigma^{-1} r.
/// ```
///
/// Evaluated in log space. At `q = 0` the density is finite only for `K < N`.
pub fn averaged_density(r: &[f64], cov: &CovarianceSpec, n_eff: f64) -> Result<f64> {
    Ok(ln_averaged_density(r, cov, n_eff)?.exp())
}

/// Natural log of [`univariate_rescaled_density`].
pub fn ln_univariate_rescaled_density(r_tilde: f64, n_eff: f64) -> Result<f64> {
    check_n(n_eff)?;
    if !r_tilde.is_finite() {
        return Err(Error::Domain("rescaled return must be finite".into()));
    }
    let order = 0.5 * (n_eff - 1.0);
    let ln_pref = 0.5 * (1.0 - n_eff) * LN_2 + 0.5 * n_eff.ln() - 0.5 * PI.ln() - ln_gamma(0.5 * n_eff);
    if r_tilde == 0.0 {
        // x^nu K_nu(x) -> Gamma(nu) 2^{nu-1}, so the density at zero is
        // sqrt(N) Gamma((N-1)/2) / (2 sqrt(pi) Gamma(N/2)).
        if order > 0.0 {
            return Ok(ln_pref + ln_gamma(order) + (order - 1.0) * LN_2);
        }
        return Err(Error::Domain(format!(
            "rescaled density diverges at zero for N = {n_eff} <= 1"
        )));
    }
    let x = n_eff.sqrt() * r_tilde.abs();
    Ok(ln_pref + order * x.ln() + ln_bessel_k_scaled(order, x)? - x)
}

/// Density of a single rotated and rescaled return (unit variance):
///
/// ```text
/// <g>(r~ | N) = sqrt(2)^{1-N} sqrt(N) / (sqrt(pi) Gamma(N/2))
///               * sqrt(N r~^2)^{(N-1)/2} K_{(N-1)/2}(sqrt(N r~^2)).
/// ```
pub fn univariate_rescaled_density(r_tilde: f64, n_eff: f64) -> Result<f64> {
    Ok(ln_univariate_rescaled_density(r_tilde, n_eff)?.exp())
}

/// Evaluates the one-factor averaged density through its integral
/// representation over the chi-square variable `z` and the common factor
/// `u`, instead of the closed Bessel form.
///
/// The `u` integral is a Gauss–Hermite rule centred and scaled at the mode
/// of the Gaussian integrand (order doubled from 16 until two successive
/// results agree to 1e-10); the `z` integral is adaptive Gauss–Legendre in
/// `ln z` over the range where the log-integrand is within 60 of its peak.
pub fn averaged_density_onefactor(r: &[f64], vols: &[f64], params: &EnsembleParams) -> Result<f64> {
    check_vols(vols)?;
    if r.len() != vols.len() {
        return Err(Error::Dimension(format!(
            "return vector has {} components, {} volatilities given",
            r.len(),
            vols.len()
        )));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("return vector has non-finite components".into()));
    }
    let c = params.c();
    let n = params.n_eff();
    let k = r.len() as f64;
    let sc = c.sqrt();
    let ln_pref = -0.5 * n * LN_2 - ln_gamma(0.5 * n) - vols.iter().map(|s| s.ln()).sum::<f64>();

    // ln of the z-integrand in x = ln z (Jacobian included).
    let ln_integrand = |x: f64| -> Result<f64> {
        let z = x.exp();
        let scale = (z / n).sqrt();
        let y: Vec<f64> = r.iter().zip(vols).map(|(ri, si)| ri / (si * scale)).collect();
        let energy = |v: f64| {
            0.5 * v * v + y.iter().map(|yk| (yk + sc * v).powi(2)).sum::<f64>() / (2.0 * (1.0 - c))
        };
        let sum_y: f64 = y.iter().sum();
        let v_star = -sc * sum_y / (1.0 - c + k * c);
        let e_star = energy(v_star);
        let outer = 0.5 * n * x - 0.5 * z + 0.5 * k * ((n / (2.0 * PI * (1.0 - c))).ln() - x)
            - 0.5 * LN_2PI;
        if e_star > 1e4 {
            // Negligible region; differences of the energy lose all precision here.
            return Ok(outer - e_star);
        }
        let h = 1e-3 * (1.0 + v_star.abs());
        let curvature = ((energy(v_star + h) - 2.0 * e_star + energy(v_star - h)) / (h * h)).max(1e-3);
        let ln_u = -e_star + ln_hermite_doubling(|w| -(energy(v_star + w) - e_star), curvature)?;
        Ok(outer + ln_u)
    };

    // Locate the peak of the log-integrand on a coarse grid.
    let grid: Vec<f64> = (0..=150).map(|i| -70.0 + 0.5 * i as f64).collect();
    let mut values = Vec::with_capacity(grid.len());
    for &x in &grid {
        values.push(ln_integrand(x)?);
    }
    let peak = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::Consistency("one-factor z-integrand has no finite peak".into()));
    }
    let inside: Vec<usize> = (0..grid.len()).filter(|&i| values[i] > peak - 60.0).collect();
    let lo = grid[inside[0].saturating_sub(1)];
    let hi = grid[(inside[inside.len() - 1] + 1).min(grid.len() - 1)];
    let breaks: Vec<f64> = {
        let steps = ((hi - lo) / 1.0).ceil().max(1.0) as usize;
        (0..=steps).map(|i| lo + (hi - lo) * i as f64 / steps as f64).collect()
    };
    let mut failure = None;
    let integral = integrate_adaptive(
        |x| match ln_integrand(x) {
            Ok(v) => (v - peak).exp(),
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        &breaks,
        AdaptiveTol {
            rel: 1e-11,
            ..AdaptiveTol::default()
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((ln_pref + peak + integral.ln()).exp())
}

/// `ln int exp(g(w)) dw` by Gauss–Hermite with weight `exp(-curv w^2 / 2)`,
/// doubling the order until successive results agree.
fn ln_hermite_doubling<G: Fn(f64) -> f64>(g: G, curvature: f64) -> Result<f64> {
    let scale = 0.5 * curvature;
    let mut previous = f64::NAN;
    let mut order = 16;
    while order <= 256 {
        let rule = gauss_hermite_scaled(scale, order)?;
        let value = rule.integrate(|w| (g(w) + scale * w * w).exp());
        if (value - previous).abs() <= 1e-10 * value.abs() {
            return Ok(value.ln());
        }
        previous = value;
        order *= 2;
    }
    let rule = gauss_hermite_scaled(scale, 256)?;
    let last = rule.integrate(|w| (g(w) + scale * w * w).exp());
    Err(Error::Quadrature {
        context: "Gauss-Hermite over the common factor".into(),
        last,
        previous,
    })
}

/// Random generator for stream `stream` of a run seeded with `seed`.
///
/// Each batch of a sampling run owns one stream, so results do not depend
/// on how batches are scheduled across threads.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Rows per sampling batch.
pub const SAMPLE_BATCH: usize = 4096;

/// Draws `count` i.i.d. return vectors from the averaged density.
///
/// Returns a `count x K` matrix. For a one-factor correlation the O(K)
/// construction `r_k = sigma_k sqrt(z/N) (sqrt(c) xi_0 + sqrt(1-c) xi_k)` is
/// used; otherwise a Cholesky factor of `Sigma`.
pub fn sample_returns(cov: &CovarianceSpec, n_eff: f64, count: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_n(n_eff)?;
    if count == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let k = cov.dim();
    let chi = Gamma::new(0.5 * n_eff, 2.0)
        .map_err(|e| Error::InvalidParameter(format!("chi-square with N = {n_eff}: {e}")))?;
    let sampler = match cov.correlation() {
        Correlation::OneFactor(c) => RowSampler::OneFactor {
            common: c.sqrt(),
            idio: (1.0 - c).sqrt(),
        },
        Correlation::Matrix(_) => RowSampler::Cholesky(cov.factor()?.chol.l()),
    };
    let batches = count.div_ceil(SAMPLE_BATCH);
    let rows: Vec<Vec<f64>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let n_rows = SAMPLE_BATCH.min(count - b * SAMPLE_BATCH);
            let mut out = Vec::with_capacity(n_rows * k);
            let mut xi = vec![0.0; k];
            for _ in 0..n_rows {
                let z: f64 = chi.sample(&mut rng);
                let scale = (z / n_eff).sqrt();
                sampler.fill(&mut rng, cov.vols(), scale, &mut xi, &mut out);
            }
            out
        })
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(count, k, &flat))
}

enum RowSampler {
    OneFactor { common: f64, idio: f64 },
    Cholesky(DMatrix<f64>),
}

impl RowSampler {
    fn fill<R: Rng>(&self, rng: &mut R, vols: &[f64], scale: f64, xi: &mut [f64], out: &mut Vec<f64>) {
        match self {
            RowSampler::OneFactor { common, idio } => {
                let xi0: f64 = rng.sample(StandardNormal);
                for s in vols {
                    let e: f64 = rng.sample(StandardNormal);
                    out.push(s * scale * (common * xi0 + idio * e));
                }
            }
            RowSampler::Cholesky(l) => {
                for x in xi.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                for i in 0..xi.len() {
                    let mut acc = 0.0;
                    for j in 0..=i {
                        acc += l[(i, j)] * xi[j];
                    }
                    out.push(scale * acc);
                }
            }
        }
    }
}

/// Description of an evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GridSpec {
    /// `points` equally spaced abscissae from `lo` to `hi` inclusive.
    Linear { lo: f64, hi: f64, points: usize },
    /// `points` logarithmically spaced abscissae from `lo` to `hi` (both > 0).
    Log { lo: f64, hi: f64, points: usize },
    /// Explicit abscissae.
    Explicit(Vec<f64>),
}

impl GridSpec {
    /// Default grid for rescaled return densities: 2001 points on [-40, 40].
    pub fn rescaled_returns() -> Self {
        GridSpec::Linear {
            lo: -40.0,
            hi: 40.0,
            points: 2001,
        }
    }

    pub fn abscissae(&self) -> Result<Vec<f64>> {
        let xs = match *self {
            GridSpec::Linear { lo, hi, points } => {
                if points < 2 || !(hi > lo) {
                    return Err(Error::InvalidParameter(format!(
                        "linear grid needs lo < hi and at least 2 points, got [{lo}, {hi}] x {points}"
                    )));
                }
                let step = (hi - lo) / (points - 1) as f64;
                (0..points)
                    .map(|i| if i + 1 == points { hi } else { lo + step * i as f64 })
                    .collect()
            }
            GridSpec::Log { lo, hi, points } => {
                if points < 2 || !(lo > 0.0) || !(hi > lo) {
                    return Err(Error::InvalidParameter(format!(
                        "log grid needs 0 < lo < hi and at least 2 points, got [{lo}, {hi}] x {points}"
                    )));
                }
                let (a, b) = (lo.ln(), hi.ln());
                (0..points)
                    .map(|i| match i {
                        0 => lo,
                        _ if i + 1 == points => hi,
                        _ => (a + (b - a) * i as f64 / (points - 1) as f64).exp(),
                    })
                    .collect()
            }
            GridSpec::Explicit(ref xs) => xs.clone(),
        };
        if xs.is_empty() || xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("grid abscissae must be strictly increasing".into()));
        }
        Ok(xs)
    }
}

/// Parameters recorded alongside a [`DensityCurve`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurveMeta {
    pub label: String,
    pub c: Option<f64>,
    pub n_eff: Option<f64>,
    pub horizon: Option<f64>,
    pub grid: Option<GridSpec>,
}

/// A probability density sampled on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub abscissae: Vec<f64>,
    pub values: Vec<f64>,
    pub meta: CurveMeta,
}

impl DensityCurve {
    pub fn new(abscissae: Vec<f64>, values: Vec<f64>, meta: CurveMeta) -> Result<Self> {
        if abscissae.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} abscissae but {} values",
                abscissae.len(),
                values.len()
            )));
        }
        if abscissae.is_empty() || abscissae.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("curve abscissae must be strictly increasing".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("density value {v} is not a finite nonnegative number")));
        }
        Ok(Self {
            abscissae,
            values,
            meta,
        })
    }

    /// Trapezoidal integral over the whole grid.
    pub fn trapezoid(&self) -> f64 {
        self.abscissae
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }

    /// Linear interpolation; zero outside the grid.
    pub fn interpolate(&self, x: f64) -> f64 {
        let xs = &self.abscissae;
        if x < xs[0] || x > xs[xs.len() - 1] {
            return 0.0;
        }
        let i = xs.partition_point(|&a| a <= x);
        if i == 0 {
            return self.values[0];
        }
        if i == xs.len() {
            return self.values[xs.len() - 1];
        }
        let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
        self.values[i - 1] + t * (self.values[i] - self.values[i - 1])
    }

    /// Trapezoidal integral over `[a, b]` using the grid points inside and
    /// interpolated end points.
    pub fn integrate_between(&self, a: f64, b: f64) -> f64 {
        let xs = &self.abscissae;
        let lo = a.max(xs[0]);
        let hi = b.min(xs[xs.len() - 1]);
        if !(hi > lo) {
            return 0.0;
        }
        let mut pts = vec![(lo, self.interpolate(lo))];
        let start = xs.partition_point(|&x| x <= lo);
        let end = xs.partition_point(|&x| x < hi);
        pts.extend((start..end).map(|i| (xs[i], self.values[i])));
        pts.push((hi, self.interpolate(hi)));
        pts.windows(2)
            .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
            .sum()
    }
}

/// Tabulates [`univariate_rescaled_density`] on `grid`.
pub fn rescaled_density_curve(n_eff: f64, grid: &GridSpec) -> Result<DensityCurve> {
    let xs = grid.abscissae()?;
    let values = xs
        .iter()
        .map(|&x| univariate_rescaled_density(x, n_eff))
        .collect::<Result<Vec<_>>>()?;
    DensityCurve::new(
        xs,
        values,
        CurveMeta {
            label: "rescaled return density".into(),
            n_eff: Some(n_eff),
            grid: Some(grid.clone()),
            ..CurveMeta::default()
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn params_validation() {
        assert!(EnsembleParams::new(0.26, 4.2).is_ok());
        assert!(EnsembleParams::new(1.0, 4.2).is_err());
        assert!(EnsembleParams::new(-0.1, 4.2).is_err());
        assert!(EnsembleParams::new(0.26, 2.0).is_err());
    }

    #[test]
    fn gaussian_reference_points() {
        let cov = CovarianceSpec::one_factor(vec![1.0, 1.0], 0.0).unwrap();
        assert_relative_eq!(gaussian_density(&[0.0, 0.0], &cov).unwrap(), 1.0 / (2.0 * PI), max_relative = 1e-14);
        let cov = CovarianceSpec::one_factor(vec![1.0, 1.0], 0.26).unwrap();
        let expected = 1.0 / (2.0 * PI * (1.0f64 - 0.26 * 0.26).sqrt());
        assert_relative_eq!(gaussian_density(&[0.0, 0.0], &cov).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn gaussian_matches_explicit_two_by_two_inverse() {
        let (s1, s2, c) = (0.1, 0.35, 0.28);
        let cov = CovarianceSpec::one_factor(vec![s1, s2], c).unwrap();
        let (a, b, d) = (s1 * s1, c * s1 * s2, s2 * s2);
        let det = a * d - b * b;
        let (x, y) = (0.1, -0.2);
        let q = (d * x * x - 2.0 * b * x * y + a * y * y) / det;
        let expected = (-0.5 * q).exp() / (2.0 * PI * det.sqrt());
        assert_relative_eq!(gaussian_density(&[x, y], &cov).unwrap(), expected, max_relative = 1e-13);
    }

    #[test]
    fn singular_covariance_rejected() {
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let cov = CovarianceSpec::full(vec![1.0, 1.0], corr).unwrap();
        assert!(matches!(gaussian_density(&[0.1, 0.2], &cov), Err(Error::Matrix(_))));
    }

    #[test]
    fn k_equals_one_reduces_to_rescaled_density() {
        let cov = CovarianceSpec::one_factor(vec![1.0], 0.0).unwrap();
        for &r in &[0.5, 1.0, 2.0] {
            let a = averaged_density(&[r], &cov, 4.2).unwrap();
            let b = univariate_rescaled_density(r, 4.2).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-13);
        }
    }

    #[test]
    fn origin_behaviour() {
        let cov = CovarianceSpec::one_factor(vec![1.0, 1.0, 1.0, 1.0, 1.0], 0.2).unwrap();
        assert!(matches!(averaged_density(&[0.0; 5], &cov, 4.2), Err(Error::Domain(_))));
        let cov = CovarianceSpec::one_factor(vec![1.0, 1.0], 0.2).unwrap();
        let at_zero = averaged_density(&[0.0, 0.0], &cov, 4.2).unwrap();
        let near = averaged_density(&[1e-7, 1e-7], &cov, 4.2).unwrap();
        assert_relative_eq!(at_zero, near, max_relative = 1e-5);
        let at_zero = univariate_rescaled_density(0.0, 4.2).unwrap();
        let near = univariate_rescaled_density(1e-8, 4.2).unwrap();
        assert_relative_eq!(at_zero, near, max_relative = 1e-6);
    }

    #[test]
    fn heavier_tails_for_smaller_n() {
        let a = univariate_rescaled_density(6.0, 4.2).unwrap();
        let b = univariate_rescaled_density(6.0, 6.0).unwrap();
        assert!(a > b);
    }

    #[test]
    fn onefactor_at_zero_correlation_factorises() {
        let params = EnsembleParams::new(0.0, 4.2).unwrap();
        let vols = [1.0, 1.0];
        let r = [0.1, 0.1];
        let q = averaged_density_onefactor(&r, &vols, &params).unwrap();
        let cov = CovarianceSpec::one_factor(vols.to_vec(), 0.0).unwrap();
        let closed = averaged_density(&r, &cov, 4.2).unwrap();
        assert_relative_eq!(q, closed, max_relative = 1e-8);
    }

    #[test]
    fn onefactor_single_obligor_rescales() {
        let params = EnsembleParams::new(0.3, 6.0).unwrap();
        let sigma = 0.35;
        let r = 0.2;
        let q = averaged_density_onefactor(&[r], &[sigma], &params).unwrap();
        let expected = univariate_rescaled_density(r / sigma, 6.0).unwrap() / sigma;
        assert_relative_eq!(q, expected, max_relative = 1e-8);
    }

    #[test]
    fn sampler_is_deterministic() {
        let cov = CovarianceSpec::one_factor(vec![0.1, 0.2, 0.3], 0.26).unwrap();
        let a = sample_returns(&cov, 4.2, 5000, 9).unwrap();
        let b = sample_returns(&cov, 4.2, 5000, 9).unwrap();
        assert_eq!(a, b);
        let c = sample_returns(&cov, 4.2, 5000, 10).unwrap();
        assert_ne!(a, c);
        assert!(sample_returns(&cov, 4.2, 0, 9).is_err());
    }

    #[test]
    fn grids() {
        let xs = GridSpec::Log { lo: 1e-3, hi: 1.0, points: 4 }.abscissae().unwrap();
        assert_eq!(xs.len(), 4);
        assert_eq!(xs[0], 1e-3);
        assert_eq!(xs[3], 1.0);
        assert_relative_eq!(xs[1], 1e-2, max_relative = 1e-12);
        assert!(GridSpec::Linear { lo: 1.0, hi: 0.0, points: 4 }.abscissae().is_err());
        assert!(GridSpec::Explicit(vec![0.0, 0.0]).abscissae().is_err());
    }

    #[test]
    fn curve_integration_helpers() {
        let curve = DensityCurve::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.0], CurveMeta::default()).unwrap();
        assert_relative_eq!(curve.trapezoid(), 1.0);
        assert_relative_eq!(curve.integrate_between(0.0, 1.0), 0.5);
        assert_relative_eq!(curve.integrate_between(0.5, 1.5), 0.75);
        assert_eq!(curve.interpolate(3.0), 0.0);
        assert!(DensityCurve::new(vec![0.0, 1.0], vec![-1.0, 0.0], CurveMeta::default()).is_err());
    }
}
