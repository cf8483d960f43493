//! Brute-force simulation of the ensemble model and empirical loss
//! densities.
//!
//! Each sample draws `z ~ ChiSquare(N)`, one common and `K` idiosyncratic
//! standard normals, forms the returns
//! `r_k = rho_k sqrt(T) sqrt(z/N) (sqrt(c) xi_0 + sqrt(1-c) xi_k)`, maps them
//! to terminal values and accumulates the weighted loss. Samples are drawn
//! in fixed-size batches, each with its own generator stream derived from
//! `(seed, batch index)`, so results do not depend on the thread count.

use crate::ensemble_returns::{stream_rng, DensityCurve, EnsembleParams, SAMPLE_BATCH};
use crate::portfolio_loss::{Horizon, Portfolio};
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Sample count, seed and batch size of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_samples: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl SimConfig {
    pub fn new(num_samples: usize, seed: u64) -> Result<Self> {
        Self::with_batch_size(num_samples, seed, SAMPLE_BATCH)
    }

    pub fn with_batch_size(num_samples: usize, seed: u64, batch_size: usize) -> Result<Self> {
        if num_samples == 0 {
            return Err(Error::InvalidParameter("number of samples must be at least 1".into()));
        }
        if batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        Ok(Self {
            num_samples,
            seed,
            batch_size,
        })
    }

    fn batches(&self) -> usize {
        self.num_samples.div_ceil(self.batch_size)
    }

    fn batch_len(&self, b: usize) -> usize {
        self.batch_size.min(self.num_samples - b * self.batch_size)
    }
}

/// Simulated portfolio losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSamples {
    pub values: Vec<f64>,
    pub config: SimConfig,
    /// SHA-256 of the portfolio, ensemble parameters and horizon.
    pub fingerprint: String,
}

/// Hex SHA-256 over the numeric inputs of a simulation.
pub fn fingerprint(pf: &Portfolio, params: &EnsembleParams, h: &Horizon) -> String {
    let mut hasher = Sha256::new();
    for (o, f) in pf.obligors().iter().zip(pf.weights()) {
        for x in [o.face_value, o.initial_value, o.drift, o.vol, *f] {
            hasher.update(x.to_le_bytes());
        }
    }
    for x in [params.c(), params.n_eff(), h.t()] {
        hasher.update(x.to_le_bytes());
    }
    hasher.update(format!("{:?}", h.unit()).as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Per-obligor constants: default occurs when `r_k < threshold_k`, and the
/// loss is then `1 - exp(r_k - threshold_k)`.
struct LossSampler {
    chi: Gamma<f64>,
    n_eff: f64,
    common: f64,
    idio: f64,
    scale: Vec<f64>,
    threshold: Vec<f64>,
    weights: Vec<f64>,
}

impl LossSampler {
    fn new(pf: &Portfolio, params: &EnsembleParams, h: &Horizon) -> Result<Self> {
        let n = params.n_eff();
        let chi = Gamma::new(0.5 * n, 2.0)
            .map_err(|e| Error::InvalidParameter(format!("chi-square with N = {n}: {e}")))?;
        let t = h.t();
        let obligors = pf.obligors();
        Ok(Self {
            chi,
            n_eff: n,
            common: params.c().sqrt(),
            idio: (1.0 - params.c()).sqrt(),
            scale: obligors.iter().map(|o| o.vol * t.sqrt()).collect(),
            threshold: obligors
                .iter()
                .map(|o| (o.face_value / o.initial_value).ln() - (o.drift - 0.5 * o.vol * o.vol) * t)
                .collect(),
            weights: pf.weights().to_vec(),
        })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let z: f64 = self.chi.sample(rng);
        let amp = (z / self.n_eff).sqrt();
        let xi0: f64 = rng.sample(StandardNormal);
        let shared = self.common * xi0;
        let mut loss = 0.0;
        for k in 0..self.weights.len() {
            let e: f64 = rng.sample(StandardNormal);
            let r = self.scale[k] * amp * (shared + self.idio * e);
            let gap = r - self.threshold[k];
            if gap < 0.0 {
                loss += self.weights[k] * -gap.exp_m1();
            }
        }
        loss.clamp(0.0, 1.0)
    }

    fn run_batch<F: FnMut(f64)>(&self, cfg: &SimConfig, b: usize, mut sink: F) {
        let mut rng = stream_rng(cfg.seed, b as u64);
        for _ in 0..cfg.batch_len(b) {
            sink(self.draw(&mut rng));
        }
    }
}

/// Draw `cfg.num_samples` portfolio losses.
pub fn simulate_losses(pf: &Portfolio, params: &EnsembleParams, h: &Horizon, cfg: &SimConfig) -> Result<LossSamples> {
    let sampler = LossSampler::new(pf, params, h)?;
    let chunks: Vec<Vec<f64>> = (0..cfg.batches())
        .into_par_iter()
        .map(|b| {
            let mut out = Vec::with_capacity(cfg.batch_len(b));
            sampler.run_batch(cfg, b, |l| out.push(l));
            out
        })
        .collect();
    Ok(LossSamples {
        values: chunks.concat(),
        config: *cfg,
        fingerprint: fingerprint(pf, params, h),
    })
}

/// Histogram the losses without storing them; equal to
/// `histogram(&simulate_losses(..)?, bins)` for the same inputs.
pub fn simulate_histogram(pf: &Portfolio, params: &EnsembleParams, h: &Horizon, cfg: &SimConfig, bins: &BinSpec) -> Result<EmpiricalDensity> {
    let sampler = LossSampler::new(pf, params, h)?;
    let edges = bins.edges()?;
    let tallies: Vec<Tally> = (0..cfg.batches())
        .into_par_iter()
        .map(|b| {
            let mut tally = Tally::new(edges.len() - 1);
            sampler.run_batch(cfg, b, |l| tally.add(&edges, l, true));
            tally
        })
        .collect();
    let mut total = Tally::new(edges.len() - 1);
    for t in &tallies {
        total.merge(t);
    }
    EmpiricalDensity::from_tally(edges, total)
}

/// Bin layout of a histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BinSpec {
    Linear { lo: f64, hi: f64, bins: usize },
    Log { lo: f64, hi: f64, bins: usize },
    Edges(Vec<f64>),
}

impl Default for BinSpec {
    /// 200 log-spaced bins on `[1e-5, 1]`.
    fn default() -> Self {
        BinSpec::Log {
            lo: 1e-5,
            hi: 1.0,
            bins: 200,
        }
    }
}

impl BinSpec {
    pub fn edges(&self) -> Result<Vec<f64>> {
        let edges: Vec<f64> = match *self {
            BinSpec::Linear { lo, hi, bins } => {
                if bins == 0 || !(hi > lo) {
                    return Err(Error::InvalidParameter(format!("bad linear bins [{lo}, {hi}] x {bins}")));
                }
                (0..=bins).map(|i| lo + (hi - lo) * i as f64 / bins as f64).collect()
            }
            BinSpec::Log { lo, hi, bins } => {
                if bins == 0 || !(lo > 0.0) || !(hi > lo) {
                    return Err(Error::InvalidParameter(format!("bad log bins [{lo}, {hi}] x {bins}")));
                }
                let ratio = (hi / lo).ln();
                let mut e: Vec<f64> = (0..=bins).map(|i| lo * (ratio * i as f64 / bins as f64).exp()).collect();
                e[0] = lo;
                e[bins] = hi;
                e
            }
            BinSpec::Edges(ref e) => e.clone(),
        };
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("bin edges must be finite and strictly increasing".into()));
        }
        Ok(edges)
    }
}

#[derive(Debug, Clone)]
struct Tally {
    counts: Vec<u64>,
    zero: u64,
    below: u64,
    above: u64,
    total: u64,
}

impl Tally {
    fn new(bins: usize) -> Self {
        Self {
            counts: vec![0; bins],
            zero: 0,
            below: 0,
            above: 0,
            total: 0,
        }
    }

    fn add(&mut self, edges: &[f64], x: f64, separate_zero: bool) {
        self.total += 1;
        if separate_zero && x == 0.0 {
            self.zero += 1;
        } else if x < edges[0] {
            self.below += 1;
        } else if x > edges[edges.len() - 1] {
            self.above += 1;
        } else {
            let i = edges.partition_point(|&e| e <= x).clamp(1, edges.len() - 1);
            self.counts[i - 1] += 1;
        }
    }

    fn merge(&mut self, other: &Tally) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.zero += other.zero;
        self.below += other.below;
        self.above += other.above;
        self.total += other.total;
    }
}

/// Normalised histogram with Poisson standard errors.
///
/// `densities[i] = counts[i] / (total * width_i)`; exact zeros are counted
/// in `zero_count` and never enter a bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDensity {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub densities: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub total: u64,
    pub zero_count: u64,
    pub below_count: u64,
    pub above_count: u64,
}

impl EmpiricalDensity {
    /// Histogram of arbitrary values; with `separate_zero`, exact zeros
    /// form their own atom.
    pub fn from_values(values: &[f64], bins: &BinSpec, separate_zero: bool) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("cannot histogram an empty sample".into()));
        }
        let edges = bins.edges()?;
        let mut tally = Tally::new(edges.len() - 1);
        for &x in values {
            if !x.is_finite() {
                return Err(Error::Domain(format!("non-finite sample {x}")));
            }
            tally.add(&edges, x, separate_zero);
        }
        Self::from_tally(edges, tally)
    }

    fn from_tally(edges: Vec<f64>, tally: Tally) -> Result<Self> {
        if tally.total == 0 {
            return Err(Error::InvalidParameter("cannot histogram an empty sample".into()));
        }
        let n = tally.total as f64;
        let (densities, std_errors) = tally
            .counts
            .iter()
            .zip(edges.windows(2))
            .map(|(&c, w)| {
                let norm = n * (w[1] - w[0]);
                (c as f64 / norm, (c as f64).sqrt() / norm)
            })
            .unzip();
        Ok(Self {
            edges,
            counts: tally.counts,
            densities,
            std_errors,
            total: tally.total,
            zero_count: tally.zero,
            below_count: tally.below,
            above_count: tally.above,
        })
    }

    /// Rebuild from stored bin counts and totals.
    pub fn from_counts(edges: Vec<f64>, counts: Vec<u64>, total: u64, zero_count: u64) -> Result<Self> {
        if edges.len() != counts.len() + 1 {
            return Err(Error::Dimension(format!("{} edges for {} bins", edges.len(), counts.len())));
        }
        BinSpec::Edges(edges.clone()).edges()?;
        let binned: u64 = counts.iter().sum();
        if binned + zero_count > total {
            return Err(Error::Consistency(format!(
                "{binned} binned and {zero_count} zero samples exceed the total {total}"
            )));
        }
        let tally = Tally {
            counts,
            zero: zero_count,
            below: 0,
            above: total - binned - zero_count,
            total,
        };
        Self::from_tally(edges, tally)
    }

    /// Fraction of samples that fell in a bin.
    pub fn binned_fraction(&self) -> f64 {
        self.counts.iter().sum::<u64>() as f64 / self.total as f64
    }

    pub fn zero_fraction(&self) -> f64 {
        self.zero_count as f64 / self.total as f64
    }
}

/// Histogram of simulated losses; exact zeros are reported as an atom.
pub fn histogram(samples: &LossSamples, bins: &BinSpec) -> Result<EmpiricalDensity> {
    EmpiricalDensity::from_values(&samples.values, bins, true)
}

/// Thresholds of a density comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    /// Bins with fewer counts are excluded.
    pub min_count: u64,
    pub max_chi2_per_dof: f64,
    pub max_abs_z: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            min_count: 100,
            max_chi2_per_dof: 1.5,
            max_abs_z: 4.0,
        }
    }
}

/// One bin of a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinComparison {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub observed: f64,
    pub expected: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub bins: Vec<BinComparison>,
    pub chi2: f64,
    pub dof: usize,
    pub chi2_per_dof: f64,
    pub max_abs_z: f64,
    pub pass: bool,
}

/// Compare a histogram with expected bin masses (probability of each bin,
/// not density). The z-score of a bin is the observed minus expected
/// density over the Poisson standard error of the observed count.
pub fn compare_bin_masses(emp: &EmpiricalDensity, masses: &[f64], cfg: &CompareConfig) -> Result<ComparisonReport> {
    if masses.len() != emp.counts.len() {
        return Err(Error::Dimension(format!(
            "{} expected masses for {} bins",
            masses.len(),
            emp.counts.len()
        )));
    }
    let mut bins = Vec::new();
    for (i, w) in emp.edges.windows(2).enumerate() {
        let count = emp.counts[i];
        if count < cfg.min_count.max(1) || !masses[i].is_finite() {
            continue;
        }
        let expected = masses[i] / (w[1] - w[0]);
        bins.push(BinComparison {
            lo: w[0],
            hi: w[1],
            count,
            observed: emp.densities[i],
            expected,
            z: (emp.densities[i] - expected) / emp.std_errors[i],
        });
    }
    if bins.is_empty() {
        return Err(Error::Domain(format!(
            "no bin has at least {} counts to compare",
            cfg.min_count
        )));
    }
    let chi2: f64 = bins.iter().map(|b| b.z * b.z).sum();
    let dof = bins.len();
    let chi2_per_dof = chi2 / dof as f64;
    let max_abs_z = bins.iter().map(|b| b.z.abs()).fold(0.0, f64::max);
    Ok(ComparisonReport {
        pass: chi2_per_dof < cfg.max_chi2_per_dof && max_abs_z < cfg.max_abs_z,
        bins,
        chi2,
        dof,
        chi2_per_dof,
        max_abs_z,
    })
}

/// Compare a histogram with a tabulated density; bins are restricted to
/// those inside the curve's abscissa range and the expected mass of a bin
/// is the trapezoid integral of the curve over it.
pub fn compare_density(emp: &EmpiricalDensity, analytic: &DensityCurve, cfg: &CompareConfig) -> Result<ComparisonReport> {
    let (a, b) = match (analytic.abscissae.first(), analytic.abscissae.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::InvalidParameter("empty analytic curve".into())),
    };
    let (lo, hi) = (emp.edges[0], emp.edges[emp.edges.len() - 1]);
    if hi <= a || lo >= b {
        return Err(Error::Domain(format!(
            "histogram range [{lo}, {hi}] does not overlap the curve range [{a}, {b}]"
        )));
    }
    let masses: Vec<f64> = emp
        .edges
        .windows(2)
        .map(|w| {
            if w[0] >= a && w[1] <= b {
                analytic.integrate_between(w[0], w[1])
            } else {
                f64::NAN
            }
        })
        .collect();
    compare_bin_masses(emp, &masses, cfg)
}
