//! Merton losses and the ensemble-averaged portfolio loss distribution.
//!
//! An obligor defaults when its value at maturity falls below the face
//! value; the loss is the normalised shortfall. Under the one-factor
//! ensemble, conditional on the chi-square variable `z` and the common
//! factor `u`, obligors are independent and each loss has moments
//! `m_1k(z, u)`, `m_2k(z, u)` in closed form. The averaged loss density of a
//! finite portfolio replaces the conditional distribution of `L` by a
//! Gaussian with mean `M_1` and variance `M_2` and integrates over
//! `z ~ ChiSquare(N)` and `u ~ Normal(0, 1/N)`. For a homogeneous portfolio
//! the `K -> inf` limit collapses the Gaussian to a delta function on
//! `L = m_10(z, u)`.

use crate::ensemble_returns::{CurveMeta, DensityCurve, EnsembleParams, GridSpec};
use crate::numerics::{
    bracketed_root, gauss_laguerre, integrate_adaptive, ln_gamma, ln_std_normal_cdf, mills_ratio,
    std_normal_cdf, std_normal_interval, AdaptiveTol, QuadratureRule,
};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_741_78;

/// One credit contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obligor {
    /// Face value `F_k`, repaid at maturity.
    pub face_value: f64,
    /// Value `V_k0` at time zero.
    pub initial_value: f64,
    /// Drift `mu_k` per horizon unit.
    pub drift: f64,
    /// Volatility `rho_k` per square-root horizon unit.
    pub vol: f64,
}

impl Obligor {
    pub fn new(face_value: f64, initial_value: f64, drift: f64, vol: f64) -> Result<Self> {
        if !(face_value > 0.0) || !face_value.is_finite() {
            return Err(Error::InvalidParameter(format!("face value must be positive, got {face_value}")));
        }
        if !(initial_value > 0.0) || !initial_value.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "initial value must be positive, got {initial_value}"
            )));
        }
        if !drift.is_finite() {
            return Err(Error::InvalidParameter(format!("drift must be finite, got {drift}")));
        }
        if !(vol > 0.0) || !vol.is_finite() {
            return Err(Error::InvalidParameter(format!("volatility must be positive, got {vol}")));
        }
        Ok(Self {
            face_value,
            initial_value,
            drift,
            vol,
        })
    }
}

/// A list of obligors with face-value weights `f_k = F_k / sum_i F_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    obligors: Vec<Obligor>,
    weights: Vec<f64>,
}

impl Portfolio {
    pub fn new(obligors: Vec<Obligor>) -> Result<Self> {
        if obligors.is_empty() {
            return Err(Error::InvalidParameter("a portfolio needs at least one obligor".into()));
        }
        let total: f64 = obligors.iter().map(|o| o.face_value).sum();
        let weights = obligors.iter().map(|o| o.face_value / total).collect();
        Ok(Self { obligors, weights })
    }

    /// `k` copies of the same obligor.
    pub fn homogeneous(obligor: Obligor, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("a portfolio needs at least one obligor".into()));
        }
        Ok(Self {
            obligors: vec![obligor; k],
            weights: vec![1.0 / k as f64; k],
        })
    }

    pub fn obligors(&self) -> &[Obligor] {
        &self.obligors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.obligors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obligors.is_empty()
    }

    /// Distinct obligors with the sum of their weights and squared weights.
    fn classes(&self) -> Vec<ObligorClass> {
        let mut out: Vec<ObligorClass> = Vec::new();
        for (o, &f) in self.obligors.iter().zip(&self.weights) {
            match out.iter_mut().find(|c| c.obligor == *o) {
                Some(c) => {
                    c.weight += f;
                    c.weight_sq += f * f;
                }
                None => out.push(ObligorClass {
                    obligor: *o,
                    weight: f,
                    weight_sq: f * f,
                }),
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct ObligorClass {
    obligor: Obligor,
    weight: f64,
    weight_sq: f64,
}

/// Number of obligors in a homogeneous portfolio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PortfolioSize {
    Finite(usize),
    Infinite,
}

/// A portfolio whose obligors all share the same parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousSpec {
    pub f0: f64,
    pub v0: f64,
    pub mu0: f64,
    pub rho0: f64,
    pub size: PortfolioSize,
}

impl HomogeneousSpec {
    pub fn obligor(&self) -> Result<Obligor> {
        Obligor::new(self.f0, self.v0, self.mu0, self.rho0)
    }

    /// The finite portfolio; errors for [`PortfolioSize::Infinite`].
    pub fn portfolio(&self) -> Result<Portfolio> {
        match self.size {
            PortfolioSize::Finite(k) => Portfolio::homogeneous(self.obligor()?, k),
            PortfolioSize::Infinite => Err(Error::InvalidParameter(
                "an infinite portfolio has no finite obligor list".into(),
            )),
        }
    }
}

/// Unit in which maturity, drift and volatility are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HorizonUnit {
    /// 20 trading days.
    Month,
    /// 252 trading days.
    Year,
    TradingDay,
}

impl HorizonUnit {
    pub fn trading_days(&self) -> f64 {
        match self {
            HorizonUnit::Month => 20.0,
            HorizonUnit::Year => 252.0,
            HorizonUnit::TradingDay => 1.0,
        }
    }
}

/// Maturity `T` in horizon units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    t: f64,
    unit: HorizonUnit,
}

impl Horizon {
    pub fn new(t: f64, unit: HorizonUnit) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter(format!("maturity must be positive, got {t}")));
        }
        Ok(Self { t, unit })
    }

    /// A maturity of `days` trading days expressed in `unit`.
    pub fn from_trading_days(days: f64, unit: HorizonUnit) -> Result<Self> {
        Self::new(days / unit.trading_days(), unit)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn unit(&self) -> HorizonUnit {
        self.unit
    }
}

/// Normalised loss `(F - V_T)/F` if `V_T < F`, else zero.
pub fn individual_loss(v_t: f64, face: f64) -> Result<f64> {
    if !(face > 0.0) {
        return Err(Error::InvalidParameter(format!("face value must be positive, got {face}")));
    }
    if !(v_t >= 0.0) {
        return Err(Error::Domain(format!("terminal value must be nonnegative, got {v_t}")));
    }
    Ok(if v_t < face { (face - v_t) / face } else { 0.0 })
}

/// Face-value weighted portfolio loss `sum_k f_k L_k`.
pub fn portfolio_loss(losses: &[f64], weights: &[f64]) -> Result<f64> {
    if losses.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} losses but {} weights",
            losses.len(),
            weights.len()
        )));
    }
    Ok(losses.iter().zip(weights).map(|(l, f)| l * f).sum())
}

/// Value at maturity for a return `r` in log form:
/// `V(T) = V0 exp(r + (mu - rho^2/2) T)`.
pub fn terminal_value(r: f64, ob: &Obligor, h: &Horizon) -> f64 {
    ob.initial_value * (r + (ob.drift - 0.5 * ob.vol * ob.vol) * h.t()).exp()
}

/// Conditional loss moments of one obligor at fixed `(z, u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObligorMoments {
    /// `m_1 = E[L_k | z, u]`.
    pub m1: f64,
    /// `m_2 = E[L_k^2 | z, u]`.
    pub m2: f64,
    /// `ln m_1`, finite even where `m_1` underflows.
    pub ln_m1: f64,
    /// `d m_1 / d u`, nonnegative.
    pub dm1_du: f64,
    /// `ln(d m_1 / d u)`; `-inf` when `c = 0`.
    pub ln_dm1_du: f64,
}

fn check_z(z: f64) -> Result<()> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("chi-square variable z must be positive, got {z}")));
    }
    Ok(())
}

/// Closed-form conditional moments.
///
/// Given `(z, u)` the scaled log-value `V^ = (ln(V_T/V0) - (mu - rho^2/2)T)/sqrt(z)`
/// is Gaussian with mean `m = -sqrt(cT) rho u` and standard deviation
/// `s = rho sqrt(T(1-c)/N)`, and the loss is `1 - exp(sqrt(z)(V^ - F^))` for
/// `V^ < F^ = (ln(F/V0) - (mu - rho^2/2)T)/sqrt(z)`. With `d0 = (F^ - m)/s`
/// and `h = sqrt(z) s`:
///
/// ```text
/// m_1 = Phi(d0) - e^{h^2/2 - h d0} Phi(d0 - h)
///     = phi(d0) [R(-d0) - R(h - d0)]
/// m_2 = phi(d0) [R(-d0) - 2 R(h - d0) + R(2h - d0)]
/// dm_1/du = sqrt(cT) rho sqrt(z) phi(d0) R(h - d0)
/// ```
///
/// where `R` is the Mills ratio. The Mills form is used for `d0 <= 0`,
/// the tail where the direct form cancels.
pub fn obligor_moments(z: f64, u: f64, ob: &Obligor, params: &EnsembleParams, h: &Horizon) -> Result<ObligorMoments> {
    check_z(z)?;
    if !u.is_finite() {
        return Err(Error::Domain(format!("common factor u must be finite, got {u}")));
    }
    Ok(moments_unchecked(z, u, ob, params, h))
}

fn moments_unchecked(z: f64, u: f64, ob: &Obligor, params: &EnsembleParams, horizon: &Horizon) -> ObligorMoments {
    let t = horizon.t();
    let c = params.c();
    let n = params.n_eff();
    let rho = ob.vol;
    let b = z.sqrt();
    let drift = (ob.drift - 0.5 * rho * rho) * t;
    let f_hat = ((ob.face_value / ob.initial_value).ln() - drift) / b;
    let mean = -(c * t).sqrt() * rho * u;
    let s = rho * (t * (1.0 - c) / n).sqrt();
    let d0 = (f_hat - mean) / s;
    let h = b * s;
    let slope = (c * t).sqrt() * rho * b;

    if d0 <= 0.0 {
        let ln_phi = -0.5 * d0 * d0 - LN_SQRT_2PI;
        let r0 = mills_ratio(-d0);
        let r1 = mills_ratio(h - d0);
        let r2 = mills_ratio(2.0 * h - d0);
        let diff1 = (r0 - r1).max(0.0);
        let diff2 = (r0 - 2.0 * r1 + r2).max(0.0);
        let phi = ln_phi.exp();
        let ln_m1 = ln_phi + diff1.ln();
        let ln_dm1_du = slope.ln() + ln_phi + r1.ln();
        ObligorMoments {
            m1: phi * diff1,
            m2: phi * diff2,
            ln_m1,
            dm1_du: ln_dm1_du.exp(),
            ln_dm1_du,
        }
    } else {
        let p0 = std_normal_cdf(d0);
        let ln_e1 = 0.5 * h * h - h * d0 + ln_std_normal_cdf(d0 - h);
        let ln_e2 = 2.0 * h * h - 2.0 * h * d0 + ln_std_normal_cdf(d0 - 2.0 * h);
        let e1 = ln_e1.exp();
        let e2 = ln_e2.exp();
        let m1 = (p0 - e1).max(0.0);
        let m2 = (p0 - 2.0 * e1 + e2).max(0.0);
        let ln_dm1_du = slope.ln() + ln_e1;
        ObligorMoments {
            m1,
            m2,
            ln_m1: m1.ln(),
            dm1_du: ln_dm1_du.exp(),
            ln_dm1_du,
        }
    }
}

/// `m_jk(z, u)` for `j` in `{1, 2}`.
pub fn moment_mjk(j: u8, z: f64, u: f64, ob: &Obligor, params: &EnsembleParams, h: &Horizon) -> Result<f64> {
    let m = obligor_moments(z, u, ob, params, h)?;
    match j {
        1 => Ok(m.m1),
        2 => Ok(m.m2),
        _ => Err(Error::Domain(format!("moment order must be 1 or 2, got {j}"))),
    }
}

/// Portfolio-level conditional moments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateMoments {
    /// `M_1 = sum_k f_k m_1k`.
    pub m1: f64,
    /// `M_2 = sum_k f_k^2 (m_2k - m_1k^2)`.
    pub m2: f64,
    /// `d M_1 / d u`.
    pub dm1_du: f64,
}

const M2_ROUNDOFF: f64 = 1e-14;

fn aggregate(classes: &[ObligorClass], z: f64, u: f64, params: &EnsembleParams, h: &Horizon) -> Result<AggregateMoments> {
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    let mut dm1 = 0.0;
    for class in classes {
        let m = moments_unchecked(z, u, &class.obligor, params, h);
        m1 += class.weight * m.m1;
        m2 += class.weight_sq * (m.m2 - m.m1 * m.m1);
        dm1 += class.weight * m.dm1_du;
    }
    if m2 < 0.0 {
        if m2 < -M2_ROUNDOFF {
            return Err(Error::Consistency(format!(
                "conditional loss variance {m2:e} is negative at z = {z}, u = {u}"
            )));
        }
        m2 = 0.0;
    }
    Ok(AggregateMoments { m1, m2, dm1_du: dm1 })
}

/// `(M_1, M_2)` of the portfolio at fixed `(z, u)`.
///
/// Negative `M_2` from round-off above `-1e-14` is clipped to zero; more
/// negative values are reported as an internal-consistency error.
pub fn aggregate_moments(z: f64, u: f64, pf: &Portfolio, params: &EnsembleParams, h: &Horizon) -> Result<AggregateMoments> {
    check_z(z)?;
    aggregate(&pf.classes(), z, u, params, h)
}

/// Quadrature settings for the loss densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossQuadrature {
    /// Initial generalized Gauss–Laguerre order for the `z` integral.
    pub n_z: usize,
    /// Largest order tried while doubling.
    pub max_n_z: usize,
    /// Relative agreement required between successive orders.
    pub rel_tol: f64,
    /// Relative tolerance of the adaptive `u` integral.
    pub u_rel_tol: f64,
}

impl Default for LossQuadrature {
    fn default() -> Self {
        Self {
            n_z: 64,
            max_n_z: 2048,
            rel_tol: 1e-6,
            u_rel_tol: 1e-9,
        }
    }
}

type RuleCache = Mutex<HashMap<(u64, usize), Arc<QuadratureRule>>>;

fn laguerre_rule(alpha: f64, n: usize) -> Result<Arc<QuadratureRule>> {
    static CACHE: OnceLock<RuleCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (alpha.to_bits(), n);
    if let Some(rule) = cache.lock().expect("rule cache").get(&key) {
        return Ok(rule.clone());
    }
    let rule = Arc::new(gauss_laguerre(alpha, n)?);
    cache.lock().expect("rule cache").insert(key, rule.clone());
    Ok(rule)
}

/// `E_z[g(z)]` for `z ~ ChiSquare(N)`, via generalized Gauss–Laguerre in
/// `t = z/2` with order doubling until two orders agree.
fn chi_square_expectation<G>(n_eff: f64, cfg: &LossQuadrature, context: &str, g: G) -> Result<f64>
where
    G: Fn(f64) -> Result<f64> + Sync,
{
    let alpha = 0.5 * n_eff - 1.0;
    let norm = -ln_gamma(0.5 * n_eff);
    let eval = |order: usize| -> Result<f64> {
        let rule = laguerre_rule(alpha, order)?;
        let mut total = 0.0;
        for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
            total += w * g(2.0 * t)?;
        }
        Ok(total * norm.exp())
    };
    let mut order = cfg.n_z.max(1);
    let mut previous = eval(order)?;
    loop {
        let next_order = order * 2;
        if next_order > cfg.max_n_z {
            let last = previous;
            return Err(Error::Quadrature {
                context: format!("{context}: Gauss-Laguerre order {order} reached the limit {}", cfg.max_n_z),
                last,
                previous: f64::NAN,
            });
        }
        let current = eval(next_order)?;
        if (current - previous).abs() <= cfg.rel_tol * current.abs() || (current == 0.0 && previous == 0.0) {
            return Ok(current);
        }
        if next_order * 2 > cfg.max_n_z {
            return Err(Error::Quadrature {
                context: format!("{context}: Gauss-Laguerre up to order {next_order}"),
                last: current,
                previous,
            });
        }
        previous = current;
        order = next_order;
    }
}

fn u_extent(n_eff: f64) -> f64 {
    20.0 / n_eff.sqrt()
}

/// Break points for integrating a function of `u` sharply concentrated
/// where `M_1(z, u) = target`, on top of a coarse grid over the Gaussian
/// weight of `u`.
fn u_breaks(classes: &[ObligorClass], z: f64, target: f64, params: &EnsembleParams, h: &Horizon) -> Result<Vec<f64>> {
    let n = params.n_eff();
    let ext = u_extent(n);
    let sd = 1.0 / n.sqrt();
    let mut breaks: Vec<f64> = vec![-ext, -6.0 * sd, -3.0 * sd, -sd, 0.0, sd, 3.0 * sd, 6.0 * sd, ext];
    let at = |u: f64| aggregate(classes, z, u, params, h);
    let lo = at(-ext)?;
    let hi = at(ext)?;
    if lo.m1 < target && target < hi.m1 && params.c() > 0.0 {
        let u0 = bracketed_root(|u| at(u).map(|m| m.m1 - target).unwrap_or(f64::NAN), -ext, ext, 1e-14)?;
        let m = at(u0)?;
        let width = if m.dm1_du > 0.0 {
            m.m2.sqrt().max(1e-12) / m.dm1_du
        } else {
            sd
        };
        for k in [-40.0, -12.0, -5.0, -2.0, -0.7, 0.0, 0.7, 2.0, 5.0, 12.0, 40.0] {
            let b = u0 + k * width;
            if b > -ext && b < ext {
                breaks.push(b);
            }
        }
    }
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (1.0 + b.abs()));
    Ok(breaks)
}

/// Adaptive `u` integral. Exhausting the panel budget while the last two
/// refinements agree to 1e-7 relative is round-off in a negligible
/// contribution and is accepted.
fn integrate_u<F: FnMut(f64) -> f64>(f: F, breaks: &[f64], rel: f64) -> Result<f64> {
    let tol = AdaptiveTol {
        rel,
        abs: 1e-280,
        max_panels: 4000,
    };
    match integrate_adaptive(f, breaks, tol) {
        Err(Error::Quadrature { last, previous, .. }) if (last - previous).abs() <= 1e-7 * last.abs() => Ok(last),
        other => other,
    }
}

fn gaussian_weight_u(u: f64, n_eff: f64) -> f64 {
    (0.5 * (n_eff / (2.0 * PI)).ln() - 0.5 * n_eff * u * u).exp()
}

const KERNEL_FLOOR: f64 = 1e-12;
const KERNEL_CUTOFF: f64 = 12.0;

fn kernel(l: f64, m: &AggregateMoments) -> f64 {
    let width = m.m2.sqrt().max(KERNEL_FLOOR);
    let dev = (l - m.m1) / width;
    if dev.abs() > KERNEL_CUTOFF {
        return 0.0;
    }
    (-0.5 * dev * dev - LN_SQRT_2PI).exp() / width
}

fn check_inputs(params: &EnsembleParams, h: &Horizon) -> Result<()> {
    // Both are validated on construction; re-check the invariant the density relies on.
    if !(params.c() < 1.0) || !(h.t() > 0.0) {
        return Err(Error::InvalidParameter("invalid ensemble parameters or horizon".into()));
    }
    Ok(())
}

/// Averaged loss density of a finite portfolio, to second order in `1/K`.
///
/// ```text
/// <p>(L) = E_{z ~ ChiSquare(N)} E_{u ~ Normal(0, 1/N)} [ Normal(L; M_1(z,u), M_2(z,u)) ]
/// ```
///
/// The Gaussian kernel puts some mass below `L = 0`; the density is
/// returned as is (not renormalised on `[0, 1]`). A kernel whose width
/// `sqrt(M_2)` falls below `1e-12` is replaced by one of width `1e-12`, and
/// contributions further than 12 widths from `M_1` are dropped.
pub fn loss_density(l: f64, pf: &Portfolio, params: &EnsembleParams, h: &Horizon, cfg: &LossQuadrature) -> Result<f64> {
    LossModel::new(pf, params, h, cfg)?.density(l)
}

/// Probability `P(lo < L < hi)` under the finite-portfolio density; either
/// bound may be infinite. The full-line mass is one by construction.
pub fn loss_mass(lo: f64, hi: f64, pf: &Portfolio, params: &EnsembleParams, h: &Horizon, cfg: &LossQuadrature) -> Result<f64> {
    LossModel::new(pf, params, h, cfg)?.mass(lo, hi)
}

/// Finite-portfolio density evaluator; holds the obligor classes so a
/// curve does not regroup the portfolio for every abscissa.
#[derive(Debug, Clone)]
pub struct LossModel {
    classes: Vec<ObligorClass>,
    params: EnsembleParams,
    horizon: Horizon,
    cfg: LossQuadrature,
}

impl LossModel {
    pub fn new(pf: &Portfolio, params: &EnsembleParams, h: &Horizon, cfg: &LossQuadrature) -> Result<Self> {
        check_inputs(params, h)?;
        Ok(Self {
            classes: pf.classes(),
            params: *params,
            horizon: *h,
            cfg: *cfg,
        })
    }

    pub fn density(&self, l: f64) -> Result<f64> {
        if !l.is_finite() {
            return Err(Error::Domain(format!("loss must be finite, got {l}")));
        }
        let n = self.params.n_eff();
        chi_square_expectation(n, &self.cfg, "loss density", |z| {
            let breaks = u_breaks(&self.classes, z, l, &self.params, &self.horizon)?;
            let mut failure = None;
            let value = integrate_u(
                |u| match aggregate(&self.classes, z, u, &self.params, &self.horizon) {
                    Ok(m) => gaussian_weight_u(u, n) * kernel(l, &m),
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                },
                &breaks,
                self.cfg.u_rel_tol,
            )?;
            match failure {
                Some(e) => Err(e),
                None => Ok(value),
            }
        })
    }

    pub fn mass(&self, lo: f64, hi: f64) -> Result<f64> {
        if !(hi > lo) {
            return Err(Error::Domain(format!("empty loss interval [{lo}, {hi}]")));
        }
        let n = self.params.n_eff();
        let interval = |m: &AggregateMoments| {
            let width = m.m2.sqrt().max(KERNEL_FLOOR);
            std_normal_interval((lo - m.m1) / width, (hi - m.m1) / width)
        };
        chi_square_expectation(n, &self.cfg, "loss mass", |z| {
            let mut breaks = vec![];
            for target in [lo, hi] {
                if target.is_finite() {
                    breaks.extend(u_breaks(&self.classes, z, target, &self.params, &self.horizon)?);
                }
            }
            if breaks.is_empty() {
                let ext = u_extent(n);
                breaks = vec![-ext, 0.0, ext];
            }
            breaks.sort_by(|a, b| a.total_cmp(b));
            breaks.dedup();
            let mut failure = None;
            let value = integrate_u(
                |u| match aggregate(&self.classes, z, u, &self.params, &self.horizon) {
                    Ok(m) => gaussian_weight_u(u, n) * interval(&m),
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                },
                &breaks,
                self.cfg.u_rel_tol,
            )?;
            match failure {
                Some(e) => Err(e),
                None => Ok(value),
            }
        })
    }

    /// Full-line mean `E[M_1]`, equal to the exact expected portfolio loss.
    pub fn mean(&self) -> Result<f64> {
        let n = self.params.n_eff();
        let ext = u_extent(n);
        let sd = 1.0 / n.sqrt();
        let breaks: Vec<f64> = (-8..=8).map(|i| i as f64 * sd).chain([-ext, ext]).collect();
        let mut breaks = breaks;
        breaks.sort_by(|a, b| a.total_cmp(b));
        chi_square_expectation(n, &self.cfg, "loss mean", |z| {
            let mut failure = None;
            let value = integrate_u(
                |u| match aggregate(&self.classes, z, u, &self.params, &self.horizon) {
                    Ok(m) => gaussian_weight_u(u, n) * m.m1,
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                },
                &breaks,
                self.cfg.u_rel_tol,
            )?;
            match failure {
                Some(e) => Err(e),
                None => Ok(value),
            }
        })
    }

    /// Density tabulated on `grid`, abscissae evaluated in parallel.
    pub fn curve(&self, grid: &GridSpec) -> Result<DensityCurve> {
        let xs = grid.abscissae()?;
        let values = xs.par_iter().map(|&l| self.density(l)).collect::<Result<Vec<_>>>()?;
        DensityCurve::new(
            xs,
            values,
            CurveMeta {
                label: format!("averaged loss density, {} obligor classes", self.classes.len()),
                c: Some(self.params.c()),
                n_eff: Some(self.params.n_eff()),
                horizon: Some(self.horizon.t()),
                grid: Some(grid.clone()),
            },
        )
    }
}

/// Location of `l` relative to the reachable conditional losses at one `z`.
enum LimitRoot {
    /// `m_10(z, u) > l` for every admissible `u`.
    Below,
    /// `m_10(z, u) < l` for every admissible `u`.
    Above,
    At(f64),
}

/// Root `u0` of `m_10(z, u) = l`, solved for `ln m_10` to keep deep-tail
/// roots well conditioned.
fn limit_root(z: f64, l: f64, ob: &Obligor, params: &EnsembleParams, h: &Horizon) -> Result<LimitRoot> {
    let target = l.ln();
    let f = |u: f64| {
        let m = moments_unchecked(z, u, ob, params, h);
        m.ln_m1.max(-745.0) - target
    };
    let mut lo = -1.0;
    let mut hi = 1.0;
    let limit = 1e4;
    while f(lo) > 0.0 {
        lo *= 2.0;
        if lo < -limit {
            return Ok(LimitRoot::Below);
        }
    }
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > limit {
            return Ok(LimitRoot::Above);
        }
    }
    bracketed_root(f, lo, hi, 1e-14).map(LimitRoot::At)
}

fn check_limit_inputs(l: f64, params: &EnsembleParams, h: &Horizon) -> Result<()> {
    if !(l > 0.0 && l < 1.0) {
        return Err(Error::Domain(format!("limit density needs 0 < L < 1, got {l}")));
    }
    if !(params.c() > 0.0) {
        return Err(Error::InvalidParameter(
            "the infinite-portfolio limit needs a positive mean correlation".into(),
        ));
    }
    check_inputs(params, h)
}

/// Infinite-portfolio limit of the averaged loss density for a homogeneous
/// portfolio:
///
/// ```text
/// <p>_inf(L) = E_{z ~ ChiSquare(N)} [ sqrt(N / 2 pi) exp(-N u0^2 / 2) / |d m_10/du (z, u0)| ],
///     m_10(z, u0) = L.
/// ```
///
/// `z` nodes at which `L` is out of reach contribute zero. Requires `c > 0`
/// (at `c = 0` the conditional loss does not depend on `u`).
pub fn limit_loss_density(l: f64, spec: &HomogeneousSpec, params: &EnsembleParams, h: &Horizon, cfg: &LossQuadrature) -> Result<f64> {
    check_limit_inputs(l, params, h)?;
    let ob = spec.obligor()?;
    let n = params.n_eff();
    let ln_norm = 0.5 * (n / (2.0 * PI)).ln();
    chi_square_expectation(n, cfg, "limit loss density", |z| {
        Ok(match limit_root(z, l, &ob, params, h)? {
            LimitRoot::At(u0) => {
                let m = moments_unchecked(z, u0, &ob, params, h);
                (ln_norm - 0.5 * n * u0 * u0 - m.ln_dm1_du).exp()
            }
            LimitRoot::Below | LimitRoot::Above => 0.0,
        })
    })
}

/// Distribution function of the infinite-portfolio loss,
/// `P(L < l) = E_z[Phi(sqrt(N) u0(z))]`, and its complement computed
/// without cancellation.
pub fn limit_loss_cdf(l: f64, spec: &HomogeneousSpec, params: &EnsembleParams, h: &Horizon, cfg: &LossQuadrature) -> Result<(f64, f64)> {
    check_limit_inputs(l, params, h)?;
    let ob = spec.obligor()?;
    let n = params.n_eff();
    let side = |upper: bool| {
        chi_square_expectation(n, cfg, "limit loss distribution", |z| {
            Ok(match limit_root(z, l, &ob, params, h)? {
                LimitRoot::At(u0) => std_normal_cdf(if upper { -n.sqrt() * u0 } else { n.sqrt() * u0 }),
                LimitRoot::Below => if upper { 1.0 } else { 0.0 },
                LimitRoot::Above => if upper { 0.0 } else { 1.0 },
            })
        })
    };
    Ok((side(false)?, side(true)?))
}

/// [`limit_loss_density`] on a grid; abscissae outside `(0, 1)` get zero.
pub fn limit_loss_curve(grid: &GridSpec, spec: &HomogeneousSpec, params: &EnsembleParams, h: &Horizon, cfg: &LossQuadrature) -> Result<DensityCurve> {
    let xs = grid.abscissae()?;
    let values = xs
        .par_iter()
        .map(|&l| {
            if l > 0.0 && l < 1.0 {
                limit_loss_density(l, spec, params, h, cfg)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    DensityCurve::new(
        xs,
        values,
        CurveMeta {
            label: "limiting loss density, infinite homogeneous portfolio".into(),
            c: Some(params.c()),
            n_eff: Some(params.n_eff()),
            horizon: Some(h.t()),
            grid: Some(grid.clone()),
        },
    )
}

/// `P(L > threshold)` in the infinite-portfolio limit.
pub fn limit_tail_mass(threshold: f64, spec: &HomogeneousSpec, params: &EnsembleParams, h: &Horizon, cfg: &LossQuadrature) -> Result<f64> {
    limit_loss_cdf(threshold, spec, params, h, cfg).map(|(_, upper)| upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn monthly() -> (Obligor, EnsembleParams, Horizon) {
        (
            Obligor::new(75.0, 100.0, 0.013, 0.1).unwrap(),
            EnsembleParams::new(0.26, 4.2).unwrap(),
            Horizon::new(1.0, HorizonUnit::Month).unwrap(),
        )
    }

    #[test]
    fn individual_losses() {
        assert_eq!(individual_loss(100.0, 75.0).unwrap(), 0.0);
        assert_eq!(individual_loss(0.0, 75.0).unwrap(), 1.0);
        assert_relative_eq!(individual_loss(50.0, 75.0).unwrap(), 1.0 / 3.0);
        assert!(individual_loss(-1.0, 75.0).is_err());
    }

    #[test]
    fn portfolio_losses() {
        let pf = Portfolio::new(vec![Obligor::new(75.0, 100.0, 0.0, 0.1).unwrap(); 2]).unwrap();
        assert_eq!(portfolio_loss(&[0.0, 0.0], pf.weights()).unwrap(), 0.0);
        assert_eq!(portfolio_loss(&[1.0, 1.0], pf.weights()).unwrap(), 1.0);
        assert_eq!(portfolio_loss(&[1.0, 0.0], pf.weights()).unwrap(), 0.5);
        assert!(portfolio_loss(&[1.0], pf.weights()).is_err());
    }

    #[test]
    fn weights_are_normalised() {
        let obligors = (1..=7)
            .map(|i| Obligor::new(10.0 * i as f64, 100.0, 0.01, 0.2).unwrap())
            .collect();
        let pf = Portfolio::new(obligors).unwrap();
        assert!((pf.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(pf.weights().iter().all(|&f| f > 0.0));
    }

    #[test]
    fn terminal_values() {
        let h = Horizon::new(1.0, HorizonUnit::Month).unwrap();
        let ob = Obligor::new(75.0, 100.0, 0.005, 0.1).unwrap();
        assert_relative_eq!(terminal_value(0.0, &ob, &h), 100.0, max_relative = 1e-15);
        let (ob, _, h) = monthly();
        assert_relative_eq!(terminal_value(0.0, &ob, &h), 100.0 * 0.008f64.exp(), max_relative = 1e-14);
        let r = -0.137;
        let v = terminal_value(r, &ob, &h);
        let back = (v / ob.initial_value).ln() - (ob.drift - 0.5 * ob.vol * ob.vol) * h.t();
        assert!((back - r).abs() < 1e-12);
    }

    #[test]
    fn trading_day_conversion() {
        let h = Horizon::from_trading_days(20.0, HorizonUnit::Month).unwrap();
        assert_eq!(h.t(), 1.0);
        let h = Horizon::from_trading_days(252.0, HorizonUnit::Year).unwrap();
        assert_eq!(h.t(), 1.0);
        assert!(Horizon::new(0.0, HorizonUnit::Year).is_err());
    }

    #[test]
    fn vanishing_default_probability() {
        let (_, params, _) = monthly();
        let h = Horizon::new(0.01, HorizonUnit::Month).unwrap();
        let ob = Obligor::new(1e-6 * 100.0, 100.0, 0.013, 0.1).unwrap();
        let m1 = moment_mjk(1, 1.0, 0.0, &ob, &params, &h).unwrap();
        assert!(m1.abs() < 1e-12);
    }

    #[test]
    fn u_irrelevant_without_correlation() {
        let (ob, _, h) = monthly();
        let params = EnsembleParams::new(0.0, 4.2).unwrap();
        for j in [1u8, 2] {
            let a = moment_mjk(j, 3.0, 0.0, &ob, &params, &h).unwrap();
            let b = moment_mjk(j, 3.0, 5.0, &ob, &params, &h).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn homogeneous_aggregation() {
        let (ob, params, h) = monthly();
        let k = 10;
        let pf = Portfolio::homogeneous(ob, k).unwrap();
        let (z, u) = (6.0, 1.3);
        let m = obligor_moments(z, u, &ob, &params, &h).unwrap();
        let agg = aggregate_moments(z, u, &pf, &params, &h).unwrap();
        assert_relative_eq!(agg.m1, m.m1, max_relative = 1e-12);
        assert_relative_eq!(agg.m2, (m.m2 - m.m1 * m.m1) / k as f64, max_relative = 1e-10);
        let single = Portfolio::homogeneous(ob, 1).unwrap();
        let agg = aggregate_moments(z, u, &single, &params, &h).unwrap();
        assert_relative_eq!(agg.m2, m.m2 - m.m1 * m.m1, max_relative = 1e-12);
    }

    #[test]
    fn mixed_portfolio_groups_classes() {
        let (ob, params, h) = monthly();
        let other = Obligor::new(50.0, 100.0, 0.02, 0.15).unwrap();
        let pf = Portfolio::new(vec![ob, other, ob]).unwrap();
        let agg = aggregate_moments(5.0, 0.4, &pf, &params, &h).unwrap();
        let (mut m1, mut m2) = (0.0, 0.0);
        for (o, f) in pf.obligors().iter().zip(pf.weights()) {
            let m = obligor_moments(5.0, 0.4, o, &params, &h).unwrap();
            m1 += f * m.m1;
            m2 += f * f * (m.m2 - m.m1 * m.m1);
        }
        assert_relative_eq!(agg.m1, m1, max_relative = 1e-13);
        assert_relative_eq!(agg.m2, m2, max_relative = 1e-12);
    }

    #[test]
    fn limit_density_domain() {
        let (_, params, h) = monthly();
        let spec = HomogeneousSpec {
            f0: 75.0,
            v0: 100.0,
            mu0: 0.013,
            rho0: 0.1,
            size: PortfolioSize::Infinite,
        };
        let cfg = LossQuadrature::default();
        assert!(limit_loss_density(0.0, &spec, &params, &h, &cfg).is_err());
        assert!(limit_loss_density(1.0, &spec, &params, &h, &cfg).is_err());
        let zero_c = EnsembleParams::new(0.0, 4.2).unwrap();
        assert!(limit_loss_density(0.1, &spec, &zero_c, &h, &cfg).is_err());
        let near_one = limit_loss_density(0.999, &spec, &params, &h, &cfg).unwrap();
        let inner = limit_loss_density(0.05, &spec, &params, &h, &cfg).unwrap();
        assert!(near_one < 1e-6 * inner);
    }
}
