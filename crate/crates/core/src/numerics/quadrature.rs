//! Gaussian quadrature rules built by Golub–Welsch and an adaptive
//! Gauss–Legendre integrator for finite intervals.
//!
//! Nodes come from the eigenvalues of the Jacobi matrix and are then
//! polished by Newton's method on the orthonormal three-term recurrence.
//! Weights are `1 / sum_k p_k(x)^2` evaluated in log space, so rules of
//! high order do not overflow; nodes whose weight underflows to zero are
//! dropped from the rule.

use crate::{Error, Result};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Family of a [`QuadratureRule`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuleKind {
    /// Weight `t^alpha e^{-t}` on `(0, inf)`.
    GeneralizedLaguerre { alpha: f64 },
    /// Weight `e^{-scale u^2}` on the real line.
    HermiteLike { scale: f64 },
    /// Unit weight on `[-1, 1]`.
    Legendre,
}

/// Nodes and weights of an `order`-point Gauss rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub kind: RuleKind,
    pub order: usize,
}

impl QuadratureRule {
    /// `sum_i w_i f(x_i)`, summed in node order.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Symmetric tridiagonal Jacobi matrix: `diag[k]` for `k < n` and
/// `off(k)` coupling `k-1` and `k`, needed up to `k = n`.
struct Jacobi<'a> {
    n: usize,
    diag: &'a dyn Fn(usize) -> f64,
    off: &'a dyn Fn(usize) -> f64,
    ln_mu0: f64,
}

/// Eigenvalues of a symmetric tridiagonal matrix (implicit QL, no vectors).
fn tridiagonal_eigenvalues(mut d: Vec<f64>, mut e: Vec<f64>) -> Result<Vec<f64>> {
    let n = d.len();
    if n == 0 {
        return Ok(d);
    }
    // e[i] couples i and i+1; e[n-1] = 0.
    e.resize(n, 0.0);
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::NoConvergence(
                    "tridiagonal QL iteration for quadrature nodes".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|a, b| a.total_cmp(b));
    Ok(d)
}

/// Evaluates `p_n(x)`, `p_n'(x)` (in a common arbitrary scale) and
/// `ln sum_{k<n} p_k(x)^2` for the orthonormal family of `jac`.
fn recurrence(jac: &Jacobi<'_>, x: f64) -> (f64, f64, f64) {
    let rescale = 1.0e150_f64;
    let mut ln_scale = -0.5 * jac.ln_mu0;
    let (mut p_prev, mut p) = (0.0, 1.0);
    let (mut dp_prev, mut dp) = (0.0, 0.0);
    let mut sum_sq = 0.0;
    for k in 0..jac.n {
        sum_sq += p * p;
        let a = (jac.diag)(k);
        let b_k = if k == 0 { 0.0 } else { (jac.off)(k) };
        let b_next = (jac.off)(k + 1);
        let p_next = ((x - a) * p - b_k * p_prev) / b_next;
        let dp_next = ((x - a) * dp + p - b_k * dp_prev) / b_next;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
        if p.abs() > rescale || dp.abs() > rescale {
            p /= rescale;
            p_prev /= rescale;
            dp /= rescale;
            dp_prev /= rescale;
            sum_sq /= rescale * rescale;
            ln_scale += rescale.ln();
        }
    }
    (p, dp, sum_sq.ln() + 2.0 * ln_scale)
}

fn gauss_rule(jac: Jacobi<'_>, kind: RuleKind) -> Result<QuadratureRule> {
    let n = jac.n;
    let d: Vec<f64> = (0..n).map(|k| (jac.diag)(k)).collect();
    let e: Vec<f64> = (1..n).map(|k| (jac.off)(k)).collect();
    let approx = tridiagonal_eigenvalues(d, e)?;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for x0 in approx {
        let mut x = x0;
        for _ in 0..8 {
            let (p, dp, _) = recurrence(&jac, x);
            if dp == 0.0 || !dp.is_finite() {
                break;
            }
            let step = p / dp;
            // Reject steps that would jump to a neighbouring zero.
            if !step.is_finite() || step.abs() > 1e-6 * (1.0 + x.abs()) {
                break;
            }
            x -= step;
            if step.abs() <= 4.0 * f64::EPSILON * (1.0 + x.abs()) {
                break;
            }
        }
        let (_, _, ln_sum) = recurrence(&jac, x);
        let w = (-ln_sum).exp();
        if w > 0.0 && w.is_finite() {
            nodes.push(x);
            weights.push(w);
        }
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        kind,
        order: n,
    })
}

/// Generalized Gauss–Laguerre rule for the weight `t^alpha e^{-t}` on `(0, inf)`.
pub fn gauss_laguerre(alpha: f64, n: usize) -> Result<QuadratureRule> {
    if !(alpha > -1.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("Laguerre alpha must exceed -1, got {alpha}")));
    }
    if n == 0 {
        return Err(Error::Domain("quadrature order must be at least 1".into()));
    }
    let diag = move |k: usize| 2.0 * k as f64 + alpha + 1.0;
    let off = move |k: usize| (k as f64 * (k as f64 + alpha)).sqrt();
    gauss_rule(
        Jacobi {
            n,
            diag: &diag,
            off: &off,
            ln_mu0: ln_gamma(alpha + 1.0),
        },
        RuleKind::GeneralizedLaguerre { alpha },
    )
}

/// Gauss–Hermite rule for the weight `e^{-scale u^2}` on the real line.
pub fn gauss_hermite_scaled(scale: f64, n: usize) -> Result<QuadratureRule> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Domain(format!("Hermite scale must be positive, got {scale}")));
    }
    if n == 0 {
        return Err(Error::Domain("quadrature order must be at least 1".into()));
    }
    let diag = |_: usize| 0.0;
    let off = |k: usize| (k as f64 / 2.0).sqrt();
    let mut rule = gauss_rule(
        Jacobi {
            n,
            diag: &diag,
            off: &off,
            ln_mu0: 0.5 * PI.ln(),
        },
        RuleKind::HermiteLike { scale },
    )?;
    let root = scale.sqrt();
    for x in rule.nodes.iter_mut() {
        *x /= root;
    }
    for w in rule.weights.iter_mut() {
        *w /= root;
    }
    Ok(rule)
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::Domain("quadrature order must be at least 1".into()));
    }
    let diag = |_: usize| 0.0;
    let off = |k: usize| {
        let k = k as f64;
        k / (4.0 * k * k - 1.0).sqrt()
    };
    gauss_rule(
        Jacobi {
            n,
            diag: &diag,
            off: &off,
            ln_mu0: 2f64.ln(),
        },
        RuleKind::Legendre,
    )
}

fn legendre15() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(15).expect("15-point Legendre rule"))
}

fn panel(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    half * legendre15().integrate(|t| f(mid + half * t))
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

fn refine(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, coarse: f64) -> Panel {
    let m = 0.5 * (a + b);
    let fine = panel(f, a, m) + panel(f, m, b);
    Panel {
        a,
        b,
        value: fine,
        err: (fine - coarse).abs(),
    }
}

/// Tolerances for [`integrate_adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveTol {
    pub rel: f64,
    pub abs: f64,
    pub max_panels: usize,
}

impl Default for AdaptiveTol {
    fn default() -> Self {
        Self {
            rel: 1e-10,
            abs: 0.0,
            max_panels: 4000,
        }
    }
}

/// Globally adaptive 15-point Gauss–Legendre integration over the
/// intervals delimited by `breaks` (sorted, at least two entries).
///
/// Each panel is compared with the sum over its two halves; the panel with
/// the largest discrepancy is bisected until the summed discrepancy falls
/// below `max(tol.abs, tol.rel * |I|)`.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    breaks: &[f64],
    tol: AdaptiveTol,
) -> Result<f64> {
    if breaks.len() < 2 {
        return Err(Error::Domain("adaptive integration needs an interval".into()));
    }
    let mut panels: Vec<Panel> = Vec::new();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(b > a) {
            continue;
        }
        let coarse = panel(&mut f, a, b);
        panels.push(refine(&mut f, a, b, coarse));
    }
    if panels.is_empty() {
        return Ok(0.0);
    }
    let mut last = f64::NAN;
    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.err).sum();
        if err <= tol.abs.max(tol.rel * total.abs()) || err == 0.0 {
            return Ok(total);
        }
        if panels.len() >= tol.max_panels {
            return Err(Error::Quadrature {
                context: format!("adaptive Gauss-Legendre, error estimate {err:e}"),
                last: total,
                previous: last,
            });
        }
        last = total;
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.err.total_cmp(&b.1.err))
            .expect("non-empty");
        let worst = panels.swap_remove(idx);
        let m = 0.5 * (worst.a + worst.b);
        let left_coarse = panel(&mut f, worst.a, m);
        let right_coarse = panel(&mut f, m, worst.b);
        panels.push(refine(&mut f, worst.a, m, left_coarse));
        panels.push(refine(&mut f, m, worst.b, right_coarse));
    }
}
