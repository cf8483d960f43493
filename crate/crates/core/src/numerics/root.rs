use crate::{Error, Result};

/// Root of `f` on `[lo, hi]` by a bisection/secant hybrid (Brent's method).
///
/// Stops when `|f(u)| <= tol` or the bracket is narrower than `tol`.
/// Requires a sign change; otherwise the caller should widen the bracket.
pub fn bracketed_root<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("root tolerance must be positive, got {tol}")));
    }
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa.is_nan() || fb.is_nan() {
        return Err(Error::Domain("function is NaN at a bracket end".into()));
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoSignChange {
            lo,
            hi,
            f_lo: fa,
            f_hi: fb,
        });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..500 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if fb.abs() <= tol || xm.abs() <= tol1 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Err(Error::NoConvergence(format!(
        "bracketed root on [{lo}, {hi}] after 500 iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_and_cubic() {
        let r = bracketed_root(|u| u - 2.0, 0.0, 5.0, 1e-12).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
        let r = bracketed_root(|u| u * u * u - 1.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - 1.0).abs() < 1e-11);
    }

    #[test]
    fn no_sign_change_is_reported() {
        let err = bracketed_root(|u| u * u + 1.0, -1.0, 1.0, 1e-12).unwrap_err();
        assert!(matches!(err, Error::NoSignChange { .. }));
    }

    #[test]
    fn deterministic() {
        let f = |u: f64| u.tanh() - 0.3;
        let a = bracketed_root(f, -4.0, 9.0, 1e-14).unwrap();
        let b = bracketed_root(f, -4.0, 9.0, 1e-14).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!((a - 0.3f64.atanh()).abs() < 1e-13);
    }
}
