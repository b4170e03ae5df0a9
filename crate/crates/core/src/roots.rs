//! Scalar root finding used by the utility and heat-transform inverses.

use crate::error::{Error, Result};

const MAX_ITER: usize = 200;

/// Safeguarded Newton on a bracket `[lo, hi]` with `f(lo)` and `f(hi)` of
/// opposite sign. `fdf` returns `(f, f')`. A Newton step that leaves the
/// bracket or fails to halve it is replaced by bisection.
pub fn newton_bracketed(
    mut fdf: impl FnMut(f64) -> (f64, f64),
    mut lo: f64,
    mut hi: f64,
    x0: f64,
    context: &str,
) -> Result<f64> {
    let (flo, _) = fdf(lo);
    let (fhi, _) = fdf(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.is_nan() || fhi.is_nan() || flo.signum() == fhi.signum() {
        return Err(Error::Domain(format!("{context}: root not bracketed by [{lo}, {hi}]")));
    }
    let lo_sign = flo.signum();
    let mut x = if x0 > lo && x0 < hi { x0 } else { 0.5 * (lo + hi) };
    let mut last_width = (hi - lo).abs();
    for _ in 0..MAX_ITER {
        let (fx, dfx) = fdf(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == lo_sign {
            lo = x;
        } else {
            hi = x;
        }
        let width = (hi - lo).abs();
        let tol = 4.0 * f64::EPSILON * x.abs().max(1.0);
        let mut next = x - fx / dfx;
        let newton_ok = dfx != 0.0 && next.is_finite() && next > lo.min(hi) && next < lo.max(hi);
        if !newton_ok || width > 0.5 * last_width && (next - x).abs() > 0.5 * width {
            next = 0.5 * (lo + hi);
        }
        last_width = width;
        if (next - x).abs() <= tol || width <= tol {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
        context: context.to_string(),
    })
}

/// Expands `[x0 - step, x0 + step]` by doubling until `f` changes sign.
pub fn expand_bracket(mut f: impl FnMut(f64) -> f64, x0: f64, step: f64, context: &str) -> Result<(f64, f64)> {
    let mut lo = x0 - step;
    let mut hi = x0 + step;
    let mut flo = f(lo);
    let mut fhi = f(hi);
    let mut width = step;
    for _ in 0..MAX_ITER {
        if flo.is_finite() && fhi.is_finite() && flo.signum() != fhi.signum() {
            return Ok((lo, hi));
        }
        width *= 2.0;
        if flo.abs() < fhi.abs() || !fhi.is_finite() {
            lo -= width;
            flo = f(lo);
        } else {
            hi += width;
            fhi = f(hi);
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
        context: format!("{context}: bracket expansion"),
    })
}

/// Solves `ln Σ exp(c_i + k_i v) = target` for `v`, where all `k_i` are
/// nonzero and share a sign, so the left side is monotone with slope between
/// `min k` and `max k`. That slope bound gives an exact starting bracket.
pub fn solve_log_sum_exp(c: &[f64], k: &[f64], target: f64, context: &str) -> Result<f64> {
    let g = |v: f64| -> (f64, f64) {
        let m = c
            .iter()
            .zip(k)
            .map(|(ci, ki)| ci + ki * v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        let mut sk = 0.0;
        for (ci, ki) in c.iter().zip(k) {
            let e = (ci + ki * v - m).exp();
            s += e;
            sk += ki * e;
        }
        (m + s.ln() - target, sk / s)
    };
    let kmin = k.iter().cloned().fold(f64::INFINITY, f64::min);
    let kmax = k.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (g0, _) = g(0.0);
    if g0 == 0.0 {
        return Ok(0.0);
    }
    // The root satisfies g0 + slope * v = 0 for some slope in [kmin, kmax].
    let a = -g0 / kmin;
    let b = -g0 / kmax;
    let (lo, hi) = (a.min(b), a.max(b));
    let pad = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
    newton_bracketed(g, lo - pad, hi + pad, 0.5 * (lo + hi), context)
}
