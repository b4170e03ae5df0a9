//! Gauss–Hermite rules normalized for expectations over a standard normal.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Nodes `u_i` and weights `w_i` with `E[f(N(0,1))] ≈ Σ w_i f(u_i)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds an `n`-point rule from scratch. Prefer [`gauss_hermite`], which caches.
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "Gauss-Hermite rule needs at least one node");
        let (x, w) = physicists_rule(n);
        let sqrt2 = std::f64::consts::SQRT_2;
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        GaussHermite {
            nodes: x.iter().map(|xi| sqrt2 * xi).collect(),
            weights: w.iter().map(|wi| wi * inv_sqrt_pi).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(U)]` for `U ~ N(0,1)`.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&u, &w)| w * f(u)).sum()
    }
}

/// Cached rule with `n` nodes.
pub fn gauss_hermite(n: usize) -> Arc<GaussHermite> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
    map.entry(n).or_insert_with(|| Arc::new(GaussHermite::new(n))).clone()
}

// Weight e^{-x^2}. Orthonormal recurrence; roots bracketed by a downward
// sign scan from the bound √(2n+1), then polished by safeguarded Newton.
fn physicists_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    // Root spacing is smallest near the origin, about π/√(2n).
    let h = 0.05 * std::f64::consts::PI / (2.0 * nf + 1.0).sqrt();
    let mut hi = (2.0 * nf + 1.0).sqrt() + h;
    let mut f_hi = hermite(n, hi).0;
    for i in 0..m {
        let root = if n % 2 == 1 && i == m - 1 {
            0.0
        } else {
            let mut lo = hi - h;
            let mut f_lo = hermite(n, lo).0;
            while f_lo.signum() == f_hi.signum() {
                hi = lo;
                f_hi = f_lo;
                lo -= h;
                f_lo = hermite(n, lo).0;
            }
            let r = polish(n, lo, hi, f_lo);
            hi = lo;
            f_hi = f_lo;
            r
        };
        let ln_pp = hermite(n, root).1;
        x[i] = root;
        x[n - 1 - i] = -root;
        w[i] = (std::f64::consts::LN_2 - 2.0 * ln_pp).exp();
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

// Returns `(p_n(z) / scale, ln |p_n'(z)|, p_n(z) / p_n'(z))` for the
// orthonormal polynomials. The values reach e^{z²/2} near the largest roots,
// so they are rescaled and only the sign of the first component is kept.
fn hermite(n: usize, z: f64) -> (f64, f64, f64) {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    const RESCALE: f64 = 1e150;
    let mut p1 = PIM4;
    let mut p2 = 0.0;
    let mut ln_scale = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
        if p1.abs() > RESCALE {
            p1 /= RESCALE;
            p2 /= RESCALE;
            ln_scale += RESCALE.ln();
        }
    }
    let pp = (2.0 * n as f64).sqrt() * p2;
    (p1, pp.abs().ln() + ln_scale, p1 / pp)
}

// Newton on p_n/p_n' inside the bracket, bisecting whenever a step leaves it.
fn polish(n: usize, mut lo: f64, mut hi: f64, f_lo: f64) -> f64 {
    let mut z = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (f, _, ratio) = hermite(n, z);
        if f == 0.0 {
            return z;
        }
        if f.signum() == f_lo.signum() {
            lo = z;
        } else {
            hi = z;
        }
        let next = z - ratio;
        let next = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        let done = (next - z).abs() <= 1e-15 * z.abs().max(1.0);
        z = next;
        if done {
            break;
        }
    }
    z
}
