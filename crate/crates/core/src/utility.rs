//! Terminal utility functions.
//!
//! Three of the four classes are finite sums `U(x) = Σ a_i x^{p_i}` with
//! `a_i p_i > 0` and `0 < p_i < 1`; they share one internal representation.
//! The fourth is specified through its inverse marginal `I(y) = Σ w_j y^{-s_j}`
//! and `U` is recovered by integrating `I^{-1}` from [`X_MIN`].

use serde::Serialize;

use crate::error::{ensure_positive, Error, Result};
use crate::numdiff;
use crate::roots::solve_log_sum_exp;

/// Lower limit of `U(x) = ∫_{X_MIN}^x I^{-1}(ξ) dξ` for inverse-marginal
/// utilities. Utilities are only defined up to a constant, so this fixes the
/// constant: `U(X_MIN) = 0` when every exponent is at least 1. Atoms with
/// exponent below 1 are bounded above and are anchored at `U(∞) = 0` instead;
/// see [`Utility::value_offset`].
pub const X_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityClass {
    Power,
    MixturePowers,
    PowerMeasure,
    InverseMarginalMeasure,
}

#[derive(Debug, Clone)]
enum Repr {
    Powers {
        ln_a: Vec<f64>,
        /// `ln(a_i p_i)`
        ln_ap: Vec<f64>,
        p: Vec<f64>,
    },
    InverseMarginal {
        ln_w: Vec<f64>,
        s: Vec<f64>,
        ln_y_min: f64,
    },
}

/// A concave increasing utility on `(0, ∞)`.
#[derive(Debug, Clone)]
pub struct Utility {
    class: UtilityClass,
    params: Vec<(f64, f64)>,
    repr: Repr,
}

/// `h = I(e^{-ξ})` together with `R`, `R'`, `R''` evaluated at `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalJet {
    pub h: f64,
    pub r: f64,
    pub r1: f64,
    pub r2: f64,
}

fn check_pairs(a: &[f64], b: &[f64], a_name: &str, b_name: &str) -> Result<()> {
    if a.is_empty() {
        return Err(Error::invalid(a_name, "at least one atom is required"));
    }
    if a.len() != b.len() {
        return Err(Error::invalid(
            b_name,
            format!("length {} does not match `{a_name}` length {}", b.len(), a.len()),
        ));
    }
    for (i, &v) in a.iter().enumerate() {
        ensure_positive(&format!("{a_name}[{i}]"), v)?;
    }
    Ok(())
}

fn check_exponent(name: &str, g: f64) -> Result<()> {
    if !g.is_finite() {
        return Err(Error::invalid(name, "must be finite"));
    }
    if g <= 0.0 {
        return Err(Error::invalid(
            name,
            format!("{g} is not in (0, 1); logarithmic and negative-power utilities are unsupported"),
        ));
    }
    if g >= 1.0 {
        return Err(Error::invalid(
            name,
            format!("{g} is not in (0, 1); utility would not be strictly concave"),
        ));
    }
    Ok(())
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + terms.map(|t| (t - m).exp()).sum::<f64>().ln()
}

// expm1(u)/u, continuous at 0.
fn exprel(u: f64) -> f64 {
    if u.abs() < 1e-8 {
        1.0 + 0.5 * u
    } else {
        u.exp_m1() / u
    }
}

fn ensure_x(x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("utility argument must be positive, got {x}")))
    }
}

impl Utility {
    /// `U(x) = x^γ / γ` with `0 < γ < 1`.
    pub fn power(gamma: f64) -> Result<Self> {
        check_exponent("gamma", gamma)?;
        Ok(Self::from_powers(UtilityClass::Power, vec![(1.0, gamma)], |c, g| c / g))
    }

    /// `U(x) = Σ c_i x^{γ_i} / γ_i`.
    pub fn mixture(coeffs: &[f64], gammas: &[f64]) -> Result<Self> {
        check_pairs(coeffs, gammas, "coeffs", "gammas")?;
        for (i, &g) in gammas.iter().enumerate() {
            check_exponent(&format!("gammas[{i}]"), g)?;
        }
        let params = coeffs.iter().cloned().zip(gammas.iter().cloned()).collect();
        Ok(Self::from_powers(UtilityClass::MixturePowers, params, |c, g| c / g))
    }

    /// `U(x) = Σ w_j x^{y_j}`: a discrete measure on `(0, 1)`.
    pub fn power_measure(weights: &[f64], exponents: &[f64]) -> Result<Self> {
        check_pairs(weights, exponents, "weights", "exponents")?;
        for (i, &y) in exponents.iter().enumerate() {
            check_exponent(&format!("exponents[{i}]"), y)?;
        }
        let params = weights.iter().cloned().zip(exponents.iter().cloned()).collect();
        Ok(Self::from_powers(UtilityClass::PowerMeasure, params, |w, _| w))
    }

    /// Utility whose inverse marginal is `I(y) = Σ w_j y^{-s_j}` with every
    /// `s_j > 0` (no mass at zero).
    pub fn inverse_marginal(weights: &[f64], exponents: &[f64]) -> Result<Self> {
        check_pairs(weights, exponents, "weights", "exponents")?;
        for (i, &s) in exponents.iter().enumerate() {
            let name = format!("exponents[{i}]");
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid(
                    name,
                    format!("{s} must be positive; the measure may not charge 0"),
                ));
            }
        }
        let params: Vec<(f64, f64)> = weights.iter().cloned().zip(exponents.iter().cloned()).collect();
        let mut u = Utility {
            class: UtilityClass::InverseMarginalMeasure,
            repr: Repr::InverseMarginal {
                ln_w: weights.iter().map(|w| w.ln()).collect(),
                s: exponents.to_vec(),
                ln_y_min: 0.0,
            },
            params,
        };
        let ln_y_min = u.ln_marginal(X_MIN.ln())?;
        if let Repr::InverseMarginal { ln_y_min: slot, .. } = &mut u.repr {
            *slot = ln_y_min;
        }
        Ok(u)
    }

    fn from_powers(class: UtilityClass, params: Vec<(f64, f64)>, coeff: impl Fn(f64, f64) -> f64) -> Self {
        let a: Vec<f64> = params.iter().map(|&(c, g)| coeff(c, g)).collect();
        let p: Vec<f64> = params.iter().map(|&(_, g)| g).collect();
        Utility {
            class,
            repr: Repr::Powers {
                ln_a: a.iter().map(|v| v.ln()).collect(),
                ln_ap: a.iter().zip(&p).map(|(a, p)| (a * p).ln()).collect(),
                p,
            },
            params,
        }
    }

    pub fn class(&self) -> UtilityClass {
        self.class
    }

    /// The `(coefficient, exponent)` pairs the utility was built from.
    pub fn params(&self) -> &[(f64, f64)] {
        &self.params
    }

    /// Atoms `(w, s)` with `I(y) = Σ w y^{-s}` when the inverse marginal is a
    /// finite sum of powers, which makes the heat transform closed form.
    pub fn inverse_marginal_atoms(&self) -> Option<Vec<(f64, f64)>> {
        match (&self.repr, self.class) {
            (Repr::Powers { p, .. }, UtilityClass::Power) => Some(vec![(1.0, 1.0 / (1.0 - p[0]))]),
            (Repr::InverseMarginal { .. }, _) => Some(self.params.clone()),
            _ => None,
        }
    }

    /// Bounds `[a, b]` on the exponents of a power-sum utility.
    pub fn exponent_range(&self) -> Option<(f64, f64)> {
        match &self.repr {
            Repr::Powers { p, .. } => Some((
                p.iter().cloned().fold(f64::INFINITY, f64::min),
                p.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            )),
            Repr::InverseMarginal { .. } => None,
        }
    }

    /// `U(x)`.
    pub fn value(&self, x: f64) -> Result<f64> {
        ensure_x(x)?;
        match &self.repr {
            Repr::Powers { ln_a, p, .. } => {
                let lx = x.ln();
                Ok(log_sum_exp(ln_a.iter().zip(p).map(|(la, p)| la + p * lx)).exp())
            }
            Repr::InverseMarginal { .. } => {
                let ln_y = self.ln_marginal(x.ln())?;
                Ok(self.value_at_ln_marginal(ln_y))
            }
        }
    }

    /// Constant `c` with `∫_{X_MIN}^x I^{-1} = U(x) + c`. Nonzero only for
    /// inverse-marginal utilities with an exponent below 1, where the
    /// integral from [`X_MIN`] is dominated by a constant too large to
    /// resolve value differences in double precision.
    pub fn value_offset(&self) -> f64 {
        match &self.repr {
            Repr::Powers { .. } => 0.0,
            Repr::InverseMarginal { ln_w, s, ln_y_min } => ln_w
                .iter()
                .zip(s)
                .filter(|(_, &s)| s < 1.0)
                .map(|(lw, &s)| s / (1.0 - s) * (lw + (1.0 - s) * ln_y_min).exp())
                .sum(),
        }
    }

    /// `U(I(y))` given `ln y`; avoids the inversion for inverse-marginal utilities.
    pub fn value_at_ln_marginal(&self, ln_y: f64) -> f64 {
        match &self.repr {
            Repr::Powers { .. } => {
                let x = self.ln_inverse_marginal(ln_y).map(f64::exp);
                x.and_then(|x| self.value(x)).unwrap_or(f64::NAN)
            }
            Repr::InverseMarginal { ln_w, s, ln_y_min } => {
                // ∫_{X_MIN}^{I(y)} I^{-1} = Σ w s ∫_y^{y_min} t^{-s} dt
                let l = ln_y_min - ln_y;
                ln_w.iter()
                    .zip(s)
                    .map(|(lw, &s)| {
                        if s < 1.0 {
                            -s / (1.0 - s) * (lw + (1.0 - s) * ln_y).exp()
                        } else {
                            s * (lw + (1.0 - s) * ln_y).exp() * l * exprel((1.0 - s) * l)
                        }
                    })
                    .sum()
            }
        }
    }

    /// `ln U'(e^{ln_x})`.
    pub fn ln_marginal(&self, ln_x: f64) -> Result<f64> {
        match &self.repr {
            Repr::Powers { ln_ap, p, .. } => Ok(log_sum_exp(ln_ap.iter().zip(p).map(|(c, p)| c + (p - 1.0) * ln_x))),
            Repr::InverseMarginal { ln_w, s, .. } => {
                let k: Vec<f64> = s.iter().map(|s| -s).collect();
                solve_log_sum_exp(ln_w, &k, ln_x, "inverse of I")
            }
        }
    }

    /// `ln I(e^{ln_y})` where `I = (U')^{-1}`.
    pub fn ln_inverse_marginal(&self, ln_y: f64) -> Result<f64> {
        match &self.repr {
            Repr::Powers { ln_ap, p, .. } => {
                let k: Vec<f64> = p.iter().map(|p| p - 1.0).collect();
                solve_log_sum_exp(ln_ap, &k, ln_y, "inverse marginal")
            }
            Repr::InverseMarginal { ln_w, s, .. } => Ok(log_sum_exp(ln_w.iter().zip(s).map(|(lw, s)| lw - s * ln_y))),
        }
    }

    /// `U'(x)`.
    pub fn marginal(&self, x: f64) -> Result<f64> {
        ensure_x(x)?;
        self.ln_marginal(x.ln()).map(f64::exp)
    }

    /// `I(y) = (U')^{-1}(y)`.
    pub fn inverse_marginal_value(&self, y: f64) -> Result<f64> {
        if !(y.is_finite() && y > 0.0) {
            return Err(Error::Domain(format!("marginal utility must be positive, got {y}")));
        }
        self.ln_inverse_marginal(y.ln()).map(f64::exp)
    }

    /// Risk tolerance `R(x) = -U'(x)/U''(x)`.
    pub fn risk_tolerance(&self, x: f64) -> Result<f64> {
        Ok(self.risk_tolerance_jet(x)?.0)
    }

    /// `(R, R', R'')` at `x`, analytic.
    pub fn risk_tolerance_jet(&self, x: f64) -> Result<(f64, f64, f64)> {
        ensure_x(x)?;
        match &self.repr {
            Repr::Powers { ln_ap, p, .. } => Ok(powers_jet(ln_ap, p, x)),
            Repr::InverseMarginal { ln_w, s, .. } => {
                let ln_y = self.ln_marginal(x.ln())?;
                Ok(imm_jet(ln_w, s, ln_y))
            }
        }
    }

    /// `h(ξ) = I(e^{-ξ})` and the risk-tolerance jet at `h`.
    pub fn terminal_jet(&self, xi: f64) -> Result<TerminalJet> {
        match &self.repr {
            Repr::Powers { ln_ap, p, .. } => {
                let h = self.ln_inverse_marginal(-xi)?.exp();
                let (r, r1, r2) = powers_jet(ln_ap, p, h);
                Ok(TerminalJet { h, r, r1, r2 })
            }
            Repr::InverseMarginal { ln_w, s, .. } => {
                let h = log_sum_exp(ln_w.iter().zip(s).map(|(lw, s)| lw + s * xi)).exp();
                let (r, r1, r2) = imm_jet(ln_w, s, -xi);
                Ok(TerminalJet { h, r, r1, r2 })
            }
        }
    }

    /// Absolute prudence `-U'''/U'' = (1 + R')/R`.
    pub fn absolute_prudence(&self, x: f64) -> Result<f64> {
        let (r, r1, _) = self.risk_tolerance_jet(x)?;
        Ok((1.0 + r1) / r)
    }

    /// `x U'(x) / U(x)`.
    pub fn elasticity(&self, x: f64) -> Result<f64> {
        Ok(x * self.marginal(x)? / self.value(x)?)
    }
}

// With q_i ∝ a_i p_i x^{p_i}: x U' ∝ Σ q, x² U'' ∝ Σ q(p-1), and so on.
fn powers_jet(ln_ap: &[f64], p: &[f64], x: f64) -> (f64, f64, f64) {
    let lx = x.ln();
    let m = ln_ap
        .iter()
        .zip(p)
        .map(|(c, p)| c + p * lx)
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut d1, mut d2, mut d3, mut d4) = (0.0, 0.0, 0.0, 0.0);
    for (c, &p) in ln_ap.iter().zip(p) {
        let q = (c + p * lx - m).exp();
        d1 += q;
        d2 += q * (p - 1.0);
        d3 += q * (p - 1.0) * (p - 2.0);
        d4 += q * (p - 1.0) * (p - 2.0) * (p - 3.0);
    }
    let r = -x * d1 / d2;
    let r1 = -1.0 + d1 * d3 / (d2 * d2);
    let r2 = ((d2 * d3 + d1 * d4) / (d2 * d2) - 2.0 * d1 * d3 * d3 / (d2 * d2 * d2)) / x;
    (r, r1, r2)
}

// With J_k = Σ w s^k y^{-s}: R = J_1, R' = J_2/J_1, R'' = (J_3 J_1 - J_2²)/J_1³.
fn imm_jet(ln_w: &[f64], s: &[f64], ln_y: f64) -> (f64, f64, f64) {
    let m = ln_w
        .iter()
        .zip(s)
        .map(|(lw, s)| lw - s * ln_y)
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut j1, mut j2, mut j3) = (0.0, 0.0, 0.0);
    for (lw, &s) in ln_w.iter().zip(s) {
        let e = (lw - s * ln_y - m).exp();
        j1 += s * e;
        j2 += s * s * e;
        j3 += s * s * s * e;
    }
    let r = j1 * m.exp();
    (r, j2 / j1, (j3 * j1 - j2 * j2) / (j1 * j1 * j1 * m.exp()))
}

/// Numerical check of the smoothness and growth conditions on `R`.
#[derive(Debug, Clone, Serialize)]
pub struct Assumption1Report {
    /// `sup_x |∂^i (R^i)|` over the grid, `i = 1..=5`.
    pub k_bounds: [f64; 5],
    /// Largest Richardson error estimate seen for each order.
    pub fd_error: [f64; 5],
    /// `(order, x, value)` for every grid entry whose magnitude exceeds `k_max`.
    pub flagged: Vec<(usize, f64, f64)>,
    /// `C` in `R(x) <= C x`, taken as `sqrt(K_2 / 2)`.
    pub growth_constant: f64,
    pub linear_growth_ok: bool,
    pub slope_bound_ok: bool,
    pub prudence_positive: bool,
    pub tolerance_increasing: bool,
    /// `x U'(x)/U(x)` at the largest grid point.
    pub elasticity_at_max: f64,
    pub elasticity_ok: bool,
    /// `x/(1-a) <= R(x) <= x/(1-b)` for power sums with exponents in `[a, b]`.
    pub sandwich_ok: Option<bool>,
}

impl Assumption1Report {
    /// Every check passed and nothing was flagged.
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
            && self.linear_growth_ok
            && self.slope_bound_ok
            && self.prudence_positive
            && self.tolerance_increasing
            && self.elasticity_ok
            && self.sandwich_ok.unwrap_or(true)
    }
}

/// Log-spaced grid with `n` points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Estimates `K_i = sup |∂^i R^i|` by finite differences over `grid` and runs
/// the structural checks on `R`. The grid needs at least 100 points spanning
/// four decades.
pub fn assumption1_report(utility: &Utility, grid: &[f64], k_max: f64) -> Result<Assumption1Report> {
    if grid.len() < 100 {
        return Err(Error::invalid(
            "grid",
            format!("needs at least 100 points, got {}", grid.len()),
        ));
    }
    let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lo > 0.0) || (hi / lo).log10() < 4.0 - 1e-9 {
        return Err(Error::invalid(
            "grid",
            "must be positive and span at least four decades",
        ));
    }
    let mut k_bounds = [0.0; 5];
    let mut fd_error = [0.0_f64; 5];
    let mut flagged = Vec::new();
    for &x in grid {
        for i in 1..=5usize {
            let mut failed = false;
            let d = numdiff::derivative_auto(
                |t| match utility.risk_tolerance(t) {
                    Ok(r) => r.powi(i as i32),
                    Err(_) => {
                        failed = true;
                        f64::NAN
                    }
                },
                x,
                i,
            );
            if failed || !d.value.is_finite() {
                return Err(Error::Stencil {
                    x,
                    order: i,
                    estimate: d.error,
                });
            }
            k_bounds[i - 1] = f64::max(k_bounds[i - 1], d.value.abs());
            fd_error[i - 1] = fd_error[i - 1].max(d.error);
            if d.value.abs() > k_max {
                flagged.push((i, x, d.value));
            }
        }
    }
    let c = (k_bounds[1] / 2.0).sqrt();
    let tol = 1e-6;
    let mut linear_growth_ok = true;
    let mut slope_bound_ok = true;
    let mut prudence_positive = true;
    let mut tolerance_increasing = true;
    let mut sandwich_ok = utility.exponent_range().map(|_| true);
    for &x in grid {
        let (r, r1, _) = utility.risk_tolerance_jet(x)?;
        linear_growth_ok &= r <= c * x * (1.0 + tol);
        slope_bound_ok &= r1 <= c * (1.0 + tol);
        prudence_positive &= utility.absolute_prudence(x)? > 0.0;
        tolerance_increasing &= r1 > 0.0;
        if let (Some(ok), Some((a, b))) = (sandwich_ok.as_mut(), utility.exponent_range()) {
            *ok &= r >= x / (1.0 - a) * (1.0 - tol) && r <= x / (1.0 - b) * (1.0 + tol);
        }
    }
    let elasticity_at_max = utility.elasticity(hi)?;
    Ok(Assumption1Report {
        k_bounds,
        fd_error,
        flagged,
        growth_constant: c,
        linear_growth_ok,
        slope_bound_ok,
        prudence_positive,
        tolerance_increasing,
        elasticity_at_max,
        elasticity_ok: elasticity_at_max < 1.0,
        sandwich_ok,
    })
}
