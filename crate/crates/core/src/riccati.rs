//! Riccati equations for exponential-affine moments of the CIR factor
//! `dZ = δ(m - Z) dt + √δ β √Z dW`.
//!
//! Every variant has the form `A' = q_a A² + q_b A + q_c`, `B' = δ m (A + s)`
//! with `A(0) = B(0) = 0`, where the derivative is in time-to-maturity `τ`.

use serde::Serialize;

use crate::error::{ensure_finite, ensure_positive, Error, Result};

/// `|A|` beyond which the solution is treated as exploded.
pub const BLOWUP_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiccatiVariant {
    /// `E[e^{w Z_s} | Z_t = z] = exp(w z + A z + B)`.
    GMoment { w: f64 },
    /// Second moment of wealth under `π = μ Z X / (1-γ)`, with factor noise
    /// correlated `ρ` to the stock.
    WealthSecondMoment { mu: f64, gamma: f64, rho: f64 },
    /// `E[X_s^p] = x^p exp(A z + B)` under `π = k μ Z X / (1-γ)`.
    WealthPowerMoment {
        mu: f64,
        gamma: f64,
        rho: f64,
        exponent: f64,
        leverage: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiccatiSpec {
    pub delta: f64,
    pub beta: f64,
    pub m: f64,
    pub variant: RiccatiVariant,
}

/// Coefficients of `A' = q_a A² + q_b A + q_c`, `B' = δ m (A + shift)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiccatiCoefficients {
    pub qa: f64,
    pub qb: f64,
    pub qc: f64,
    pub shift: f64,
    pub bm: f64,
}

impl RiccatiSpec {
    pub fn g_moment(delta: f64, beta: f64, m: f64, w: f64) -> Self {
        RiccatiSpec {
            delta,
            beta,
            m,
            variant: RiccatiVariant::GMoment { w },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid(
                "delta",
                format!("must be nonnegative, got {}", self.delta),
            ));
        }
        ensure_positive("beta", self.beta)?;
        ensure_positive("m", self.m)?;
        match self.variant {
            RiccatiVariant::GMoment { w } => ensure_finite("w", w),
            RiccatiVariant::WealthSecondMoment { mu, gamma, rho }
            | RiccatiVariant::WealthPowerMoment { mu, gamma, rho, .. } => {
                ensure_finite("mu", mu)?;
                if !(gamma > 0.0 && gamma < 1.0) {
                    return Err(Error::invalid("gamma", format!("{gamma} not in (0, 1)")));
                }
                if !(-1.0..=1.0).contains(&rho) {
                    return Err(Error::invalid("rho", format!("{rho} not in [-1, 1]")));
                }
                if let RiccatiVariant::WealthPowerMoment { exponent, leverage, .. } = self.variant {
                    ensure_finite("exponent", exponent)?;
                    ensure_finite("leverage", leverage)?;
                }
                Ok(())
            }
        }
    }

    pub fn coefficients(&self) -> RiccatiCoefficients {
        let (d, b) = (self.delta, self.beta);
        let qa = 0.5 * d * b * b;
        let bm = d * self.m;
        match self.variant {
            RiccatiVariant::GMoment { w } => RiccatiCoefficients {
                qa,
                qb: d * b * b * w - d,
                qc: 0.5 * d * b * b * w * w - d * w,
                shift: w,
                bm,
            },
            RiccatiVariant::WealthSecondMoment { mu, gamma, rho } => {
                power_moment_coefficients(d, b, bm, mu, gamma, rho, 2.0, 1.0)
            }
            RiccatiVariant::WealthPowerMoment {
                mu,
                gamma,
                rho,
                exponent,
                leverage,
            } => power_moment_coefficients(d, b, bm, mu, gamma, rho, exponent, leverage),
        }
    }

    /// Exact explosion time of `A`, `None` when `A` stays bounded.
    pub fn explosion_time(&self) -> Option<f64> {
        let c = self.coefficients();
        quadratic_explosion_time(c.qa, c.qb, c.qc)
    }
}

#[allow(clippy::too_many_arguments)]
fn power_moment_coefficients(
    d: f64,
    b: f64,
    bm: f64,
    mu: f64,
    gamma: f64,
    rho: f64,
    p: f64,
    k: f64,
) -> RiccatiCoefficients {
    let theta = k * mu / (1.0 - gamma);
    RiccatiCoefficients {
        qa: 0.5 * d * b * b,
        qb: rho * d.sqrt() * b * p * theta - d,
        qc: p * theta * mu + 0.5 * p * (p - 1.0) * theta * theta,
        shift: 0.0,
        bm,
    }
}

/// Blow-up time of `A' = qa A² + qb A + qc`, `A(0) = 0`, with `qa > 0`.
fn quadratic_explosion_time(qa: f64, qb: f64, qc: f64) -> Option<f64> {
    if qc <= 0.0 || qa <= 0.0 {
        // A moves to (or stays at) a nonpositive root.
        return None;
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        let s = (-disc).sqrt();
        return Some(2.0 / s * (std::f64::consts::FRAC_PI_2 - (qb / s).atan()));
    }
    if qb < 0.0 {
        // Both roots positive: A converges to the smaller one.
        return None;
    }
    let s = disc.sqrt();
    let r1 = (-qb - s) / (2.0 * qa);
    let r2 = (-qb + s) / (2.0 * qa);
    if s == 0.0 {
        return Some(-1.0 / (qa * r1));
    }
    Some((r1 / r2).ln() / (qa * (r2 - r1)))
}

/// Closed-form `A` for the moment of `e^{wZ}`.
///
/// ```
/// use slowvol::riccati::{g_moment_closed_form, RiccatiSpec};
/// let spec = RiccatiSpec::g_moment(0.5, 1.0, 1.0, 10.0);
/// let cf = g_moment_closed_form(&spec).unwrap();
/// let tau_star = cf.tau_star.unwrap();
/// assert!((tau_star - 2.0 * (10.0_f64 / 8.0).ln()).abs() < 1e-12);
/// ```
pub fn g_moment_closed_form(spec: &RiccatiSpec) -> Result<GMomentClosedForm> {
    spec.validate()?;
    let RiccatiVariant::GMoment { w } = spec.variant else {
        return Err(Error::NotApplicable("closed form only for the G-moment variant".into()));
    };
    let critical = 2.0 / (spec.beta * spec.beta);
    let tau_star = if w > critical && spec.delta > 0.0 {
        Some(-((w - critical) / w).ln() / spec.delta)
    } else {
        None
    };
    Ok(GMomentClosedForm {
        w,
        critical,
        delta: spec.delta,
        tau_star,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GMomentClosedForm {
    pub w: f64,
    /// `2/β²`: above this `w` the moment explodes in finite time.
    pub critical: f64,
    pub delta: f64,
    pub tau_star: Option<f64>,
}

impl GMomentClosedForm {
    /// `A(τ) = -w (1 - e^{-δτ}) / (1 - w/(w - 2/β²) e^{-δτ})`, an error at
    /// or beyond the explosion time.
    pub fn a(&self, tau: f64) -> Result<f64> {
        if let Some(ts) = self.tau_star.filter(|&ts| tau >= ts) {
            return Err(Error::Explosion {
                tau_star: ts,
                horizon: tau,
            });
        }
        let w = self.w;
        if (w - self.critical).abs() <= 1e-15 * self.critical || w == 0.0 {
            return Ok(0.0);
        }
        let e = (-self.delta * tau).exp();
        let k = w / (w - self.critical);
        Ok(-w * (-(self.delta * tau)).exp_m1().abs() / (1.0 - k * e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionSource {
    Numeric,
    ClosedForm,
}

/// Numerical solution on an adaptive grid of `τ`.
#[derive(Debug, Clone, Serialize)]
pub struct RiccatiSolution {
    pub tau: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Nominal step.
    pub step: f64,
    /// `[lo, lo + step]` containing the explosion time, when `A` crossed
    /// [`BLOWUP_CAP`] before `tau_max`.
    pub blowup: Option<(f64, f64)>,
    pub source: SolutionSource,
    pub coefficients: RiccatiCoefficients,
}

impl RiccatiSolution {
    /// Largest `τ` reached.
    pub fn tau_end(&self) -> f64 {
        *self.tau.last().unwrap()
    }

    fn rhs(&self, a: f64) -> (f64, f64) {
        rhs(&self.coefficients, a)
    }

    /// `(A(τ), B(τ))` by cubic Hermite interpolation between grid nodes.
    pub fn eval(&self, tau: f64) -> Result<(f64, f64)> {
        if !(tau >= 0.0 && tau <= self.tau_end() * (1.0 + 1e-14)) {
            return Err(Error::Domain(format!(
                "tau {tau} outside the integrated range [0, {}]",
                self.tau_end()
            )));
        }
        let i = match self.tau.binary_search_by(|p| p.total_cmp(&tau)) {
            Ok(i) => return Ok((self.a[i], self.b[i])),
            Err(i) => i.clamp(1, self.tau.len() - 1),
        };
        let (t0, t1) = (self.tau[i - 1], self.tau[i]);
        let h = t1 - t0;
        let s = (tau - t0) / h;
        let (da0, db0) = self.rhs(self.a[i - 1]);
        let (da1, db1) = self.rhs(self.a[i]);
        let herm = |y0: f64, y1: f64, d0: f64, d1: f64| {
            let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
            let h10 = s * (1.0 - s) * (1.0 - s);
            let h01 = s * s * (3.0 - 2.0 * s);
            let h11 = s * s * (s - 1.0);
            h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
        };
        Ok((
            herm(self.a[i - 1], self.a[i], da0, da1),
            herm(self.b[i - 1], self.b[i], db0, db1),
        ))
    }
}

fn rhs(c: &RiccatiCoefficients, a: f64) -> (f64, f64) {
    (c.qa * a * a + c.qb * a + c.qc, c.bm * (a + c.shift))
}

fn rk4(c: &RiccatiCoefficients, a: f64, b: f64, h: f64) -> (f64, f64) {
    let (ka1, kb1) = rhs(c, a);
    let (ka2, kb2) = rhs(c, a + 0.5 * h * ka1);
    let (ka3, kb3) = rhs(c, a + 0.5 * h * ka2);
    let (ka4, kb4) = rhs(c, a + h * ka3);
    (
        a + h / 6.0 * (ka1 + 2.0 * ka2 + 2.0 * ka3 + ka4),
        b + h / 6.0 * (kb1 + 2.0 * kb2 + 2.0 * kb3 + kb4),
    )
}

/// Default nominal step, `10^{-3} min(1, 1/δ)`.
pub fn default_step(delta: f64) -> f64 {
    1e-3 * (1.0 / delta).min(1.0)
}

/// RK4 with step halving, from `τ = 0` to `tau_max` or until `|A|` exceeds
/// [`BLOWUP_CAP`].
pub fn riccati_integrate(spec: &RiccatiSpec, tau_max: f64, step: Option<f64>) -> Result<RiccatiSolution> {
    spec.validate()?;
    if !(tau_max.is_finite() && tau_max >= 0.0) {
        return Err(Error::invalid("tau_max", format!("must be nonnegative, got {tau_max}")));
    }
    let h_nom = step.unwrap_or_else(|| default_step(spec.delta));
    ensure_positive("step", h_nom)?;
    let c = spec.coefficients();
    let h_min = 1e-14 * h_nom.max(tau_max);
    let mut sol = RiccatiSolution {
        tau: vec![0.0],
        a: vec![0.0],
        b: vec![0.0],
        step: h_nom,
        blowup: None,
        source: SolutionSource::Numeric,
        coefficients: c,
    };
    let (mut tau, mut a, mut b) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut h = h_nom;
    while tau < tau_max {
        let hh = h.min(tau_max - tau);
        let (a_full, _) = rk4(&c, a, b, hh);
        let (am, bm) = rk4(&c, a, b, 0.5 * hh);
        let (a2, b2) = rk4(&c, am, bm, 0.5 * hh);
        let err = (a2 - a_full).abs();
        let tol = 1e-13 * a2.abs().max(1.0);
        let bad = !a2.is_finite() || !a_full.is_finite() || err > tol;
        if bad && hh > h_min {
            h = 0.5 * hh;
            continue;
        }
        if !a2.is_finite() {
            sol.blowup = Some((tau, tau + h_nom));
            break;
        }
        tau += hh;
        a = a2;
        b = b2;
        sol.tau.push(tau);
        sol.a.push(a);
        sol.b.push(b);
        if a.abs() > BLOWUP_CAP {
            sol.blowup = Some((tau, tau + h_nom));
            break;
        }
        h = (2.0 * hh).min(h_nom);
    }
    Ok(sol)
}

/// The moment the spec describes, at time `t` for maturity `s >= t`:
/// `E[e^{w Z_s}]` for the G-moment variant, `E[X_s^p]` for the wealth ones.
pub fn moment_function(spec: &RiccatiSpec, t: f64, z: f64, s: f64, x: f64) -> Result<f64> {
    if !(s >= t) {
        return Err(Error::Domain(format!("maturity {s} precedes time {t}")));
    }
    ensure_positive("z", z)?;
    let tau = s - t;
    let sol = riccati_integrate(spec, tau, None)?;
    if let Some((lo, _)) = sol.blowup {
        return Err(Error::Explosion {
            tau_star: lo,
            horizon: tau,
        });
    }
    let (a, b) = sol.eval(tau)?;
    Ok(match spec.variant {
        RiccatiVariant::GMoment { w } => ((w + a) * z + b).exp(),
        RiccatiVariant::WealthSecondMoment { .. } => x * x * (a * z + b).exp(),
        RiccatiVariant::WealthPowerMoment { exponent, .. } => {
            ensure_positive("x", x)?;
            x.powf(exponent) * (a * z + b).exp()
        }
    })
}

/// Residual of `f_t + (δ/2) β² z f_zz + δ (m - z) f_z = 0` for
/// `f(t, z) = E[e^{w Z_s} | Z_t = z]`, by central differences, relative to `f`.
pub fn g_moment_pde_residual(spec: &RiccatiSpec, t: f64, z: f64, s: f64) -> Result<f64> {
    let f = |t: f64, z: f64| moment_function(spec, t, z, s, 1.0);
    let ht = 1e-3 * (s - t).max(1e-3);
    let hz = 1e-3 * z;
    let f0 = f(t, z)?;
    let f_t = (f(t + ht, z)? - f(t - ht, z)?) / (2.0 * ht);
    let fzp = f(t, z + hz)?;
    let fzm = f(t, z - hz)?;
    let f_z = (fzp - fzm) / (2.0 * hz);
    let f_zz = (fzp - 2.0 * f0 + fzm) / (hz * hz);
    let (d, b, m) = (spec.delta, spec.beta, spec.m);
    Ok((f_t + 0.5 * d * b * b * z * f_zz + d * (m - z) * f_z) / f0)
}
