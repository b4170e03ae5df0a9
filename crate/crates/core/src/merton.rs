//! The Merton problem with constant Sharpe ratio, solved through the heat
//! transform of the terminal inverse marginal utility.
//!
//! With `h(ξ) = I(e^{-ξ})` and `τ = T - t`,
//! `H(ξ, t) = E[h(ξ + λ√τ U)]` for standard normal `U`. Then
//! `M_x(t, x) = exp(-H^{-1}(x, t) - λ²τ/2)` and the risk tolerance of the
//! value function is `R(t, x) = H_x(H^{-1}(x, t), t)`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{ensure_finite, Error, Result};
use crate::quadrature::{gauss_hermite, GaussHermite};
use crate::roots::{expand_bracket, newton_bracketed};
use crate::utility::{Utility, UtilityClass};

/// Default number of Gauss–Hermite nodes.
pub const DEFAULT_NODES: usize = 128;

/// Largest `ln H` accepted before reporting overflow.
pub const LOG_CAP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MertonMethod {
    /// Closed form when available, otherwise quadrature with the default rule.
    #[default]
    Auto,
    ClosedForm,
    Quadrature {
        nodes: usize,
    },
}

/// `H` and its first three `ξ`-derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatJet {
    pub h: f64,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
}

#[derive(Debug, Clone)]
enum Engine {
    /// `H = Σ w exp(sξ + λ²s²τ/2)`
    Closed(Arc<[(f64, f64)]>),
    Quadrature(Arc<GaussHermite>),
}

/// Value function and optimal strategy of the Merton problem.
#[derive(Debug, Clone)]
pub struct MertonSolution {
    utility: Arc<Utility>,
    /// `γ` when the utility is a plain power, enabling shortcuts.
    power: Option<f64>,
    lambda: f64,
    horizon: f64,
    engine: Engine,
    value_rule: Arc<GaussHermite>,
}

/// Builds the Merton solution for `utility`, Sharpe ratio `lambda` and
/// horizon `T`.
pub fn merton_value(utility: &Utility, lambda: f64, horizon: f64, method: MertonMethod) -> Result<MertonSolution> {
    ensure_finite("lambda", lambda)?;
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::invalid("horizon", format!("must be nonnegative, got {horizon}")));
    }
    let atoms = utility.inverse_marginal_atoms();
    let engine = match (method, atoms) {
        (MertonMethod::Auto | MertonMethod::ClosedForm, Some(a)) => Engine::Closed(a.into()),
        (MertonMethod::ClosedForm, None) => {
            return Err(Error::NotApplicable(format!(
                "no closed-form heat transform for {:?}",
                utility.class()
            )))
        }
        (MertonMethod::Auto, None) => Engine::Quadrature(gauss_hermite(DEFAULT_NODES)),
        (MertonMethod::Quadrature { nodes }, _) => {
            if nodes < 2 {
                return Err(Error::invalid("nodes", "need at least 2 quadrature nodes"));
            }
            Engine::Quadrature(gauss_hermite(nodes))
        }
    };
    let value_rule = match &engine {
        Engine::Quadrature(gh) => gh.clone(),
        Engine::Closed(_) => gauss_hermite(DEFAULT_NODES),
    };
    let closed = matches!(engine, Engine::Closed(_));
    let power = (closed && utility.class() == UtilityClass::Power).then(|| utility.params()[0].1);
    Ok(MertonSolution {
        utility: Arc::new(utility.clone()),
        power,
        lambda,
        horizon,
        engine,
        value_rule,
    })
}

impl MertonSolution {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn utility(&self) -> &Utility {
        &self.utility
    }

    pub fn is_closed_form(&self) -> bool {
        matches!(self.engine, Engine::Closed(_))
    }

    /// Same utility and method with a different Sharpe ratio.
    pub fn with_lambda(&self, lambda: f64) -> MertonSolution {
        MertonSolution { lambda, ..self.clone() }
    }

    fn tau(&self, t: f64) -> Result<f64> {
        if !(t.is_finite() && t >= 0.0 && t <= self.horizon) {
            return Err(Error::Domain(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(self.horizon - t)
    }

    /// `H(ξ, t)` and its `ξ`-derivatives up to third order.
    pub fn heat_jet(&self, xi: f64, t: f64) -> Result<HeatJet> {
        let tau = self.tau(t)?;
        let l2 = self.lambda * self.lambda;
        match &self.engine {
            Engine::Closed(atoms) => {
                let m = atoms
                    .iter()
                    .map(|&(w, s)| w.ln() + s * xi + 0.5 * l2 * s * s * tau)
                    .fold(f64::NEG_INFINITY, f64::max);
                if m > LOG_CAP {
                    return Err(Error::Overflow {
                        log_value: m,
                        cap: LOG_CAP,
                    });
                }
                let mut jet = HeatJet {
                    h: 0.0,
                    h1: 0.0,
                    h2: 0.0,
                    h3: 0.0,
                };
                for &(w, s) in atoms.iter() {
                    let e = w * (s * xi + 0.5 * l2 * s * s * tau).exp();
                    jet.h += e;
                    jet.h1 += s * e;
                    jet.h2 += s * s * e;
                    jet.h3 += s * s * s * e;
                }
                Ok(jet)
            }
            Engine::Quadrature(gh) => {
                let spread = self.lambda.abs() * tau.sqrt();
                let mut jet = HeatJet {
                    h: 0.0,
                    h1: 0.0,
                    h2: 0.0,
                    h3: 0.0,
                };
                let nodes: &[f64] = if spread == 0.0 { &[0.0] } else { &gh.nodes };
                let weights: &[f64] = if spread == 0.0 { &[1.0] } else { &gh.weights };
                for (&u, &w) in nodes.iter().zip(weights) {
                    let j = self.utility.terminal_jet(xi + spread * u)?;
                    // h' = R(h), h'' = R'(h) R(h), h''' = (R'' R + R'^2) R
                    jet.h += w * j.h;
                    jet.h1 += w * j.r;
                    jet.h2 += w * j.r1 * j.r;
                    jet.h3 += w * (j.r2 * j.r + j.r1 * j.r1) * j.r;
                }
                if !jet.h.is_finite() || jet.h.ln() > LOG_CAP {
                    return Err(Error::Overflow {
                        log_value: jet.h.ln(),
                        cap: LOG_CAP,
                    });
                }
                Ok(jet)
            }
        }
    }

    /// `H(ξ, t)`.
    pub fn heat(&self, xi: f64, t: f64) -> Result<f64> {
        Ok(self.heat_jet(xi, t)?.h)
    }

    /// `ξ = H^{-1}(x, t)`, by safeguarded Newton on `ln H`.
    pub fn heat_inverse(&self, x: f64, t: f64) -> Result<f64> {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::Domain(format!("wealth must be positive, got {x}")));
        }
        let tau = self.tau(t)?;
        let lx = x.ln();
        if let Some(g) = self.power {
            return Ok((1.0 - g) * lx - 0.5 * self.lambda * self.lambda * tau / (1.0 - g));
        }
        // Power surrogate: local exponent R(x)/x of the terminal inverse.
        let a = self.utility.risk_tolerance(x)? / x;
        let guess = -self.utility.ln_marginal(lx)? - 0.5 * self.lambda * self.lambda * tau * a;
        let g = |xi: f64| -> (f64, f64) {
            match self.heat_jet(xi, t) {
                Ok(j) => (j.h.ln() - lx, j.h1 / j.h),
                Err(_) => (f64::INFINITY, f64::NAN),
            }
        };
        let step = 0.25 * (1.0 + guess.abs() * 1e-3);
        let (lo, hi) = expand_bracket(|xi| g(xi).0, guess, step, "heat inverse")?;
        newton_bracketed(g, lo, hi, guess, "heat inverse")
    }

    /// Merton value `M(t, x)`.
    pub fn value(&self, t: f64, x: f64) -> Result<f64> {
        let tau = self.tau(t)?;
        if let Some(g) = self.power {
            let c = 0.5 * self.lambda * self.lambda * tau * g / (1.0 - g);
            return Ok(self.utility.value(x)? * c.exp());
        }
        let xi0 = self.heat_inverse(x, t)? + self.lambda * self.lambda * tau;
        let spread = self.lambda.abs() * tau.sqrt();
        if spread == 0.0 {
            return self.utility.value(x);
        }
        let gh = &self.value_rule;
        let mut total = 0.0;
        for (&u, &w) in gh.nodes.iter().zip(&gh.weights) {
            // U(h(η)) = U(I(e^{-η}))
            total += w * self.utility.value_at_ln_marginal(-(xi0 + spread * u));
        }
        if !total.is_finite() {
            return Err(Error::Overflow {
                log_value: f64::INFINITY,
                cap: LOG_CAP,
            });
        }
        Ok(total)
    }

    /// `M_x(t, x)`.
    pub fn value_x(&self, t: f64, x: f64) -> Result<f64> {
        let tau = self.tau(t)?;
        let xi = self.heat_inverse(x, t)?;
        Ok((-xi - 0.5 * self.lambda * self.lambda * tau).exp())
    }

    /// `M_xx(t, x) = -M_x / R`.
    pub fn value_xx(&self, t: f64, x: f64) -> Result<f64> {
        let p = self.point(t, x)?;
        Ok(-p.m_x / p.r)
    }

    /// Risk tolerance of the value function, `R(t, x) = -M_x / M_xx`.
    pub fn risk_tolerance(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.point(t, x)?.r)
    }

    /// Optimal amount invested in the risky asset, `(λ/σ) R(t, x)`.
    pub fn optimal_amount(&self, t: f64, x: f64, sigma: f64) -> Result<f64> {
        Ok(self.lambda / sigma * self.risk_tolerance(t, x)?)
    }

    /// Everything at `(t, x)` that needs only one inversion.
    pub fn point(&self, t: f64, x: f64) -> Result<MertonPoint> {
        let tau = self.tau(t)?;
        let xi = self.heat_inverse(x, t)?;
        if let Some(g) = self.power {
            return Ok(MertonPoint {
                xi,
                m_x: (-xi - 0.5 * self.lambda * self.lambda * tau).exp(),
                r: x / (1.0 - g),
                r_x: 1.0 / (1.0 - g),
                r_xx: 0.0,
            });
        }
        let j = self.heat_jet(xi, t)?;
        let m_x = (-xi - 0.5 * self.lambda * self.lambda * tau).exp();
        Ok(MertonPoint {
            xi,
            m_x,
            r: j.h1,
            r_x: j.h2 / j.h1,
            r_xx: (j.h3 * j.h1 - j.h2 * j.h2) / (j.h1 * j.h1 * j.h1),
        })
    }

    /// Same as [`point`](Self::point) when `ξ = H^{-1}(x, t)` is already known.
    pub fn point_at_xi(&self, t: f64, xi: f64) -> Result<MertonPoint> {
        let tau = self.tau(t)?;
        let j = self.heat_jet(xi, t)?;
        Ok(MertonPoint {
            xi,
            m_x: (-xi - 0.5 * self.lambda * self.lambda * tau).exp(),
            r: j.h1,
            r_x: j.h2 / j.h1,
            r_xx: (j.h3 * j.h1 - j.h2 * j.h2) / (j.h1 * j.h1 * j.h1),
        })
    }
}

/// Local quantities at one `(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MertonPoint {
    /// `H^{-1}(x, t)`
    pub xi: f64,
    pub m_x: f64,
    pub r: f64,
    pub r_x: f64,
    pub r_xx: f64,
}

impl MertonPoint {
    pub fn m_xx(&self) -> f64 {
        -self.m_x / self.r
    }
}

/// Finite-difference residuals of the three identities the solution satisfies,
/// each normalized by the size of the quantity involved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MertonResiduals {
    /// `(M_t - λ² M_x² / (2 M_xx)) / |M|`
    pub hjb: f64,
    /// `(M_λ + τ λ R² M_xx) / |M|`
    pub vega_gamma: f64,
    /// `(R_λ - τ λ R² R_xx) / |R|`
    pub tolerance_vega: f64,
}

impl MertonResiduals {
    pub fn max_abs(&self) -> f64 {
        self.hjb.abs().max(self.vega_gamma.abs()).max(self.tolerance_vega.abs())
    }
}

/// Residuals at an interior point `0 <= t < T`.
pub fn merton_residuals(sol: &MertonSolution, t: f64, x: f64) -> Result<MertonResiduals> {
    let tau = sol.tau(t)?;
    if tau <= 0.0 {
        return Err(Error::Domain("residuals need t < T".into()));
    }
    let lambda = sol.lambda;
    let m = sol.value(t, x)?;
    let p = sol.point(t, x)?;
    let ht = 1e-4 * tau.min(1.0);
    let m_t = if t >= ht {
        (sol.value(t + ht, x)? - sol.value(t - ht, x)?) / (2.0 * ht)
    } else {
        let m1 = sol.value(t + ht, x)?;
        let m2 = sol.value(t + 2.0 * ht, x)?;
        (-3.0 * m + 4.0 * m1 - m2) / (2.0 * ht)
    };
    let m_xx = p.m_xx();
    let hjb = (m_t - 0.5 * lambda * lambda * p.m_x * p.m_x / m_xx) / m.abs();

    let hl = 1e-4 * lambda.abs().max(1e-2);
    let up = sol.with_lambda(lambda + hl);
    let dn = sol.with_lambda(lambda - hl);
    let m_l = (up.value(t, x)? - dn.value(t, x)?) / (2.0 * hl);
    let vega_gamma = (m_l + tau * lambda * p.r * p.r * m_xx) / m.abs();
    let r_l = (up.risk_tolerance(t, x)? - dn.risk_tolerance(t, x)?) / (2.0 * hl);
    let tolerance_vega = (r_l - tau * lambda * p.r * p.r * p.r_xx) / p.r.abs();
    Ok(MertonResiduals {
        hjb,
        vega_gamma,
        tolerance_vega,
    })
}
