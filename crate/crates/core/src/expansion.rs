//! First-order expansion of the value function in the slow scale `√δ`.
//!
//! With the factor frozen at `z` and `λ = λ(z)`, everything reduces to the
//! Merton solution `M(t, x; λ)`:
//!
//! * `v⁰ = M`, `π⁰ = (λ/σ) R`;
//! * `v⁰_z = -(T-t) λ λ' R² M_xx = (T-t) λ λ' R M_x`;
//! * `v⁰_xz = (T-t) λ λ' M_x (R_x - 1)`;
//! * `v¹ = ½ (T-t) ρ λ g R v⁰_xz`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{path_rng, Control, MarketModel, SlowFactorFrozen, Strategy, StrategyFamily};
use crate::error::{Error, Result};
use crate::merton::{merton_value, MertonMethod, MertonSolution};
use crate::stats::{summarize, Summary};
use crate::utility::{Utility, UtilityClass};

/// Expansion terms for one model, utility and horizon.
#[derive(Debug, Clone)]
pub struct Expansion {
    model: MarketModel,
    merton: MertonSolution,
    horizon: f64,
}

/// All first-order quantities at one point, from a single inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionPoint {
    pub v0: f64,
    pub v0_x: f64,
    pub v0_xx: f64,
    pub v0_z: f64,
    pub v0_xz: f64,
    pub v1: f64,
    pub pi0: f64,
    pub risk_tolerance: f64,
}

impl ExpansionPoint {
    /// `v⁰ + √δ v¹`.
    pub fn first_order(&self, delta: f64) -> f64 {
        self.v0 + delta.sqrt() * self.v1
    }
}

impl Expansion {
    pub fn new(model: &MarketModel, utility: &Utility, horizon: f64, method: MertonMethod) -> Result<Self> {
        Ok(Expansion {
            model: model.clone(),
            merton: merton_value(utility, 0.0, horizon, method)?,
            horizon,
        })
    }

    pub fn model(&self) -> &MarketModel {
        &self.model
    }

    pub fn utility(&self) -> &Utility {
        self.merton.utility()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn frozen(&self, z: f64) -> SlowFactorFrozen {
        self.model.freeze(self.model.clamp_z(z))
    }

    /// Merton solution with `λ = λ(z)`.
    pub fn merton_at(&self, z: f64) -> MertonSolution {
        self.merton.with_lambda(self.frozen(z).lambda)
    }

    fn check_t(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::Domain(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(self.horizon - t)
    }

    pub fn point(&self, t: f64, x: f64, z: f64) -> Result<ExpansionPoint> {
        let tau = self.check_t(t)?;
        let f = self.frozen(z);
        let sol = self.merton.with_lambda(f.lambda);
        let p = sol.point(t, x)?;
        let v0 = sol.value(t, x)?;
        let ll = tau * f.lambda * f.lambda_prime;
        let v0_xz = ll * p.m_x * (p.r_x - 1.0);
        Ok(ExpansionPoint {
            v0,
            v0_x: p.m_x,
            v0_xx: p.m_xx(),
            v0_z: ll * p.r * p.m_x,
            v0_xz,
            v1: 0.5 * tau * f.rho * f.lambda * f.g * p.r * v0_xz,
            pi0: f.lambda / f.sigma * p.r,
            risk_tolerance: p.r,
        })
    }

    /// `(v⁰_x, v⁰_z)` without evaluating `v⁰` itself.
    pub fn gradient(&self, t: f64, x: f64, z: f64) -> Result<(f64, f64)> {
        let tau = self.check_t(t)?;
        let f = self.frozen(z);
        let p = self.merton.with_lambda(f.lambda).point(t, x)?;
        Ok((p.m_x, tau * f.lambda * f.lambda_prime * p.r * p.m_x))
    }

    pub fn v0(&self, t: f64, x: f64, z: f64) -> Result<f64> {
        self.check_t(t)?;
        self.merton_at(z).value(t, x)
    }

    pub fn v0_z(&self, t: f64, x: f64, z: f64) -> Result<f64> {
        Ok(self.point(t, x, z)?.v0_z)
    }

    pub fn v1(&self, t: f64, x: f64, z: f64) -> Result<f64> {
        Ok(self.point(t, x, z)?.v1)
    }

    /// `π⁰(t, x, z) = (λ(z)/σ(z)) R(t, x; λ(z))`.
    pub fn pi0(&self, t: f64, x: f64, z: f64) -> Result<f64> {
        let f = self.frozen(z);
        if f.lambda == 0.0 {
            return Ok(0.0);
        }
        Ok(f.lambda / f.sigma * self.merton.with_lambda(f.lambda).risk_tolerance(t, x)?)
    }

    /// `π⁰` as a [`Strategy`].
    pub fn pi0_strategy(self: &Arc<Self>) -> Pi0 {
        Pi0 {
            expansion: self.clone(),
            scale: 1.0,
        }
    }

    /// The family `c₀ π⁰ + δ^α c₁ π⁰`.
    pub fn pi0_family(self: &Arc<Self>, c0: f64, c1: f64, alpha: f64) -> Result<StrategyFamily> {
        let mut fam = StrategyFamily::new(
            Arc::new(Pi0 {
                expansion: self.clone(),
                scale: c0,
            }),
            Arc::new(Pi0 {
                expansion: self.clone(),
                scale: c1,
            }),
            alpha,
            Some(c0 == 1.0),
        )?;
        fam.pi0_multiples = Some((c0, c1));
        Ok(fam)
    }

    /// `ṽ^{2α}`, the correction produced by a perturbation `π̃¹` on top of
    /// `π̃⁰ ≡ π⁰`:
    /// `E[∫_t^T ½ σ² (π̃¹)² v⁰_xx (s, X̂_s) ds]` along the optimal Merton wealth.
    /// Closed form for a power utility with `π̃¹ = c π⁰`, otherwise Monte Carlo.
    pub fn vtilde_2alpha(
        &self,
        family: &StrategyFamily,
        t: f64,
        x: f64,
        z: f64,
        mc: &FeynmanKacConfig,
    ) -> Result<CorrectionEstimate> {
        if family.identical_to_pi0 == Some(false) {
            return Err(Error::NotApplicable(
                "ṽ^{2α} needs a family with base equal to π⁰".into(),
            ));
        }
        let tau = self.check_t(t)?;
        let f = self.frozen(z);
        if let (Some((c0, c1)), UtilityClass::Power) = (family.pi0_multiples, self.utility().class()) {
            if c0 == 1.0 {
                let g = self.utility().params()[0].1;
                let v0 = self.v0(t, x, z)?;
                let value = -0.5 * c1 * c1 * f.lambda * f.lambda * tau * g / (1.0 - g) * v0;
                return Ok(CorrectionEstimate::exact(value));
            }
        }
        if tau == 0.0 {
            return Ok(CorrectionEstimate::exact(0.0));
        }
        self.vtilde_2alpha_monte_carlo(family.perturbation.as_ref(), t, x, z, mc)
    }

    /// `ṽ^{2α}` by simulating the optimal Merton wealth exactly and
    /// integrating the source term with the trapezoid rule.
    pub fn vtilde_2alpha_monte_carlo(
        &self,
        perturbation: &dyn Strategy,
        t: f64,
        x: f64,
        z: f64,
        mc: &FeynmanKacConfig,
    ) -> Result<CorrectionEstimate> {
        if mc.n_paths < 2 || mc.n_time < 2 {
            return Err(Error::invalid("n_paths", "need at least 2 paths and 2 time points"));
        }
        let f = self.frozen(z);
        let sol = self.merton.with_lambda(f.lambda);
        let l = f.lambda;
        let xi0 = sol.heat_inverse(x, t)?;
        let n = mc.n_time;
        let h = (self.horizon - t) / (n - 1) as f64;
        let samples: Vec<Result<f64>> = (0..mc.n_paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = path_rng(mc.seed, p as u64);
                let mut w = 0.0;
                let mut total = 0.0;
                for k in 0..n {
                    if k > 0 {
                        let e: f64 = rng.sample(StandardNormal);
                        w += h.sqrt() * e;
                    }
                    let s = if k == n - 1 { self.horizon } else { t + k as f64 * h };
                    let xi = xi0 + l * l * (s - t) + l * w;
                    let xs = sol.heat(xi, s)?;
                    let pt = sol.point_at_xi(s, xi)?;
                    let pi1 = perturbation.amount(s, xs, z);
                    let term = 0.5 * f.sigma * f.sigma * pi1 * pi1 * pt.m_xx();
                    let weight = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
                    total += weight * h * term;
                }
                Ok(total)
            })
            .collect();
        let samples: Vec<f64> = samples.into_iter().collect::<Result<_>>()?;
        let s = summarize(&samples, false);
        Ok(CorrectionEstimate {
            value: s.mean,
            stderr: s.stderr,
            source: CorrectionSource::MonteCarlo,
            budget_exceeded: mc.target_stderr.is_some_and(|target| s.stderr > target),
        })
    }

    /// `ṽ¹` for `α = 1/4`: `v¹ + ṽ^{2α}`, since the source terms add.
    pub fn vtilde1_quarter(
        &self,
        family: &StrategyFamily,
        t: f64,
        x: f64,
        z: f64,
        mc: &FeynmanKacConfig,
    ) -> Result<CorrectionEstimate> {
        if (family.alpha - 0.25).abs() > 1e-12 {
            return Err(Error::NotApplicable(format!(
                "ṽ¹ is defined for α = 1/4, got {}",
                family.alpha
            )));
        }
        let v1 = self.v1(t, x, z)?;
        let mut e = self.vtilde_2alpha(family, t, x, z, mc)?;
        e.value += v1;
        Ok(e)
    }

    /// Which expansion describes the family's value at `(t, x, z)`, with the
    /// order of its error.
    pub fn approximation_select(&self, family: &StrategyFamily, t: f64, x: f64, z: f64) -> Result<ApproximationChoice> {
        self.check_t(t)?;
        let a = family.alpha;
        let identical = match family.identical_to_pi0 {
            Some(v) => Some(v),
            None => self.sample_region(t, x, z, |s, y| Ok(family.base.amount(s, y, z) - self.pi0(s, y, z)?))?,
        };
        let Some(identical) = identical else {
            return Ok(ApproximationChoice::indeterminate(
                "base strategy differs from π⁰ only below the noise floor",
            ));
        };
        if !identical {
            return Ok(ApproximationChoice {
                expansion: ExpansionKind::LeadingOrderOwn,
                accuracy_exponent: a.min(0.5),
                region: Region::K,
                note: None,
            });
        }
        let region = if family.identical_to_pi0.is_some() {
            Region::All
        } else {
            Region::C
        };
        if a >= 0.5 {
            return Ok(ApproximationChoice::new(ExpansionKind::FirstOrder, 1.0, region));
        }
        if a > 0.25 {
            return Ok(ApproximationChoice::new(ExpansionKind::FirstOrder, 2.0 * a, region));
        }
        if a == 0.25 {
            return Ok(ApproximationChoice::new(ExpansionKind::FirstOrderQuarter, 0.75, region));
        }
        let active = self.sample_region(t, x, z, |s, y| Ok(family.perturbation.amount(s, y, z)))?;
        Ok(match active {
            Some(false) => {
                ApproximationChoice::new(ExpansionKind::PerturbationCorrection, (3.0 * a).min(0.5), Region::K1)
            }
            Some(true) => ApproximationChoice::new(ExpansionKind::FirstOrder, 1.0, Region::C1),
            None => ApproximationChoice::indeterminate("perturbation is below the noise floor ahead of t"),
        })
    }

    // Samples `f` on a forward (s, y) grid. `Some(true)` when `f` vanishes
    // identically, `Some(false)` when it exceeds the threshold somewhere,
    // `None` when it is nonzero but below the threshold.
    fn sample_region(&self, t: f64, x: f64, _z: f64, f: impl Fn(f64, f64) -> Result<f64>) -> Result<Option<bool>> {
        const THRESHOLD: f64 = 1e-12;
        let mut max = 0.0_f64;
        for i in 0..16 {
            let s = t + (self.horizon - t) * i as f64 / 16.0;
            for j in 0..16 {
                let y = x * 10f64.powf(-1.0 + 2.0 * j as f64 / 15.0);
                max = max.max(f(s, y)?.abs());
            }
        }
        Ok(if max == 0.0 {
            Some(true)
        } else if max > THRESHOLD {
            Some(false)
        } else {
            None
        })
    }
}

/// `c · π⁰`.
#[derive(Debug, Clone)]
pub struct Pi0 {
    expansion: Arc<Expansion>,
    scale: f64,
}

impl Strategy for Pi0 {
    fn amount(&self, t: f64, x: f64, z: f64) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        self.scale * self.expansion.pi0(t, x, z).unwrap_or(f64::NAN)
    }
}

/// Gradient of `v⁰` as a control variate for simulated utilities.
#[derive(Debug, Clone)]
pub struct ZerothOrderGradient(pub Arc<Expansion>);

impl Control for ZerothOrderGradient {
    fn gradient(&self, t: f64, x: f64, z: f64) -> (f64, f64) {
        self.0.gradient(t, x, z).unwrap_or((0.0, 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeynmanKacConfig {
    pub n_paths: usize,
    /// Points of the trapezoid rule in time, endpoints included.
    pub n_time: usize,
    pub seed: u64,
    pub target_stderr: Option<f64>,
}

impl Default for FeynmanKacConfig {
    fn default() -> Self {
        FeynmanKacConfig {
            n_paths: 20_000,
            n_time: 64,
            seed: 1,
            target_stderr: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionSource {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrectionEstimate {
    pub value: f64,
    pub stderr: f64,
    pub source: CorrectionSource,
    /// The Monte Carlo standard error stayed above the requested target.
    pub budget_exceeded: bool,
}

impl CorrectionEstimate {
    fn exact(value: f64) -> Self {
        CorrectionEstimate {
            value,
            stderr: 0.0,
            source: CorrectionSource::ClosedForm,
            budget_exceeded: false,
        }
    }

    pub fn summary(&self) -> Summary {
        Summary {
            mean: self.value,
            stderr: self.stderr,
            n: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionKind {
    /// `v⁰ + √δ v¹`
    FirstOrder,
    /// `v⁰ + √δ ṽ¹`
    FirstOrderQuarter,
    /// `v⁰ + δ^{2α} ṽ^{2α}`
    PerturbationCorrection,
    /// `ṽ⁰`
    LeadingOrderOwn,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Region {
    /// No region split applies.
    All,
    /// Base strategy differs from `π⁰` ahead of `t`.
    K,
    /// Base strategy equals `π⁰` from `t` on.
    C,
    /// Perturbation is active ahead of `t`.
    K1,
    /// Perturbation vanishes from `t` on.
    C1,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproximationChoice {
    pub expansion: ExpansionKind,
    /// The approximation error is `O(δ^p)` with this `p`.
    pub accuracy_exponent: f64,
    pub region: Region,
    pub note: Option<String>,
}

impl ApproximationChoice {
    fn new(expansion: ExpansionKind, accuracy_exponent: f64, region: Region) -> Self {
        ApproximationChoice {
            expansion,
            accuracy_exponent,
            region,
            note: None,
        }
    }

    fn indeterminate(note: &str) -> Self {
        ApproximationChoice {
            expansion: ExpansionKind::Indeterminate,
            accuracy_exponent: f64::NAN,
            region: Region::Unknown,
            note: Some(note.to_string()),
        }
    }
}
