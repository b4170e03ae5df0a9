//! Study configuration: one TOML file of dotted keys such as `model.mu = 0.3`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use slowvol::dynamics::{FactorScheme, MarketModel, PathConfig, Start, WealthScheme};
use slowvol::riccati::{RiccatiSpec, RiccatiVariant};
use slowvol::{MertonMethod, Utility};

use crate::Failure;

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    /// Base name of the output files; defaults to the command name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub study: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilitySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<StartSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merton: Option<MertonSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expand: Option<ExpandSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converge: Option<ConvergeSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimality: Option<OptimalitySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub riccati: Option<RiccatiSection>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub mu: f64,
    pub m: f64,
    pub beta: f64,
    pub rho: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    Power,
    MixturePowers,
    PowerMeasure,
    InverseMarginal,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct UtilitySection {
    pub class: UtilityKind,
    /// Power utility `x^γ/γ`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Mixture `Σ c x^γ/γ`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    /// Power measure `Σ w x^p`, or inverse marginal `I(y) = Σ w y^{-s}`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exponents: Option<Vec<f64>>,
    /// `auto`, `closed_form` or `quadrature`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StartSection {
    pub t: f64,
    pub x: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub antithetic: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crn: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor_scheme: Option<FactorScheme>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wealth_scheme: Option<WealthScheme>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_check: Option<bool>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MertonSection {
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    /// Largest accepted normalized residual.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Run the smoothness and growth checks on the risk tolerance over
    /// `[1e-2, 1e2]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assumptions: Option<bool>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExpandSection {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// Largest accepted relative gap between `v⁰_z` and its finite difference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// `c` in `π̃¹ = c π⁰`: also report the correction `ṽ^{2α}` at `start`,
    /// in closed form where available and by Feynman-Kac Monte Carlo.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fk_paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fk_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyChoice {
    Pi0,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorChoice {
    FirstOrder,
    LeadingOrder,
    InitialUtility,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeSection {
    pub deltas: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparator: Option<ComparatorChoice>,
    /// A second comparator scored on the same simulation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_comparator: Option<ComparatorChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<slowvol::montecarlo::Estimator>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_max: Option<f64>,
    /// Accepted rate range for the control comparator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_rate_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_rate_max: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OptimalitySection {
    pub deltas: Vec<f64>,
    pub alpha: f64,
    /// Base strategy as a multiple of `π⁰`.
    pub base: f64,
    /// Perturbation as a multiple of `π⁰`.
    pub perturbation: f64,
    /// `i`, `ii`, `iii` or `iv`; a mismatch fails the study.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_case: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RiccatiKind {
    GMoment,
    WealthSecondMoment,
    WealthPowerMoment,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RiccatiSection {
    pub variant: RiccatiKind,
    pub delta: f64,
    pub beta: f64,
    pub m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leverage: Option<f64>,
    pub tau_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Also compare the moment at this maturity, from `start`, with Monte Carlo.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check_horizon: Option<f64>,
}

fn missing(key: &str) -> Failure {
    Failure::Validation(format!("{key}: missing"))
}

fn field<T>(section: &str, key: &str, value: Option<T>) -> Result<T, Failure> {
    value.ok_or_else(|| missing(&format!("{section}.{key}")))
}

/// Prefixes a library validation error with the config section it came from.
pub fn in_section(section: &str) -> impl Fn(slowvol::Error) -> Failure + '_ {
    move |e| match e {
        slowvol::Error::InvalidParameter { name, reason } => Failure::Validation(format!("{section}.{name}: {reason}")),
        other => Failure::from(other),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, Failure> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config, Failure> {
        let cfg: Config = toml::from_str(text).map_err(|e| Failure::Validation(e.to_string()))?;
        match cfg.version {
            None | Some(VERSION) => Ok(cfg),
            Some(v) => Err(Failure::Validation(format!("version: unsupported config version {v}"))),
        }
    }

    pub fn horizon(&self) -> Result<f64, Failure> {
        let h = field("", "horizon", self.horizon).map_err(|_| missing("horizon"))?;
        if !(h.is_finite() && h > 0.0) {
            return Err(Failure::Validation(format!("horizon: must be positive, got {h}")));
        }
        Ok(h)
    }

    pub fn model(&self) -> Result<MarketModel, Failure> {
        let m = self.model.as_ref().ok_or_else(|| missing("model"))?;
        MarketModel::cir(m.mu, m.m, m.beta, m.rho, m.delta).map_err(in_section("model"))
    }

    pub fn utility(&self) -> Result<Utility, Failure> {
        let u = self.utility.as_ref().ok_or_else(|| missing("utility"))?;
        let built = match u.class {
            UtilityKind::Power => Utility::power(field("utility", "gamma", u.gamma)?),
            UtilityKind::MixturePowers => Utility::mixture(
                &field("utility", "coeffs", u.coeffs.clone())?,
                &field("utility", "gammas", u.gammas.clone())?,
            ),
            UtilityKind::PowerMeasure => Utility::power_measure(
                &field("utility", "weights", u.weights.clone())?,
                &field("utility", "exponents", u.exponents.clone())?,
            ),
            UtilityKind::InverseMarginal => Utility::inverse_marginal(
                &field("utility", "weights", u.weights.clone())?,
                &field("utility", "exponents", u.exponents.clone())?,
            ),
        };
        built.map_err(in_section("utility"))
    }

    pub fn method(&self) -> Result<MertonMethod, Failure> {
        let u = self.utility.as_ref().ok_or_else(|| missing("utility"))?;
        match u.method.as_deref() {
            None | Some("auto") => Ok(MertonMethod::Auto),
            Some("closed_form") => Ok(MertonMethod::ClosedForm),
            Some("quadrature") => Ok(MertonMethod::Quadrature {
                nodes: u.nodes.unwrap_or(slowvol::merton::DEFAULT_NODES),
            }),
            Some(other) => Err(Failure::Validation(format!(
                "utility.method: expected auto, closed_form or quadrature, got {other}"
            ))),
        }
    }

    pub fn start(&self) -> Result<Start, Failure> {
        let s = self.start.as_ref().ok_or_else(|| missing("start"))?;
        Ok(Start { t: s.t, x: s.x, z: s.z })
    }

    /// Path settings, with `seed` overriding the configured seed.
    pub fn paths(&self, seed: Option<u64>) -> Result<PathConfig, Failure> {
        let d = PathConfig::default();
        let mc = self.mc.clone().unwrap_or_default();
        let cfg = PathConfig {
            n_paths: mc.paths.unwrap_or(d.n_paths),
            n_steps: mc.steps.unwrap_or(d.n_steps),
            seed: seed.or(mc.seed).unwrap_or(d.seed),
            factor_scheme: mc.factor_scheme.unwrap_or(d.factor_scheme),
            wealth_scheme: mc.wealth_scheme.unwrap_or(d.wealth_scheme),
            antithetic: mc.antithetic.unwrap_or(d.antithetic),
            common_random_numbers: mc.crn.unwrap_or(d.common_random_numbers),
            bias_check: mc.bias_check.unwrap_or(d.bias_check),
            dump_paths: 0,
        };
        cfg.validate().map_err(in_section("mc"))?;
        Ok(cfg)
    }

    pub fn section<'a, T>(&self, name: &str, s: &'a Option<T>) -> Result<&'a T, Failure> {
        s.as_ref().ok_or_else(|| missing(name))
    }
}

impl RiccatiSection {
    pub fn spec(&self) -> Result<RiccatiSpec, Failure> {
        let r = "riccati";
        let variant = match self.variant {
            RiccatiKind::GMoment => RiccatiVariant::GMoment {
                w: field(r, "w", self.w)?,
            },
            RiccatiKind::WealthSecondMoment => RiccatiVariant::WealthSecondMoment {
                mu: field(r, "mu", self.mu)?,
                gamma: field(r, "gamma", self.gamma)?,
                rho: field(r, "rho", self.rho)?,
            },
            RiccatiKind::WealthPowerMoment => RiccatiVariant::WealthPowerMoment {
                mu: field(r, "mu", self.mu)?,
                gamma: field(r, "gamma", self.gamma)?,
                rho: field(r, "rho", self.rho)?,
                exponent: field(r, "exponent", self.exponent)?,
                leverage: self.leverage.unwrap_or(1.0),
            },
        };
        let spec = RiccatiSpec {
            delta: self.delta,
            beta: self.beta,
            m: self.m,
            variant,
        };
        spec.validate().map_err(in_section(r))?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_parse() {
        let cfg = Config::parse(
            "version = 1\nhorizon = 1.0\nmodel.mu = 0.3\nmodel.m = 1.0\nmodel.beta = 0.5\nmodel.rho = -0.5\n\
             model.delta = 0.1\nutility.class = \"power\"\nutility.gamma = 0.4\nmc.paths = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.model().unwrap().delta(), 0.1);
        assert_eq!(cfg.paths(Some(7)).unwrap().seed, 7);
        assert_eq!(cfg.paths(None).unwrap().n_paths, 10);
        assert!(cfg.utility().is_ok());
    }

    #[test]
    fn errors_name_the_field() {
        let e = Config::parse("model.mu = 0.3\nmodel.typo = 1\n").unwrap_err();
        assert!(e.to_string().contains("typo"), "{e}");
        let cfg = Config::parse("utility.class = \"power\"\nutility.gamma = 1.5\n").unwrap();
        let e = cfg.utility().unwrap_err().to_string();
        assert!(e.starts_with("utility.gamma"), "{e}");
        let cfg = Config::parse("utility.class = \"mixture_powers\"\n").unwrap();
        assert_eq!(cfg.utility().unwrap_err().to_string(), "utility.coeffs: missing");
        assert!(Config::parse("version = 2\n").is_err());
    }
}
