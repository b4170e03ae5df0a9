//! The market model and a path simulator for wealth under a slow factor.
//!
//! Stock: `dS/S = μ(Z) dt + σ(Z) dW`. Factor:
//! `dZ = δ c(Z) dt + √δ g(Z) dW^Z` with `d⟨W, W^Z⟩ = ρ dt`. Wealth invested
//! as `π(t, X, Z)` dollars follows `dX = π μ(Z) dt + π σ(Z) dW`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::merton::MertonSolution;

/// Coefficient functions of the model.
pub trait Coefficients: Send + Sync + fmt::Debug {
    /// Stock drift `μ(z)`.
    fn mu(&self, z: f64) -> f64;
    /// Stock volatility `σ(z) > 0`.
    fn sigma(&self, z: f64) -> f64;
    /// Factor drift `c(z)`.
    fn c(&self, z: f64) -> f64;
    /// Factor volatility `g(z)`.
    fn g(&self, z: f64) -> f64;

    /// `g'(z)`, needed by the Milstein step.
    fn g_prime(&self, z: f64) -> f64 {
        let h = 1e-5 * z.abs().max(1.0);
        (self.g(z + h) - self.g(z - h)) / (2.0 * h)
    }

    fn lambda(&self, z: f64) -> f64 {
        self.mu(z) / self.sigma(z)
    }

    /// `λ'(z)`; central difference with relative step `1e-5` unless overridden.
    fn lambda_prime(&self, z: f64) -> f64 {
        let h = 1e-5 * z.abs().max(1e-3);
        (self.lambda(z + h) - self.lambda(z - h)) / (2.0 * h)
    }

    /// Coefficients are evaluated at `max(z, floor)` when a floor is given.
    fn floor(&self) -> Option<f64> {
        None
    }

    /// CIR parameters, when the model is the CIR instance.
    fn cir(&self) -> Option<Cir> {
        None
    }
}

/// CIR factor with `μ(z) = μ`, `σ(z) = 1/√z`, `c(z) = m - z`, `g(z) = β√z`,
/// so `λ(z) = μ√z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cir {
    pub mu: f64,
    pub m: f64,
    pub beta: f64,
}

/// Smallest factor value at which CIR coefficients are evaluated.
pub const CIR_FLOOR: f64 = 1e-12;

impl Coefficients for Cir {
    fn mu(&self, _z: f64) -> f64 {
        self.mu
    }
    fn sigma(&self, z: f64) -> f64 {
        1.0 / z.sqrt()
    }
    fn c(&self, z: f64) -> f64 {
        self.m - z
    }
    fn g(&self, z: f64) -> f64 {
        self.beta * z.sqrt()
    }
    fn g_prime(&self, z: f64) -> f64 {
        0.5 * self.beta / z.sqrt()
    }
    fn lambda(&self, z: f64) -> f64 {
        self.mu * z.sqrt()
    }
    fn lambda_prime(&self, z: f64) -> f64 {
        0.5 * self.mu / z.sqrt()
    }
    fn floor(&self) -> Option<f64> {
        Some(CIR_FLOOR)
    }
    fn cir(&self) -> Option<Cir> {
        Some(*self)
    }
}

/// Coefficients given as closures.
#[derive(Clone)]
pub struct FnCoefficients {
    pub mu: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub sigma: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub c: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub g: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for FnCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnCoefficients")
    }
}

impl Coefficients for FnCoefficients {
    fn mu(&self, z: f64) -> f64 {
        (self.mu)(z)
    }
    fn sigma(&self, z: f64) -> f64 {
        (self.sigma)(z)
    }
    fn c(&self, z: f64) -> f64 {
        (self.c)(z)
    }
    fn g(&self, z: f64) -> f64 {
        (self.g)(z)
    }
}

/// Coefficients, correlation and time-scale parameter.
#[derive(Debug, Clone)]
pub struct MarketModel {
    coeffs: Arc<dyn Coefficients>,
    rho: f64,
    delta: f64,
}

impl MarketModel {
    /// `|ρ| < 1`; `0 <= δ <= 1`, where `δ = 0` freezes the factor.
    pub fn new(coeffs: Arc<dyn Coefficients>, rho: f64, delta: f64) -> Result<Self> {
        ensure_finite("rho", rho)?;
        if rho.abs() >= 1.0 {
            return Err(Error::invalid("rho", format!("|rho| must be < 1, got {rho}")));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::invalid("delta", format!("must lie in [0, 1], got {delta}")));
        }
        Ok(MarketModel { coeffs, rho, delta })
    }

    pub fn cir(mu: f64, m: f64, beta: f64, rho: f64, delta: f64) -> Result<Self> {
        ensure_finite("mu", mu)?;
        ensure_positive("m", m)?;
        ensure_positive("beta", beta)?;
        Self::new(Arc::new(Cir { mu, m, beta }), rho, delta)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.coeffs.clone(), self.rho, delta)
    }

    pub fn coefficients(&self) -> &dyn Coefficients {
        &*self.coeffs
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Factor value used for coefficient evaluation.
    pub fn clamp_z(&self, z: f64) -> f64 {
        match self.coeffs.floor() {
            Some(f) => z.max(f),
            None => z,
        }
    }

    /// Model quantities with the factor frozen at `z`.
    pub fn freeze(&self, z: f64) -> SlowFactorFrozen {
        let c = &self.coeffs;
        SlowFactorFrozen {
            z,
            mu: c.mu(z),
            sigma: c.sigma(z),
            lambda: c.lambda(z),
            lambda_prime: c.lambda_prime(z),
            g: c.g(z),
            rho: self.rho,
        }
    }
}

/// The model at a fixed factor level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlowFactorFrozen {
    pub z: f64,
    pub mu: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub g: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FellerReport {
    pub satisfied: bool,
    /// `2m - β²`
    pub margin: f64,
}

/// `β² <= 2m` for the CIR model, up to rounding in `β²`.
pub fn feller_check(model: &MarketModel) -> Result<FellerReport> {
    let cir = model
        .coeffs
        .cir()
        .ok_or_else(|| Error::NotApplicable("Feller condition is defined for the CIR model only".into()))?;
    let margin = 2.0 * cir.m - cir.beta * cir.beta;
    let slack = 4.0 * f64::EPSILON * 2.0 * cir.m;
    Ok(FellerReport {
        satisfied: margin >= -slack,
        margin,
    })
}

/// A Markov strategy: dollar amount in the stock at `(t, x, z)`.
pub trait Strategy: Send + Sync {
    fn amount(&self, t: f64, x: f64, z: f64) -> f64;
}

impl<F> Strategy for F
where
    F: Fn(f64, f64, f64) -> f64 + Send + Sync,
{
    fn amount(&self, t: f64, x: f64, z: f64) -> f64 {
        self(t, x, z)
    }
}

/// `π ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct NoInvestment;

impl Strategy for NoInvestment {
    fn amount(&self, _: f64, _: f64, _: f64) -> f64 {
        0.0
    }
}

/// `base + δ^α · perturbation`.
#[derive(Clone)]
pub struct StrategyFamily {
    pub base: Arc<dyn Strategy>,
    pub perturbation: Arc<dyn Strategy>,
    pub alpha: f64,
    /// Declares `base ≡ π⁰`. Sampling is only a fallback when this is unknown.
    pub identical_to_pi0: Option<bool>,
    /// `(c₀, c₁)` when `base = c₀ π⁰` and `perturbation = c₁ π⁰`.
    pub pi0_multiples: Option<(f64, f64)>,
}

impl fmt::Debug for StrategyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StrategyFamily")
            .field("alpha", &self.alpha)
            .field("identical_to_pi0", &self.identical_to_pi0)
            .field("pi0_multiples", &self.pi0_multiples)
            .finish()
    }
}

impl StrategyFamily {
    pub fn new(
        base: Arc<dyn Strategy>,
        perturbation: Arc<dyn Strategy>,
        alpha: f64,
        identical_to_pi0: Option<bool>,
    ) -> Result<Self> {
        ensure_positive("alpha", alpha)?;
        Ok(StrategyFamily {
            base,
            perturbation,
            alpha,
            identical_to_pi0,
            pi0_multiples: None,
        })
    }

    /// The strategy used at scale `δ`.
    pub fn at(&self, delta: f64) -> Perturbed {
        Perturbed {
            base: self.base.clone(),
            perturbation: self.perturbation.clone(),
            weight: delta.powf(self.alpha),
        }
    }
}

/// `base + weight · perturbation`.
#[derive(Clone)]
pub struct Perturbed {
    base: Arc<dyn Strategy>,
    perturbation: Arc<dyn Strategy>,
    weight: f64,
}

impl Strategy for Perturbed {
    fn amount(&self, t: f64, x: f64, z: f64) -> f64 {
        let b = self.base.amount(t, x, z);
        if self.weight == 0.0 {
            b
        } else {
            b + self.weight * self.perturbation.amount(t, x, z)
        }
    }
}

/// Gradient `(f_x, f_z)` of a smooth function of `(t, x, z)`. Along a
/// simulated path, `Σ f_x π σ ΔW + f_z √δ g ΔW^Z` with the gradient taken at
/// the start of each step is a zero-mean control variate.
pub trait Control: Send + Sync {
    fn gradient(&self, t: f64, x: f64, z: f64) -> (f64, f64);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorScheme {
    /// Euler with coefficients at `max(Z, floor)`; stored `Z` is kept nonnegative.
    EulerFullTruncation,
    Milstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WealthScheme {
    /// Euler on `X`; a path reaching `X <= 0` is absorbed at 0.
    Euler,
    /// Euler on `ln X` with proportion `π/X`; exact for proportional
    /// strategies with frozen coefficients, never reaches 0.
    LogEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub factor_scheme: FactorScheme,
    pub wealth_scheme: WealthScheme,
    pub antithetic: bool,
    pub common_random_numbers: bool,
    /// Also run every leg on the doubled time step with the same noise.
    pub bias_check: bool,
    /// Record this many paths of the first leg.
    pub dump_paths: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            n_paths: 200_000,
            n_steps: 256,
            seed: 1,
            factor_scheme: FactorScheme::EulerFullTruncation,
            wealth_scheme: WealthScheme::LogEuler,
            antithetic: false,
            common_random_numbers: true,
            bias_check: false,
            dump_paths: 0,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths", "must be positive"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps", "must be positive"));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(Error::invalid("n_paths", "must be even with antithetic sampling"));
        }
        if self.bias_check && !self.n_steps.is_multiple_of(2) {
            return Err(Error::invalid(
                "n_steps",
                "must be even for the step-halving bias check",
            ));
        }
        Ok(())
    }
}

/// Initial point `(t, x, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Start {
    pub t: f64,
    pub x: f64,
    pub z: f64,
}

/// One strategy to simulate.
#[derive(Clone)]
pub struct Leg<'a> {
    pub model: MarketModel,
    pub strategy: &'a dyn Strategy,
    pub control: Option<&'a dyn Control>,
}

/// Per-leg simulation output, indexed by path.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LegPaths {
    pub terminal: Vec<f64>,
    /// Stored factor value at the horizon.
    pub terminal_z: Vec<f64>,
    /// Accumulated control variate; empty without a control.
    pub control: Vec<f64>,
    /// Terminal wealth on the doubled step; empty without a bias check.
    pub coarse_terminal: Vec<f64>,
    pub absorbed: usize,
    pub truncations: u64,
    pub min_z: f64,
}

/// One row of the optional path dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathRecord {
    pub path_id: usize,
    pub step: usize,
    pub t: f64,
    pub x: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Simulation {
    pub legs: Vec<LegPaths>,
    pub antithetic: bool,
    pub dump: Vec<PathRecord>,
}

// Derives independent seeds for legs that do not share noise.
fn mix_seed(seed: u64, leg: usize) -> u64 {
    let mut z = seed ^ (leg as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream `stream` of the generator for `seed`. Path `p` (or antithetic pair
/// `p`) always reads the same stream, so output does not depend on scheduling.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy)]
struct State {
    x: f64,
    z: f64,
    control: f64,
    alive: bool,
}

struct Stepper<'a> {
    leg: &'a Leg<'a>,
    factor_scheme: FactorScheme,
    wealth_scheme: WealthScheme,
    sqrt_delta: f64,
    rho_bar: f64,
}

impl Stepper<'_> {
    /// Advances one step of length `dt` with standard normals `(e1, e2)`.
    /// Returns whether the factor needed truncation.
    fn step(&self, s: &mut State, t: f64, dt: f64, e1: f64, e2: f64) -> bool {
        let model = &self.leg.model;
        let co = model.coefficients();
        let truncated = model.coefficients().floor().is_some_and(|f| s.z < f);
        let zc = model.clamp_z(s.z);
        let sq = dt.sqrt();
        let dw = sq * e1;
        let dwz = sq * (model.rho * e1 + self.rho_bar * e2);
        let delta = model.delta;
        let g = co.g(zc);
        if s.alive {
            let pi = self.leg.strategy.amount(t, s.x, zc);
            let (mu, sig) = (co.mu(zc), co.sigma(zc));
            if let Some(ctrl) = self.leg.control {
                let (fx, fz) = ctrl.gradient(t, s.x, zc);
                s.control += fx * pi * sig * dw + fz * self.sqrt_delta * g * dwz;
            }
            match self.wealth_scheme {
                WealthScheme::Euler => {
                    let x = s.x + pi * mu * dt + pi * sig * dw;
                    if x <= 0.0 {
                        s.x = 0.0;
                        s.alive = false;
                    } else {
                        s.x = x;
                    }
                }
                WealthScheme::LogEuler => {
                    let th = pi / s.x;
                    s.x *= (th * mu * dt - 0.5 * th * th * sig * sig * dt + th * sig * dw).exp();
                }
            }
        }
        if delta > 0.0 {
            let mut z = s.z + delta * co.c(zc) * dt + self.sqrt_delta * g * dwz;
            if self.factor_scheme == FactorScheme::Milstein {
                z += 0.5 * delta * g * co.g_prime(zc) * (dwz * dwz - dt);
            }
            s.z = if co.floor().is_some() { z.max(0.0) } else { z };
        }
        truncated
    }
}

/// Simulates every leg over `[start.t, horizon]`. With common random
/// numbers all legs see the same Brownian increments.
pub fn simulate(legs: &[Leg<'_>], start: Start, horizon: f64, cfg: &PathConfig) -> Result<Simulation> {
    cfg.validate()?;
    if legs.is_empty() {
        return Err(Error::invalid("legs", "nothing to simulate"));
    }
    ensure_positive("x", start.x)?;
    ensure_finite("z", start.z)?;
    if !(start.t >= 0.0 && start.t <= horizon) {
        return Err(Error::invalid(
            "t",
            format!("start time {} outside [0, {horizon}]", start.t),
        ));
    }
    for leg in legs {
        if leg.model.coefficients().floor().is_some() && start.z <= 0.0 {
            return Err(Error::invalid("z", "factor must be positive for the CIR model"));
        }
        if let Ok(f) = feller_check(&leg.model) {
            if !f.satisfied {
                return Err(Error::invalid(
                    "model.beta",
                    format!("Feller condition β² <= 2m fails (margin {:.3e})", f.margin),
                ));
            }
        }
    }
    let n_legs = legs.len();
    let dt = (horizon - start.t) / cfg.n_steps as f64;
    let group = if cfg.antithetic { 2 } else { 1 };
    let n_groups = cfg.n_paths / group;
    const BLOCK: usize = 256;
    let n_blocks = n_groups.div_ceil(BLOCK);
    let steppers: Vec<Stepper> = legs
        .iter()
        .map(|leg| Stepper {
            leg,
            factor_scheme: cfg.factor_scheme,
            wealth_scheme: cfg.wealth_scheme,
            sqrt_delta: leg.model.delta.sqrt(),
            rho_bar: (1.0 - leg.model.rho * leg.model.rho).sqrt(),
        })
        .collect();
    let leg_seeds: Vec<u64> = (0..n_legs)
        .map(|j| {
            if cfg.common_random_numbers {
                cfg.seed
            } else {
                mix_seed(cfg.seed, j)
            }
        })
        .collect();
    let init = State {
        x: start.x,
        z: start.z,
        control: 0.0,
        alive: true,
    };

    type BlockOut = (Vec<LegPaths>, Vec<PathRecord>, Option<Error>);
    let blocks: Vec<BlockOut> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut out: Vec<LegPaths> = (0..n_legs)
                .map(|_| LegPaths {
                    min_z: f64::INFINITY,
                    ..Default::default()
                })
                .collect();
            let mut dump = Vec::new();
            let g_end = ((b + 1) * BLOCK).min(n_groups);
            let mut noise = vec![(0.0, 0.0); cfg.n_steps];
            for grp in b * BLOCK..g_end {
                for (j, st) in steppers.iter().enumerate() {
                    if j == 0 || !cfg.common_random_numbers {
                        let mut rng = path_rng(leg_seeds[j], grp as u64);
                        for e in noise.iter_mut() {
                            *e = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                        }
                    }
                    for sign in 0..group {
                        let path = grp * group + sign;
                        let flip = if sign == 1 { -1.0 } else { 1.0 };
                        let mut s = init;
                        let mut coarse = init;
                        let lp = &mut out[j];
                        let record = j == 0 && path < cfg.dump_paths;
                        if record {
                            dump.push(PathRecord {
                                path_id: path,
                                step: 0,
                                t: start.t,
                                x: s.x,
                                z: s.z,
                            });
                        }
                        for (k, &(e1, e2)) in noise.iter().enumerate() {
                            let t = start.t + k as f64 * dt;
                            if st.step(&mut s, t, dt, flip * e1, flip * e2) {
                                lp.truncations += 1;
                            }
                            lp.min_z = lp.min_z.min(s.z);
                            if !(s.x.is_finite() && s.z.is_finite()) {
                                return (out, dump, Some(Error::NonFinite { path, step: k + 1 }));
                            }
                            if cfg.bias_check && k % 2 == 1 {
                                let (a1, a2) = noise[k - 1];
                                let c1 = flip * (a1 + e1) / std::f64::consts::SQRT_2;
                                let c2 = flip * (a2 + e2) / std::f64::consts::SQRT_2;
                                st.step(&mut coarse, t - dt, 2.0 * dt, c1, c2);
                            }
                            if record {
                                dump.push(PathRecord {
                                    path_id: path,
                                    step: k + 1,
                                    t: t + dt,
                                    x: s.x,
                                    z: s.z,
                                });
                            }
                        }
                        lp.terminal.push(s.x);
                        lp.terminal_z.push(s.z);
                        if st.leg.control.is_some() {
                            lp.control.push(s.control);
                        }
                        if cfg.bias_check {
                            lp.coarse_terminal.push(coarse.x);
                        }
                        if !s.alive {
                            lp.absorbed += 1;
                        }
                    }
                }
            }
            (out, dump, None)
        })
        .collect();

    let mut legs_out: Vec<LegPaths> = (0..n_legs)
        .map(|_| LegPaths {
            min_z: f64::INFINITY,
            ..Default::default()
        })
        .collect();
    let mut dump = Vec::new();
    for (block, d, err) in blocks {
        if let Some(e) = err {
            return Err(e);
        }
        for (acc, part) in legs_out.iter_mut().zip(block) {
            acc.terminal.extend(part.terminal);
            acc.terminal_z.extend(part.terminal_z);
            acc.control.extend(part.control);
            acc.coarse_terminal.extend(part.coarse_terminal);
            acc.absorbed += part.absorbed;
            acc.truncations += part.truncations;
            acc.min_z = acc.min_z.min(part.min_z);
        }
        dump.extend(d);
    }
    Ok(Simulation {
        legs: legs_out,
        antithetic: cfg.antithetic,
        dump,
    })
}

/// Terminal wealths for a single strategy.
pub fn simulate_paths(
    model: &MarketModel,
    strategy: &dyn Strategy,
    start: Start,
    horizon: f64,
    cfg: &PathConfig,
) -> Result<LegPaths> {
    let leg = Leg {
        model: model.clone(),
        strategy,
        control: None,
    };
    Ok(simulate(&[leg], start, horizon, cfg)?.legs.remove(0))
}

/// Optimal Merton wealth at time `s` started from `x` at `t`, given the
/// Brownian increment `W_s - W_t`:
/// `H(H^{-1}(x, t) + λ²(s - t) + λ (W_s - W_t), s)`.
pub fn exact_merton_wealth_sample(
    sol: &MertonSolution,
    t: f64,
    x: f64,
    s: f64,
    brownian_increment: f64,
) -> Result<f64> {
    if !(s >= t) {
        return Err(Error::Domain(format!("sample time {s} precedes start {t}")));
    }
    if s == t || sol.lambda() == 0.0 {
        return Ok(x);
    }
    let l = sol.lambda();
    let xi = sol.heat_inverse(x, t)?;
    sol.heat(xi + l * l * (s - t) + l * brownian_increment, s)
}
