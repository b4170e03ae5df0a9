use std::sync::Arc;

use serde::Serialize;
use slowvol::dynamics::{
    feller_check, simulate, FellerReport, Leg, MarketModel, NoInvestment, PathConfig, Start, Strategy,
};
use slowvol::expansion::{ApproximationChoice, CorrectionEstimate, CorrectionSource, Expansion, FeynmanKacConfig};
use slowvol::merton::merton_residuals;
use slowvol::montecarlo::{
    convergence_study_with, optimality_compare, CaseTag, Comparator, ConvergenceOptions, ConvergenceStudy, Estimator,
    OptimalityReport,
};
use slowvol::numdiff::derivative_auto;
use slowvol::riccati::{g_moment_closed_form, moment_function, riccati_integrate, RiccatiSpec, RiccatiVariant};
use slowvol::stats::summarize;
use slowvol::utility::{assumption1_report, log_grid, Assumption1Report};
use slowvol::{merton_value, MertonMethod, Utility};

use crate::config::{in_section, ComparatorChoice, Config, ExpandSection, StrategyChoice};
use crate::output::Output;
use crate::{Failure, Outcome};

pub struct Context {
    pub cfg: Config,
    pub seed: Option<u64>,
    pub out: Output,
}

fn status(pass: bool) -> Outcome {
    if pass {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

#[derive(Serialize)]
struct MertonSummary<'a> {
    status: Outcome,
    closed_form: bool,
    lambda: f64,
    sigma: f64,
    horizon: f64,
    max_hjb_residual: f64,
    max_vega_gamma_residual: f64,
    max_tolerance_vega_residual: f64,
    tolerance: f64,
    marginal_positive: bool,
    concave: bool,
    risk_tolerance_increasing: bool,
    value_decreasing_in_t: bool,
    /// Largest relative error of `H(H^{-1}(x, t), t) = x` over the grid.
    heat_round_trip: f64,
    assumptions: Option<Assumption1Report>,
    config: &'a Config,
}

pub fn merton(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = &ctx.cfg;
    let s = cfg.section("merton", &cfg.merton)?;
    let horizon = cfg.horizon()?;
    let u = cfg.utility()?;
    let sigma = s.sigma.unwrap_or(1.0);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Failure::Validation(format!(
            "merton.sigma: must be positive, got {sigma}"
        )));
    }
    let sol = merton_value(&u, s.lambda, horizon, cfg.method()?).map_err(in_section("merton"))?;
    let mut rows = Vec::with_capacity(s.t.len() * s.x.len());
    let mut res = [0.0_f64; 3];
    let mut round_trip = 0.0_f64;
    let (mut positive, mut concave, mut increasing, mut decreasing) = (true, true, true, true);
    let mut xs = s.x.clone();
    xs.sort_by(f64::total_cmp);
    let mut ts = s.t.clone();
    ts.sort_by(f64::total_cmp);
    for &t in &s.t {
        for &x in &s.x {
            let m = sol.value(t, x)?;
            let p = sol.point(t, x)?;
            rows.push(vec![t, x, m, p.m_x, p.m_xx(), p.r, sol.optimal_amount(t, x, sigma)?]);
            let h = sol.heat(sol.heat_inverse(x, t)?, t)?;
            round_trip = round_trip.max((h - x).abs() / x);
            positive &= p.m_x > 0.0;
            concave &= p.m_xx() < 0.0;
            if t < horizon {
                let r = merton_residuals(&sol, t, x)?;
                res[0] = res[0].max(r.hjb.abs());
                res[1] = res[1].max(r.vega_gamma.abs());
                res[2] = res[2].max(r.tolerance_vega.abs());
            }
        }
    }
    for &t in &ts {
        let r: Vec<f64> = xs.iter().map(|&x| sol.risk_tolerance(t, x)).collect::<Result<_, _>>()?;
        increasing &= r.windows(2).all(|w| w[1] > w[0]);
    }
    for &x in &xs {
        let m: Vec<f64> = ts.iter().map(|&t| sol.value(t, x)).collect::<Result<_, _>>()?;
        decreasing &= m.windows(2).all(|w| w[1] <= w[0]);
    }
    ctx.out
        .write_csv(&["t", "x", "M", "M_x", "M_xx", "R", "pi_star"], &rows)?;
    let tolerance = s.tolerance.unwrap_or(1e-5);
    let assumptions = if s.assumptions.unwrap_or(false) {
        Some(assumption1_report(&u, &log_grid(1e-2, 1e2, 120), 1e8).map_err(in_section("utility"))?)
    } else {
        None
    };
    let pass = res.iter().all(|&r| r < tolerance)
        && positive
        && concave
        && increasing
        && decreasing
        && round_trip < 1e-9
        && assumptions.as_ref().is_none_or(|a| a.passed());
    ctx.out.write_summary(&MertonSummary {
        status: status(pass),
        closed_form: sol.is_closed_form(),
        lambda: s.lambda,
        sigma,
        horizon,
        max_hjb_residual: res[0],
        max_vega_gamma_residual: res[1],
        max_tolerance_vega_residual: res[2],
        tolerance,
        marginal_positive: positive,
        concave,
        risk_tolerance_increasing: increasing,
        value_decreasing_in_t: decreasing,
        heat_round_trip: round_trip,
        assumptions,
        config: cfg,
    })?;
    Ok(status(pass))
}

#[derive(Serialize)]
struct ExpandSummary<'a> {
    status: Outcome,
    delta: f64,
    feller: Option<FellerReport>,
    /// Largest relative gap between `v0_z` and a finite difference of `v0` in `z`.
    max_z_consistency: f64,
    tolerance: f64,
    correction: Option<CorrectionCheck>,
    config: &'a Config,
}

#[derive(Serialize)]
struct CorrectionCheck {
    start: Start,
    v1: f64,
    /// `ṽ^{2α}` from the evaluator: closed form when the utility allows it.
    correction: CorrectionEstimate,
    /// `ṽ^{2α}` by Feynman-Kac Monte Carlo along Merton wealth paths.
    monte_carlo: CorrectionEstimate,
    /// `|monte_carlo - correction|` in Monte Carlo standard errors.
    deviation: f64,
    /// `ṽ¹` for `α = 1/4`.
    quarter: f64,
}

fn correction_check(
    cfg: &Config,
    exp: &Arc<Expansion>,
    c: f64,
    s: &ExpandSection,
    seed: Option<u64>,
) -> Result<CorrectionCheck, Failure> {
    let start = cfg.start()?;
    let d = FeynmanKacConfig::default();
    let fk = FeynmanKacConfig {
        n_paths: s.fk_paths.unwrap_or(d.n_paths),
        n_time: s.fk_steps.unwrap_or(d.n_time),
        seed: seed.or(cfg.mc.as_ref().and_then(|m| m.seed)).unwrap_or(d.seed),
        ..d
    };
    let fam = exp.pi0_family(1.0, c, 0.25).map_err(in_section("expand"))?;
    let (t, x, z) = (start.t, start.x, start.z);
    let correction = exp.vtilde_2alpha(&fam, t, x, z, &fk)?;
    let monte_carlo = exp.vtilde_2alpha_monte_carlo(fam.perturbation.as_ref(), t, x, z, &fk)?;
    let quarter = exp.vtilde1_quarter(&fam, t, x, z, &fk)?.value;
    let deviation = if correction.source == CorrectionSource::ClosedForm {
        (monte_carlo.value - correction.value).abs() / monte_carlo.stderr
    } else {
        0.0
    };
    Ok(CorrectionCheck {
        start,
        v1: exp.v1(t, x, z)?,
        correction,
        monte_carlo,
        deviation,
        quarter,
    })
}

pub fn expand(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = &ctx.cfg;
    let s = cfg.section("expand", &cfg.expand)?;
    let model = cfg.model()?;
    let u = cfg.utility()?;
    let exp = Arc::new(Expansion::new(&model, &u, cfg.horizon()?, cfg.method()?)?);
    let delta = model.delta();
    let mut rows = Vec::new();
    let mut worst = 0.0_f64;
    for &t in &s.t {
        for &x in &s.x {
            for &z in &s.z {
                let p = exp.point(t, x, z)?;
                rows.push(vec![t, x, z, p.v0, p.v1, p.pi0, p.first_order(delta)]);
                if p.v0_z != 0.0 {
                    let mut failed = None;
                    let d = derivative_auto(
                        |zz| match exp.v0(t, x, zz) {
                            Ok(v) => v,
                            Err(e) => {
                                failed = Some(e);
                                f64::NAN
                            }
                        },
                        z,
                        1,
                    );
                    if let Some(e) = failed {
                        return Err(e.into());
                    }
                    worst = worst.max((d.value - p.v0_z).abs() / p.v0_z.abs());
                }
            }
        }
    }
    ctx.out
        .write_csv(&["t", "x", "z", "v0", "v1", "pi0", "v0_plus_sqrtdelta_v1"], &rows)?;
    let tolerance = s.tolerance.unwrap_or(1e-5);
    let correction = s
        .perturbation
        .map(|c| correction_check(cfg, &exp, c, s, ctx.seed))
        .transpose()?;
    let pass = worst <= tolerance && correction.as_ref().is_none_or(|c| c.deviation < 3.0);
    ctx.out.write_summary(&ExpandSummary {
        status: status(pass),
        delta,
        feller: feller_check(&model).ok(),
        max_z_consistency: worst,
        tolerance,
        correction,
        config: cfg,
    })?;
    Ok(status(pass))
}

#[derive(Serialize)]
struct ConvergeSummary<'a> {
    status: Outcome,
    passed: bool,
    study: &'a ConvergenceStudy,
    control: Option<ControlSummary<'a>>,
    paths: &'a PathConfig,
    config: &'a Config,
}

#[derive(Serialize)]
struct ControlSummary<'a> {
    comparator: ComparatorChoice,
    rate_range: (f64, f64),
    rate_ok: bool,
    study: &'a ConvergenceStudy,
}

fn comparator(c: ComparatorChoice) -> Comparator {
    match c {
        ComparatorChoice::FirstOrder => Comparator::FirstOrder,
        ComparatorChoice::LeadingOrder => Comparator::LeadingOrder,
        ComparatorChoice::InitialUtility => Comparator::InitialUtility,
    }
}

pub fn converge(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = &ctx.cfg;
    let s = cfg.section("converge", &cfg.converge)?;
    let model = cfg.model()?;
    let u = cfg.utility()?;
    let start = cfg.start()?;
    let horizon = cfg.horizon()?;
    let paths = cfg.paths(ctx.seed)?;
    let choice = s.strategy.unwrap_or(StrategyChoice::Pi0);
    let strategy: Option<Arc<dyn Strategy>> = match choice {
        StrategyChoice::Pi0 => None,
        StrategyChoice::None => Some(Arc::new(NoInvestment)),
    };
    let estimator = s.estimator.unwrap_or(match choice {
        StrategyChoice::Pi0 => Estimator::Paired,
        StrategyChoice::None => Estimator::Plain,
    });
    let opts = ConvergenceOptions {
        strategy,
        comparator: comparator(s.comparator.unwrap_or(ComparatorChoice::FirstOrder)),
        estimator,
        rate_range: (s.rate_min.unwrap_or(0.7), s.rate_max.unwrap_or(1.3)),
    };
    let study =
        convergence_study_with(&model, &u, start, horizon, &s.deltas, &paths, &opts).map_err(in_section("converge"))?;
    let control = s.control_comparator.map(|c| {
        let range = (s.control_rate_min.unwrap_or(0.35), s.control_rate_max.unwrap_or(0.65));
        (c, range, study.against(&comparator(c)))
    });
    let rows: Vec<Vec<f64>> = study
        .rows
        .iter()
        .map(|r| {
            vec![
                r.delta,
                r.estimate,
                r.stderr,
                r.comparator,
                r.error,
                r.scaled_difference,
            ]
        })
        .collect();
    ctx.out.write_csv(
        &[
            "delta",
            "estimate",
            "stderr",
            "comparator",
            "error",
            "scaled_difference",
        ],
        &rows,
    )?;
    let control_ok = control
        .as_ref()
        .is_none_or(|(_, (lo, hi), c)| c.fitted_rate >= *lo && c.fitted_rate <= *hi);
    let passed = study.passed() && control_ok;
    let outcome = if study.inconclusive() || study.budget_warning && !study.exact() {
        Outcome::Inconclusive
    } else {
        status(passed)
    };
    ctx.out.write_summary(&ConvergeSummary {
        status: outcome,
        passed,
        study: &study,
        control: control.as_ref().map(|(c, range, st)| ControlSummary {
            comparator: *c,
            rate_range: *range,
            rate_ok: st.fitted_rate >= range.0 && st.fitted_rate <= range.1,
            study: st,
        }),
        paths: &paths,
        config: cfg,
    })?;
    Ok(outcome)
}

#[derive(Serialize)]
struct OptimalitySummary<'a> {
    status: Outcome,
    report: &'a OptimalityReport,
    approximation: ApproximationChoice,
    /// `ṽ^{2α}` at the start point for families built on `π⁰`.
    correction: Option<CorrectionEstimate>,
    /// `δ^{2α-1/2} ṽ^{2α}` per δ, the leading behaviour of the scaled difference.
    predicted_scaled_difference: Option<Vec<f64>>,
    expected_case: Option<&'a str>,
    paths: &'a PathConfig,
    config: &'a Config,
}

fn parse_case(s: &str) -> Result<CaseTag, Failure> {
    Ok(match s {
        "i" => CaseTag::Zero,
        "ii" => CaseTag::FiniteNegative,
        "iii" => CaseTag::Divergent,
        "iv" => CaseTag::LeadingOrderGap,
        "indeterminate" => CaseTag::Indeterminate,
        other => {
            return Err(Failure::Validation(format!(
                "optimality.expected_case: expected i, ii, iii, iv or indeterminate, got {other}"
            )))
        }
    })
}

pub fn optimality(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = &ctx.cfg;
    let s = cfg.section("optimality", &cfg.optimality)?;
    let expected = s.expected_case.as_deref().map(parse_case).transpose()?;
    let model = cfg.model()?;
    let u = cfg.utility()?;
    let start: Start = cfg.start()?;
    let horizon = cfg.horizon()?;
    let paths = cfg.paths(ctx.seed)?;
    let exp = Arc::new(Expansion::new(&model, &u, horizon, cfg.method()?)?);
    let fam = exp
        .pi0_family(s.base, s.perturbation, s.alpha)
        .map_err(in_section("optimality"))?;
    let report =
        optimality_compare(&model, &u, &fam, start, horizon, &s.deltas, &paths).map_err(in_section("optimality"))?;
    let approximation = exp.approximation_select(&fam, start.t, start.x, start.z)?;
    let correction = if s.base == 1.0 {
        let fk = FeynmanKacConfig {
            seed: paths.seed,
            ..Default::default()
        };
        Some(exp.vtilde_2alpha(&fam, start.t, start.x, start.z, &fk)?)
    } else {
        None
    };
    let predicted = correction.map(|c| {
        s.deltas
            .iter()
            .map(|d| d.powf(2.0 * s.alpha - 0.5) * c.value)
            .collect::<Vec<_>>()
    });
    let rows: Vec<Vec<f64>> = report
        .per_delta_table
        .iter()
        .map(|r| {
            vec![
                r.delta,
                r.estimate,
                r.stderr,
                r.comparator,
                r.difference,
                r.difference_stderr,
                r.scaled_difference,
            ]
        })
        .collect();
    ctx.out.write_csv(
        &[
            "delta",
            "estimate",
            "stderr",
            "comparator",
            "error",
            "error_stderr",
            "scaled_difference",
        ],
        &rows,
    )?;
    let outcome = if report.case_tag == CaseTag::Indeterminate && expected != Some(CaseTag::Indeterminate) {
        Outcome::Inconclusive
    } else {
        status(report.never_significantly_positive && expected.is_none_or(|c| c == report.case_tag))
    };
    ctx.out.write_summary(&OptimalitySummary {
        status: outcome,
        report: &report,
        approximation,
        correction,
        predicted_scaled_difference: predicted,
        expected_case: s.expected_case.as_deref(),
        paths: &paths,
        config: cfg,
    })?;
    Ok(outcome)
}

#[derive(Serialize)]
struct RiccatiSummary<'a> {
    status: Outcome,
    spec: RiccatiSpec,
    /// Analytic explosion time; `null` when the solution stays bounded.
    tau_star: Option<f64>,
    /// Step interval in which the integrator exceeded its cap.
    blowup_bracket: Option<(f64, f64)>,
    bracket_contains_tau_star: Option<bool>,
    step: f64,
    /// Largest relative gap between numeric and closed-form `A`.
    max_closed_form_gap: Option<f64>,
    tolerance: f64,
    monte_carlo: Option<MomentCheck>,
    config: &'a Config,
}

#[derive(Serialize)]
struct MomentCheck {
    start: Start,
    horizon: f64,
    moment: f64,
    monte_carlo: f64,
    stderr: f64,
    /// `|monte_carlo - moment|` in standard errors.
    deviation: f64,
    paths: PathConfig,
}

// Simulates the quantity whose expectation the Riccati solution gives.
fn moment_check(cfg: &Config, spec: &RiccatiSpec, horizon: f64, seed: Option<u64>) -> Result<MomentCheck, Failure> {
    let start = cfg.start()?;
    let paths = cfg.paths(seed)?;
    let r = "riccati";
    let (mu, rho, gamma, p, k, w) = match spec.variant {
        RiccatiVariant::GMoment { w } => (0.0, 0.0, None, 0.0, 0.0, w),
        RiccatiVariant::WealthSecondMoment { mu, gamma, rho } => (mu, rho, Some(gamma), 2.0, 1.0, 0.0),
        RiccatiVariant::WealthPowerMoment {
            mu,
            gamma,
            rho,
            exponent,
            leverage,
        } => (mu, rho, Some(gamma), exponent, leverage, 0.0),
    };
    let model = MarketModel::cir(mu, spec.m, spec.beta, rho, spec.delta).map_err(in_section(r))?;
    let strategy: Arc<dyn Strategy> = match gamma {
        None => Arc::new(NoInvestment),
        Some(g) => {
            let u = Utility::power(g).map_err(in_section(r))?;
            let exp = Arc::new(Expansion::new(&model, &u, start.t + horizon, MertonMethod::Auto)?);
            exp.pi0_family(k, 0.0, 1.0).map_err(in_section(r))?.base
        }
    };
    let leg = Leg {
        model,
        strategy: strategy.as_ref(),
        control: None,
    };
    let sim = simulate(&[leg], start, start.t + horizon, &paths).map_err(in_section(r))?;
    let legs = &sim.legs[0];
    let samples: Vec<f64> = if gamma.is_none() {
        legs.terminal_z.iter().map(|z| (w * z).exp()).collect()
    } else {
        legs.terminal.iter().map(|x| x.powf(p)).collect()
    };
    let s = summarize(&samples, sim.antithetic);
    let moment = moment_function(spec, start.t, start.z, start.t + horizon, start.x).map_err(in_section(r))?;
    Ok(MomentCheck {
        start,
        horizon,
        moment,
        monte_carlo: s.mean,
        stderr: s.stderr,
        deviation: (s.mean - moment).abs() / s.stderr,
        paths,
    })
}

pub fn riccati(ctx: &Context) -> Result<Outcome, Failure> {
    let cfg = &ctx.cfg;
    let s = cfg.section("riccati", &cfg.riccati)?;
    let spec = s.spec()?;
    let points = s.points.unwrap_or(101);
    if points < 2 {
        return Err(Failure::Validation("riccati.points: need at least 2".into()));
    }
    let sol = riccati_integrate(&spec, s.tau_max, s.step).map_err(in_section("riccati"))?;
    let closed = g_moment_closed_form(&spec).ok();
    let tau_star = closed.map_or_else(|| spec.explosion_time(), |c| c.tau_star);
    let mut rows = Vec::with_capacity(points);
    let mut gap: Option<f64> = None;
    for i in 0..points {
        let tau = s.tau_max * i as f64 / (points - 1) as f64;
        if tau > sol.tau_end() {
            break;
        }
        let (a, b) = sol.eval(tau)?;
        let exact = closed.and_then(|c| c.a(tau).ok());
        if let Some(e) = exact {
            let g = if e == 0.0 { a.abs() } else { (a - e).abs() / e.abs() };
            gap = Some(gap.map_or(g, |m| m.max(g)));
        }
        rows.push(vec![tau, exact.unwrap_or(f64::NAN), a, b]);
    }
    ctx.out.write_csv(&["tau", "A_closed", "A_numeric", "B"], &rows)?;
    let tolerance = s.tolerance.unwrap_or(1e-8);
    let contains = match (sol.blowup, tau_star) {
        (Some((lo, hi)), Some(ts)) => Some(lo <= ts && ts <= hi),
        _ => None,
    };
    let monte_carlo = s
        .check_horizon
        .map(|h| moment_check(cfg, &spec, h, ctx.seed))
        .transpose()?;
    let pass = gap.is_none_or(|g| g <= tolerance)
        && contains != Some(false)
        && monte_carlo.as_ref().is_none_or(|m| m.deviation < 3.0);
    ctx.out.write_summary(&RiccatiSummary {
        status: status(pass),
        spec,
        tau_star,
        blowup_bracket: sol.blowup,
        bracket_contains_tau_star: contains,
        step: sol.step,
        max_closed_form_gap: gap,
        tolerance,
        monte_carlo,
        config: cfg,
    })?;
    Ok(status(pass))
}
