//! Acceptance criteria. Each test prints one PASS/FAIL line per criterion
//! (and per sub-check where a criterion has several).

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Instant;

use slowvol::dynamics::{simulate, Leg, MarketModel, NoInvestment, PathConfig, Start};
use slowvol::expansion::{CorrectionSource, Expansion, FeynmanKacConfig};
use slowvol::merton::merton_residuals;
use slowvol::montecarlo::{convergence_study, optimality_compare, CaseTag, Comparator};
use slowvol::riccati::{g_moment_closed_form, moment_function, riccati_integrate, RiccatiSpec, RiccatiVariant};
use slowvol::utility::{assumption1_report, log_grid};
use slowvol::{merton_value, MertonMethod, Utility};

// Serializes the criteria so that runtimes are measured without contention.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn line(id: &str, name: &str, pass: bool, detail: String) -> bool {
    println!(
        "criterion {id} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

const GAMMA: f64 = 0.4;
const MU: f64 = 0.3;
const M: f64 = 1.0;
const BETA: f64 = 0.5;
const RHO: f64 = -0.5;
const START: Start = Start { t: 0.0, x: 1.0, z: 1.0 };

fn benchmark(delta: f64) -> MarketModel {
    MarketModel::cir(MU, M, BETA, RHO, delta).unwrap()
}

fn growth(z: f64, tau: f64) -> f64 {
    (MU * MU * GAMMA * z * tau / (2.0 * (1.0 - GAMMA))).exp()
}

#[test]
fn criterion_1_merton_oracle() {
    let _g = serial();
    let clock = Instant::now();
    let g = 0.5;
    let lambda = 0.5;
    let u = Utility::power(g).unwrap();
    let sol = merton_value(&u, lambda, 1.0, MertonMethod::Quadrature { nodes: 128 }).unwrap();
    assert!(!sol.is_closed_form());
    let mut worst = 0.0_f64;
    for i in 0..20 {
        let t = i as f64 / 20.0;
        for x in log_grid(0.1, 10.0, 20) {
            let exact = x.powf(g) / g * (lambda * lambda * g * (1.0 - t) / (2.0 * (1.0 - g))).exp();
            worst = worst.max(rel(sol.value(t, x).unwrap(), exact));
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    let pass = worst < 1e-8 && secs < 1.0;
    assert!(line(
        "1",
        "merton quadrature vs closed form",
        pass,
        format!("max rel {worst:.2e}, {secs:.3}s")
    ));
}

#[test]
fn criterion_2_identity_residuals() {
    let _g = serial();
    let clock = Instant::now();
    let cases = [
        ("power", Utility::power(0.4).unwrap(), 1e-5),
        (
            "single-atom inverse marginal",
            Utility::inverse_marginal(&[1.0], &[1.0]).unwrap(),
            1e-5,
        ),
        (
            "two-atom mixture",
            Utility::mixture(&[0.5, 0.5], &[0.25, 0.75]).unwrap(),
            1e-4,
        ),
    ];
    let mut all = true;
    for (name, u, tol) in cases {
        let sol = merton_value(&u, 0.5, 1.0, MertonMethod::Auto).unwrap();
        let mut worst = 0.0_f64;
        for t in [0.0, 0.3, 0.6, 0.9] {
            for x in log_grid(0.05, 20.0, 9) {
                worst = worst.max(merton_residuals(&sol, t, x).unwrap().max_abs());
            }
        }
        all &= line(
            "2",
            &format!("residuals, {name}"),
            worst < tol,
            format!("max {worst:.2e} < {tol:.0e}"),
        );
    }
    let secs = clock.elapsed().as_secs_f64();
    let pass = all && secs < 10.0;
    assert!(line("2", "identity residuals", pass, format!("{secs:.2}s")));
}

#[test]
fn criterion_3_first_order_rate() {
    let _g = serial();
    let clock = Instant::now();
    let u = Utility::power(GAMMA).unwrap();
    let cfg = PathConfig {
        n_paths: 200_000,
        ..Default::default()
    };
    let deltas = [0.4, 0.2, 0.1, 0.05];
    let study = convergence_study(&benchmark(0.1), &u, START, 1.0, &deltas, &cfg).unwrap();
    for r in &study.rows {
        println!("  delta {:<6} error {:.4e} ± {:.2e}", r.delta, r.error, r.stderr);
    }
    let rate_ok = line(
        "3",
        "rate against v0 + sqrt(delta) v1",
        study.rate_ok(),
        format!(
            "slope {:.4} ± {:.4} in [0.7, 1.3]",
            study.fitted_rate, study.rate_stderr
        ),
    );
    let band_ok = line(
        "3",
        "3-stderr band around a linear-in-delta fit",
        study.band_affine.passed,
        format!(
            "max deviation {:.2} stderr (a + b delta); through the origin {:.2}",
            study.band_affine.max_deviation, study.band_proportional.max_deviation
        ),
    );
    let control = study.against(&Comparator::LeadingOrder);
    let control_ok = line(
        "3",
        "control: comparator v0 alone",
        (0.35..=0.65).contains(&control.fitted_rate),
        format!(
            "slope {:.4} ± {:.4} in [0.35, 0.65]",
            control.fitted_rate, control.rate_stderr
        ),
    );
    let secs = clock.elapsed().as_secs_f64();
    let pass = rate_ok && band_ok && control_ok && !study.inconclusive() && secs < 300.0;
    assert!(line("3", "first-order rate study", pass, format!("{secs:.1}s")));
}

#[test]
fn criterion_4_main_theorem_cases() {
    let _g = serial();
    let clock = Instant::now();
    let u = Utility::power(GAMMA).unwrap();
    let model = benchmark(0.1);
    let exp = Arc::new(Expansion::new(&model, &u, 1.0, MertonMethod::Auto).unwrap());
    let cfg = PathConfig {
        n_paths: 200_000,
        ..Default::default()
    };
    let deltas = [0.2, 0.1, 0.05, 0.025, 0.0125];
    let mut all = true;
    let mut sign_ok = true;

    let run = |c0: f64, c1: f64, alpha: f64| {
        let fam = exp.pi0_family(c0, c1, alpha).unwrap();
        let r = optimality_compare(&model, &u, &fam, START, 1.0, &deltas, &cfg).unwrap();
        for row in &r.per_delta_table {
            println!(
                "  c0={c0} c1={c1} alpha={alpha} delta {:<7} scaled {:+.5e} ± {:.2e}",
                row.delta, row.scaled_difference, row.stderr
            );
        }
        r
    };

    let r = run(1.0, 0.0, 0.5);
    sign_ok &= r.never_significantly_positive;
    let exact = r.per_delta_table.iter().all(|row| row.exact_zero);
    all &= line(
        "4",
        "identical family gives exact zeros, case (i)",
        exact && r.case_tag == CaseTag::Zero,
        format!("tag {:?}", r.case_tag),
    );

    let r = run(1.0, 1.0, 0.5);
    sign_ok &= r.never_significantly_positive;
    all &= line(
        "4",
        "alpha = 1/2 gives a finite negative plateau, case (ii)",
        r.case_tag == CaseTag::FiniteNegative && r.ell_hat < 0.0 && r.ell_hat.is_finite(),
        format!(
            "tag {:?}, exponent {:.3} ± {:.3}, ell_hat {:.4e} ± {:.1e}, richardson {:.4e} ± {:.1e}",
            r.case_tag,
            r.exponent.unwrap_or(f64::NAN),
            r.exponent_stderr.unwrap_or(f64::NAN),
            r.ell_hat,
            r.ell_stderr,
            r.ell_richardson,
            r.ell_richardson_stderr
        ),
    );

    let r = run(1.0, 1.0, 0.25);
    sign_ok &= r.never_significantly_positive;
    let predicted = -MU * MU / (2.0 * (1.0 - GAMMA)) * growth(1.0, 1.0);
    println!(
        "  alpha = 1/4: tag {:?}, ell_hat {:.5} ± {:.1e}, closed-form correction {:.5}",
        r.case_tag, r.ell_hat, r.ell_stderr, predicted
    );

    let r = run(1.0, 1.0, 0.2);
    sign_ok &= r.never_significantly_positive;
    let (e, se) = (r.exponent.unwrap_or(f64::NAN), r.exponent_stderr.unwrap_or(f64::NAN));
    all &= line(
        "4",
        "alpha = 0.2 diverges, case (iii)",
        r.case_tag == CaseTag::Divergent && e + 2.0 * se < 0.0,
        format!("tag {:?}, exponent {e:.4} ± {se:.4}", r.case_tag),
    );

    let r = run(0.5, 0.0, 0.5);
    sign_ok &= r.never_significantly_positive;
    let gap = r.frozen_gap.unwrap();
    let last = r.per_delta_table.last().unwrap();
    all &= line(
        "4",
        "base 0.5 pi0 gives an O(1) negative gap, case (iv)",
        r.case_tag == CaseTag::LeadingOrderGap
            && gap.mean + 2.0 * gap.stderr < 0.0
            && (last.difference - gap.mean).abs() < 3.0 * (last.difference_stderr + gap.stderr),
        format!(
            "tag {:?}, gap at delta {} {:.5} ± {:.1e}, frozen gap {:.5} ± {:.1e}",
            r.case_tag, last.delta, last.difference, last.difference_stderr, gap.mean, gap.stderr
        ),
    );

    all &= line(
        "4",
        "never significantly positive",
        sign_ok,
        "all families, all delta".into(),
    );
    let secs = clock.elapsed().as_secs_f64();
    let pass = all && secs < 600.0;
    assert!(line("4", "main-theorem sign and cases", pass, format!("{secs:.1}s")));
}

#[test]
fn criterion_5_closed_form_cross_check() {
    let _g = serial();
    let u = Utility::power(GAMMA).unwrap();
    let exp = Arc::new(Expansion::new(&benchmark(0.1), &u, 1.0, MertonMethod::Auto).unwrap());
    let (t, x, z) = (START.t, START.x, START.z);
    let tau = 1.0 - t;
    let v1_formula = GAMMA * x.powf(GAMMA) / (4.0 * (1.0 - GAMMA).powi(2))
        * tau
        * tau
        * RHO
        * MU.powi(3)
        * BETA
        * z
        * growth(z, tau);
    let vt_formula = -x.powf(GAMMA) / (2.0 * (1.0 - GAMMA)) * MU * MU * tau * z * growth(z, tau);
    let fam = exp.pi0_family(1.0, 1.0, 0.25).unwrap();
    let mc = FeynmanKacConfig {
        n_paths: 40_000,
        ..Default::default()
    };
    let v1 = exp.v1(t, x, z).unwrap();
    let vt = exp.vtilde_2alpha(&fam, t, x, z, &mc).unwrap();
    let fk = exp
        .vtilde_2alpha_monte_carlo(&exp.pi0_strategy(), t, x, z, &mc)
        .unwrap();
    let v1t = exp.vtilde1_quarter(&fam, t, x, z, &mc).unwrap();
    let a = line(
        "5",
        "v1 closed form",
        rel(v1, v1_formula) < 1e-12,
        format!("rel {:.1e}", rel(v1, v1_formula)),
    );
    let b = line(
        "5",
        "correction closed form",
        vt.source == CorrectionSource::ClosedForm && rel(vt.value, vt_formula) < 1e-12,
        format!("rel {:.1e}", rel(vt.value, vt_formula)),
    );
    let dev = (fk.value - vt_formula).abs() / fk.stderr;
    let c = line(
        "5",
        "Feynman-Kac Monte Carlo correction",
        dev < 3.0,
        format!(
            "{:.6} ± {:.1e} vs {:.6}, {dev:.2} stderr",
            fk.value, fk.stderr, vt_formula
        ),
    );
    let d = line(
        "5",
        "quarter correction is the sum",
        v1t.value == v1 + vt.value,
        format!("{:.6e}", v1t.value),
    );
    assert!(line("5", "closed-form cross-check", a && b && c && d, String::new()));
}

#[test]
fn criterion_6_riccati() {
    let _g = serial();
    let clock = Instant::now();
    let mut all = true;
    for (w, beta, delta) in [(1.0, 0.5, 0.1), (10.0, 1.0, 0.5), (-3.0, 0.8, 1.0), (5.0, 1.0, 0.05)] {
        let spec = RiccatiSpec::g_moment(delta, beta, 1.0, w);
        let cf = g_moment_closed_form(&spec).unwrap();
        let end = cf.tau_star.map_or(10.0, |ts| (0.9 * ts).min(10.0));
        let sol = riccati_integrate(&spec, end, None).unwrap();
        let mut worst = 0.0_f64;
        for (&tau, &a) in sol.tau.iter().zip(&sol.a) {
            let exact = cf.a(tau).unwrap();
            if exact != 0.0 {
                worst = worst.max(rel(a, exact));
            }
        }
        all &= line(
            "6",
            &format!("numeric vs closed form, w={w} beta={beta} delta={delta}"),
            worst < 1e-8,
            format!("max rel {worst:.2e} on [0, {end:.4}]"),
        );
    }

    let spec = RiccatiSpec::g_moment(0.5, 1.0, 1.0, 10.0);
    let tau_star = -((10.0 - 2.0) / 10.0_f64).ln() / 0.5;
    let sol = riccati_integrate(&spec, 2.0 * tau_star, None).unwrap();
    let bracket = sol.blowup;
    let ok = bracket.is_some_and(|(lo, hi)| lo <= tau_star && tau_star <= hi && hi - lo <= sol.step * (1.0 + 1e-12));
    all &= line(
        "6",
        "blow-up bracket",
        ok,
        format!("{bracket:?} around {tau_star:.10}, step {}", sol.step),
    );

    let (delta, w) = (0.1, 1.0);
    let model = benchmark(delta);
    let cfg = PathConfig {
        n_paths: 100_000,
        ..Default::default()
    };
    let z_paths = simulate(
        &[Leg {
            model: model.clone(),
            strategy: &NoInvestment,
            control: None,
        }],
        START,
        1.0,
        &cfg,
    )
    .unwrap()
    .legs
    .remove(0);
    let samples: Vec<f64> = z_paths.terminal_z.iter().map(|z| (w * z).exp()).collect();
    let s = slowvol::stats::summarize(&samples, false);
    let f = moment_function(&RiccatiSpec::g_moment(delta, BETA, M, w), 0.0, START.z, 1.0, 1.0).unwrap();
    let dev = (s.mean - f).abs() / s.stderr;
    all &= line(
        "6",
        "factor moment vs Monte Carlo",
        dev < 3.0,
        format!("{f:.6} vs {:.6} ± {:.1e}", s.mean, s.stderr),
    );

    let u = Utility::power(GAMMA).unwrap();
    let exp = Arc::new(Expansion::new(&model, &u, 1.0, MertonMethod::Auto).unwrap());
    let pi0 = exp.pi0_strategy();
    let x_paths = simulate(
        &[Leg {
            model: model.clone(),
            strategy: &pi0,
            control: None,
        }],
        START,
        1.0,
        &cfg,
    )
    .unwrap()
    .legs
    .remove(0);
    let squares: Vec<f64> = x_paths.terminal.iter().map(|x| x * x).collect();
    let s = slowvol::stats::summarize(&squares, false);
    let spec = RiccatiSpec {
        delta,
        beta: BETA,
        m: M,
        variant: RiccatiVariant::WealthSecondMoment {
            mu: MU,
            gamma: GAMMA,
            rho: RHO,
        },
    };
    let f = moment_function(&spec, 0.0, START.z, 1.0, START.x).unwrap();
    let dev = (s.mean - f).abs() / s.stderr;
    all &= line(
        "6",
        "wealth second moment vs Monte Carlo",
        dev < 3.0,
        format!("{f:.6} vs {:.6} ± {:.1e}", s.mean, s.stderr),
    );

    let secs = clock.elapsed().as_secs_f64();
    assert!(line("6", "riccati", all && secs < 60.0, format!("{secs:.1}s")));
}

#[test]
fn criterion_7_property_suites() {
    let _g = serial();
    let clock = Instant::now();
    let classes = [
        ("power", Utility::power(0.5).unwrap()),
        ("mixture", Utility::mixture(&[0.5, 0.5], &[0.25, 0.75]).unwrap()),
        (
            "power measure",
            Utility::power_measure(&[0.2, 0.5, 0.3], &[0.2, 0.5, 0.9]).unwrap(),
        ),
        (
            "inverse marginal",
            Utility::inverse_marginal(&[1.0, 1.0], &[1.5, 3.0]).unwrap(),
        ),
    ];
    let mut all = true;
    let grid = log_grid(1e-2, 1e2, 120);
    for (name, u) in &classes {
        let rep = assumption1_report(u, &grid, 1e8).unwrap();
        all &= line(
            "7",
            &format!("assumption checks, {name}"),
            rep.passed(),
            format!("K5 = {:.3e}, growth {:.3}", rep.k_bounds[4], rep.growth_constant),
        );
    }

    let mut worst = 0.0_f64;
    for (_, u) in &classes {
        let sol = merton_value(u, 0.5, 1.0, MertonMethod::Auto).unwrap();
        for t in [0.0, 0.5, 0.99, 1.0] {
            for x in log_grid(1e-3, 1e3, 25) {
                let xi = sol.heat_inverse(x, t).unwrap();
                worst = worst.max(rel(sol.heat(xi, t).unwrap(), x));
            }
            for i in 0..=20 {
                let xi = -5.0 + 0.5 * i as f64;
                let y = sol.heat(xi, t).unwrap();
                worst = worst.max((sol.heat_inverse(y, t).unwrap() - xi).abs());
            }
        }
    }
    all &= line(
        "7",
        "heat transform round trip",
        worst < 1e-9,
        format!("max {worst:.2e}"),
    );

    let u = Utility::power(GAMMA).unwrap();
    let model = benchmark(0.1);
    let exp = Arc::new(Expansion::new(&model, &u, 1.0, MertonMethod::Auto).unwrap());
    let pi0 = exp.pi0_strategy();
    let cfg = PathConfig {
        n_paths: 4_000,
        n_steps: 64,
        antithetic: true,
        ..Default::default()
    };
    let legs = [Leg {
        model: model.clone(),
        strategy: &pi0,
        control: None,
    }];
    let a = simulate(&legs, START, 1.0, &cfg).unwrap();
    let b = simulate(&legs, START, 1.0, &cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c = pool.install(|| simulate(&legs, START, 1.0, &cfg).unwrap());
    let bits = |s: &slowvol::dynamics::Simulation| s.legs[0].terminal.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    all &= line(
        "7",
        "bit-identical reruns",
        bits(&a) == bits(&b) && bits(&a) == bits(&c),
        "same seed, 1 and 3 threads".into(),
    );

    let fam = exp.pi0_family(1.0, 1.0, 0.5).unwrap();
    let same = fam.at(0.0);
    let pair = [
        Leg {
            model: model.clone(),
            strategy: &same,
            control: None,
        },
        Leg {
            model: model.clone(),
            strategy: &pi0,
            control: None,
        },
    ];
    let crn = PathConfig {
        common_random_numbers: true,
        ..cfg.clone()
    };
    let sim = simulate(&pair, START, 1.0, &crn).unwrap();
    let zero = sim.legs[0]
        .terminal
        .iter()
        .zip(&sim.legs[1].terminal)
        .all(|(a, b)| a == b);
    all &= line(
        "7",
        "paired differences vanish pathwise",
        zero,
        format!("{} paths", sim.legs[0].terminal.len()),
    );

    let secs = clock.elapsed().as_secs_f64();
    assert!(line("7", "property suites", all && secs < 120.0, format!("{secs:.1}s")));
}
