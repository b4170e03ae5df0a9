use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use slowvol::dynamics::{
    exact_merton_wealth_sample, path_rng, simulate, simulate_paths, Leg, MarketModel, NoInvestment, PathConfig, Start,
    Strategy,
};
use slowvol::expansion::Expansion;
use slowvol::stats::summarize;
use slowvol::{merton_value, MertonMethod, Utility};

const START: Start = Start { t: 0.0, x: 1.0, z: 1.0 };

fn benchmark(delta: f64) -> MarketModel {
    MarketModel::cir(0.3, 1.0, 0.5, -0.5, delta).unwrap()
}

fn pi0(model: &MarketModel, gamma: f64) -> impl Strategy {
    let exp = Arc::new(Expansion::new(model, &Utility::power(gamma).unwrap(), 1.0, MertonMethod::Auto).unwrap());
    exp.pi0_strategy()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn increments_have_the_model_correlation() {
    let model = benchmark(0.5);
    let all_in = |_t: f64, x: f64, _z: f64| x;
    let n = 20_000;
    let cfg = PathConfig {
        n_paths: n,
        n_steps: 4,
        seed: 11,
        dump_paths: n,
        ..Default::default()
    };
    let sim = simulate(
        &[Leg {
            model,
            strategy: &all_in,
            control: None,
        }],
        START,
        1.0,
        &cfg,
    )
    .unwrap();
    let first: Vec<_> = sim.dump.iter().filter(|r| r.step == 1).collect();
    assert_eq!(first.len(), n);
    let dx: Vec<f64> = first.iter().map(|r| (r.x / START.x).ln()).collect();
    let dz: Vec<f64> = first.iter().map(|r| r.z - START.z).collect();
    let c = correlation(&dx, &dz);
    // Standard error of a sample correlation is about (1 - ρ²)/√n.
    assert!((c + 0.5).abs() < 4.0 * 0.75 / (n as f64).sqrt(), "{c}");
}

#[test]
fn factor_stays_nonnegative_on_the_feller_boundary() {
    // β² = 2m is admissible, but coarse Euler steps from near zero still cross it.
    let model = MarketModel::cir(0.3, 1.0, 2.0_f64.sqrt(), -0.5, 1.0).unwrap();
    let cfg = PathConfig {
        n_paths: 2000,
        n_steps: 8,
        ..Default::default()
    };
    let s = pi0(&model, 0.4);
    let legs = simulate_paths(&model, &s, Start { z: 0.01, ..START }, 1.0, &cfg).unwrap();
    assert!(legs.truncations > 0);
    assert!(legs.min_z >= 0.0);
    assert!(legs.terminal_z.iter().all(|&z| z >= 0.0));
    assert!(legs.terminal.iter().all(|x| x.is_finite() && *x > 0.0));
}

#[test]
fn same_seed_same_paths() {
    let model = benchmark(0.2);
    let s = pi0(&model, 0.4);
    let cfg = PathConfig {
        n_paths: 1000,
        n_steps: 32,
        seed: 5,
        antithetic: true,
        ..Default::default()
    };
    let a = simulate_paths(&model, &s, START, 1.0, &cfg).unwrap();
    let b = simulate_paths(&model, &s, START, 1.0, &cfg).unwrap();
    assert_eq!(a.terminal, b.terminal);
    assert_eq!(a.terminal_z, b.terminal_z);
    let c = simulate_paths(&model, &s, START, 1.0, &PathConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.terminal, c.terminal);
}

#[test]
fn common_random_numbers_shrink_the_paired_variance() {
    let model = benchmark(0.1);
    let exp = Arc::new(Expansion::new(&model, &Utility::power(0.4).unwrap(), 1.0, MertonMethod::Auto).unwrap());
    let fam = exp.pi0_family(1.1, 0.0, 0.5).unwrap();
    let base = exp.pi0_strategy();
    let legs = [
        Leg {
            model: model.clone(),
            strategy: fam.base.as_ref(),
            control: None,
        },
        Leg {
            model,
            strategy: &base,
            control: None,
        },
    ];
    let diff_stderr = |crn: bool| {
        let cfg = PathConfig {
            n_paths: 4000,
            n_steps: 32,
            common_random_numbers: crn,
            ..Default::default()
        };
        let sim = simulate(&legs, START, 1.0, &cfg).unwrap();
        let d: Vec<f64> = sim.legs[0]
            .terminal
            .iter()
            .zip(&sim.legs[1].terminal)
            .map(|(a, b)| a - b)
            .collect();
        summarize(&d, false).stderr
    };
    let (paired, unpaired) = (diff_stderr(true), diff_stderr(false));
    assert!(paired < 0.2 * unpaired, "{paired} vs {unpaired}");
}

// E[Z^k] for the CIR factor solves m_k' = δ k ((m + (k-1)β²/2) m_{k-1} - m_k).
fn exact_fourth_moment(delta: f64, m: f64, beta: f64, z: f64, t: f64) -> f64 {
    let rhs = |v: [f64; 5]| {
        let mut d = [0.0; 5];
        for k in 1..5 {
            let kf = k as f64;
            d[k] = delta * kf * ((m + (kf - 1.0) * beta * beta / 2.0) * v[k - 1] - v[k]);
        }
        d
    };
    let mut v = [1.0, z, z * z, z.powi(3), z.powi(4)];
    let n = 1000;
    let h = t / n as f64;
    let add = |a: [f64; 5], b: [f64; 5], s: f64| std::array::from_fn(|i| a[i] + s * b[i]);
    for _ in 0..n {
        let k1 = rhs(v);
        let k2 = rhs(add(v, k1, 0.5 * h));
        let k3 = rhs(add(v, k2, 0.5 * h));
        let k4 = rhs(add(v, k3, h));
        v = std::array::from_fn(|i| v[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    v[4]
}

#[test]
fn fourth_factor_moment_is_bounded_across_delta() {
    // Gamma stationary law: shape 2m/β² = 8, scale β²/2.
    let stationary = 0.125_f64.powi(4) * 8.0 * 9.0 * 10.0 * 11.0;
    for delta in [1.0, 0.3, 0.1, 0.01] {
        let model = benchmark(delta);
        let cfg = PathConfig {
            n_paths: 20_000,
            n_steps: 64,
            ..Default::default()
        };
        let legs = simulate_paths(&model, &NoInvestment, START, 1.0, &cfg).unwrap();
        let z4: Vec<f64> = legs.terminal_z.iter().map(|z| z.powi(4)).collect();
        let s = summarize(&z4, false);
        let exact = exact_fourth_moment(delta, 1.0, 0.5, 1.0, 1.0);
        assert!((1.0..=stationary).contains(&exact));
        assert!(
            (s.mean - exact).abs() < 4.0 * s.stderr + 5e-3 * exact,
            "δ {delta}: {} vs {exact}",
            s.mean
        );
    }
}

#[test]
fn stderr_halves_with_four_times_the_paths() {
    let model = benchmark(0.1);
    let s = pi0(&model, 0.4);
    let se = |n: usize| {
        let cfg = PathConfig {
            n_paths: n,
            n_steps: 16,
            ..Default::default()
        };
        summarize(&simulate_paths(&model, &s, START, 1.0, &cfg).unwrap().terminal, false).stderr
    };
    let ratio = se(4000) / se(16_000);
    assert!((ratio - 2.0).abs() < 0.15, "{ratio}");
}

fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn frozen_factor_matches_the_exact_merton_sampler() {
    let gamma = 0.4;
    let model = benchmark(0.0);
    let lambda = model.freeze(START.z).lambda;
    let sol = merton_value(&Utility::power(gamma).unwrap(), lambda, 1.0, MertonMethod::Auto).unwrap();
    let n = 5000;
    let cfg = PathConfig {
        n_paths: n,
        n_steps: 50,
        seed: 21,
        ..Default::default()
    };
    let simulated = simulate_paths(&model, &pi0(&model, gamma), START, 1.0, &cfg)
        .unwrap()
        .terminal;
    let mut rng = path_rng(99, 0);
    let exact: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            exact_merton_wealth_sample(&sol, 0.0, START.x, 1.0, w).unwrap()
        })
        .collect();
    let d = ks_statistic(simulated, exact);
    // 0.1% critical value of the two-sample statistic.
    let critical = 1.95 * (2.0 / n as f64).sqrt();
    assert!(d < critical, "{d} >= {critical}");
}

#[test]
fn exact_sampler_has_lognormal_moments() {
    let (gamma, lambda, t) = (0.4, 0.5, 1.0);
    let sol = merton_value(&Utility::power(gamma).unwrap(), lambda, t, MertonMethod::Auto).unwrap();
    let mut rng = path_rng(3, 0);
    let xs: Vec<f64> = (0..100_000)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            exact_merton_wealth_sample(&sol, 0.0, 2.0, t, w * t.sqrt()).unwrap()
        })
        .collect();
    // dX/X = λ²/(1-γ) dt + λ/(1-γ) dW
    let (a, b) = (lambda * lambda / (1.0 - gamma), lambda / (1.0 - gamma));
    let mean = 2.0 * (a * t).exp();
    let second = 4.0 * (2.0 * a * t + b * b * t).exp();
    let s1 = summarize(&xs, false);
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let s2 = summarize(&sq, false);
    assert!((s1.mean - mean).abs() < 4.0 * s1.stderr, "{} vs {mean}", s1.mean);
    assert!((s2.mean - second).abs() < 4.0 * s2.stderr, "{} vs {second}", s2.mean);
    // Pathwise: ln X is affine in the Brownian increment.
    let at = |w: f64| exact_merton_wealth_sample(&sol, 0.0, 2.0, t, w).unwrap().ln();
    let slope = (at(0.7) - at(-0.3)) / 1.0;
    assert!((slope - b).abs() < 1e-9, "{slope}");
}
