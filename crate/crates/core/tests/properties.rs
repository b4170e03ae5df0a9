use std::sync::Arc;

use approx::assert_relative_eq;
use proptest::prelude::*;
use slowvol::dynamics::MarketModel;
use slowvol::expansion::{Expansion, FeynmanKacConfig};
use slowvol::merton::DEFAULT_NODES;
use slowvol::numdiff::derivative_auto;
use slowvol::riccati::{g_moment_closed_form, riccati_integrate, RiccatiSpec};
use slowvol::{merton_value, MertonMethod, Utility};

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        cases: n,
        ..ProptestConfig::default()
    }
}

fn mixture() -> impl Strategy<Value = Utility> {
    prop::collection::vec((0.1..3.0_f64, 0.05..0.95_f64), 1..4).prop_map(|p| {
        let (c, g): (Vec<f64>, Vec<f64>) = p.into_iter().unzip();
        Utility::mixture(&c, &g).unwrap()
    })
}

fn any_utility() -> impl Strategy<Value = Utility> {
    prop_oneof![
        (0.05..0.95_f64).prop_map(|g| Utility::power(g).unwrap()),
        mixture(),
        prop::collection::vec((0.1..2.0_f64, 0.05..0.95_f64), 1..4).prop_map(|p| {
            let (w, y): (Vec<f64>, Vec<f64>) = p.into_iter().unzip();
            Utility::power_measure(&w, &y).unwrap()
        }),
        prop::collection::vec((0.1..2.0_f64, 0.3..4.0_f64), 1..4).prop_map(|p| {
            let (w, s): (Vec<f64>, Vec<f64>) = p.into_iter().unzip();
            Utility::inverse_marginal(&w, &s).unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(cases(64))]

    #[test]
    fn utility_is_increasing_and_concave(u in any_utility(), x in 0.01..100.0_f64, k in 1.01..3.0_f64) {
        let (y1, y2) = (u.marginal(x).unwrap(), u.marginal(k * x).unwrap());
        prop_assert!(y1 > 0.0 && y2 < y1);
        prop_assert!(u.value(k * x).unwrap() > u.value(x).unwrap());
        prop_assert!(u.risk_tolerance(x).unwrap() > 0.0);
    }

    #[test]
    fn inverse_marginal_inverts_the_marginal(u in any_utility(), x in 0.01..100.0_f64) {
        let back = u.inverse_marginal_value(u.marginal(x).unwrap()).unwrap();
        prop_assert!((back - x).abs() <= 1e-10 * x, "{} vs {}", back, x);
    }

    #[test]
    fn risk_tolerance_increases(u in any_utility(), x in 0.01..100.0_f64, k in 1.01..3.0_f64) {
        prop_assert!(u.risk_tolerance(k * x).unwrap() > u.risk_tolerance(x).unwrap());
    }

    #[test]
    fn power_measure_tolerance_is_sandwiched(
        p in prop::collection::vec((0.1..2.0_f64, 0.05..0.95_f64), 1..5),
        x in 0.01..100.0_f64,
    ) {
        let (w, y): (Vec<f64>, Vec<f64>) = p.into_iter().unzip();
        let u = Utility::power_measure(&w, &y).unwrap();
        let a = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let b = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let r = u.risk_tolerance(x).unwrap();
        prop_assert!(r >= x / (1.0 - a) * (1.0 - 1e-12) && r <= x / (1.0 - b) * (1.0 + 1e-12));
    }

    #[test]
    fn merton_value_is_monotone_concave_and_decreasing_in_time(
        u in any_utility(),
        lambda in 0.05..1.0_f64,
        x in 0.05..20.0_f64,
        t in 0.0..0.9_f64,
    ) {
        let m = merton_value(&u, lambda, 1.0, MertonMethod::Auto).unwrap();
        let p = m.point(t, x).unwrap();
        prop_assert!(p.m_x > 0.0 && p.m_xx() < 0.0);
        prop_assert!(m.value(t, x).unwrap() > m.value(t + 0.1, x).unwrap());
        prop_assert!(m.risk_tolerance(t, 1.5 * x).unwrap() > m.risk_tolerance(t, x).unwrap());
    }
}

proptest! {
    #![proptest_config(cases(16))]

    #[test]
    fn doubling_quadrature_nodes_changes_nothing(u in mixture(), x in 0.1..10.0_f64, t in 0.0..0.9_f64) {
        let a = merton_value(&u, 0.5, 1.0, MertonMethod::Quadrature { nodes: DEFAULT_NODES }).unwrap();
        let b = merton_value(&u, 0.5, 1.0, MertonMethod::Quadrature { nodes: 2 * DEFAULT_NODES }).unwrap();
        let (va, vb) = (a.value(t, x).unwrap(), b.value(t, x).unwrap());
        prop_assert!((va - vb).abs() <= 1e-10 * vb.abs(), "{} vs {}", va, vb);
        let (ra, rb) = (a.risk_tolerance(t, x).unwrap(), b.risk_tolerance(t, x).unwrap());
        prop_assert!((ra - rb).abs() <= 1e-10 * rb);
    }
}

fn cir_expansion(u: &Utility, rho: f64) -> Expansion {
    let model = MarketModel::cir(0.3, 1.0, 0.5, rho, 0.1).unwrap();
    Expansion::new(&model, u, 1.0, MertonMethod::Auto).unwrap()
}

proptest! {
    #![proptest_config(cases(24))]

    #[test]
    fn v0_z_matches_a_finite_difference(
        u in any_utility(),
        x in 0.1..10.0_f64,
        z in 0.2..3.0_f64,
        t in 0.0..0.9_f64,
    ) {
        let e = cir_expansion(&u, -0.5);
        let d = derivative_auto(|zz| e.v0(t, x, zz).unwrap(), z, 1);
        let exact = e.v0_z(t, x, z).unwrap();
        prop_assert!((d.value - exact).abs() <= 1e-6 * exact.abs(), "{} vs {}", d.value, exact);
    }

    // v¹ solves v¹_t + ½λ²R² v¹_xx + λ²R v¹_x = -ρλgR v⁰_xz with the factor frozen.
    #[test]
    fn v1_solves_its_equation(
        u in any_utility(),
        rho in -0.9..0.9_f64,
        x in 0.2..5.0_f64,
        z in 0.3..2.0_f64,
        t in 0.1..0.8_f64,
    ) {
        let e = cir_expansion(&u, rho);
        let f = e.frozen(z);
        let p = e.point(t, x, z).unwrap();
        let v1_t = derivative_auto(|s| e.v1(s, x, z).unwrap(), t, 1).value;
        let v1_x = derivative_auto(|y| e.v1(t, y, z).unwrap(), x, 1).value;
        let v1_xx = derivative_auto(|y| e.v1(t, y, z).unwrap(), x, 2).value;
        let (l2, r) = (f.lambda * f.lambda, p.risk_tolerance);
        let source = rho * f.lambda * f.g * r * p.v0_xz;
        let residual = v1_t + 0.5 * l2 * r * r * v1_xx + l2 * r * v1_x + source;
        let scale = source.abs().max(1e-300);
        prop_assert!(residual.abs() <= 1e-5 * scale, "residual {} vs source {}", residual, source);
    }

    #[test]
    fn perturbation_correction_is_never_positive(
        gamma in 0.05..0.95_f64,
        c in -2.0..2.0_f64,
        x in 0.1..10.0_f64,
        z in 0.1..3.0_f64,
        t in 0.0..1.0_f64,
    ) {
        let u = Utility::power(gamma).unwrap();
        let e = Arc::new(cir_expansion(&u, -0.5));
        let fam = e.pi0_family(1.0, c, 0.25).unwrap();
        let v = e.vtilde_2alpha(&fam, t, x, z, &FeynmanKacConfig::default()).unwrap();
        prop_assert!(v.value <= 0.0);
    }

    #[test]
    fn riccati_numeric_matches_closed_form(
        delta in 0.01..1.0_f64,
        beta in 0.3..1.5_f64,
        w in -5.0..5.0_f64,
    ) {
        let spec = RiccatiSpec::g_moment(delta, beta, 1.0, w);
        let cf = g_moment_closed_form(&spec).unwrap();
        let end = cf.tau_star.map_or(5.0, |ts| (0.9 * ts).min(5.0));
        let sol = riccati_integrate(&spec, end, None).unwrap();
        for (&tau, &a) in sol.tau.iter().zip(&sol.a).step_by(7) {
            let exact = cf.a(tau).unwrap();
            prop_assert!((a - exact).abs() <= 1e-8 * exact.abs().max(1e-12), "τ {}: {} vs {}", tau, a, exact);
        }
    }

    // Below the critical exponent, A stays between 0 and -w for every δ and τ.
    #[test]
    fn riccati_is_bounded_uniformly_in_delta(
        delta in 0.001..1.0_f64,
        beta in 0.3..1.5_f64,
        frac in -3.0..0.99_f64,
        tau in 0.0..50.0_f64,
    ) {
        let w = frac * 2.0 / (beta * beta);
        let cf = g_moment_closed_form(&RiccatiSpec::g_moment(delta, beta, 1.0, w)).unwrap();
        prop_assert!(cf.tau_star.is_none());
        let a = cf.a(tau).unwrap();
        prop_assert!(a.abs() <= w.abs() * (1.0 + 1e-12) && a * w <= 0.0);
    }
}

#[test]
fn single_atom_value_is_closed_form() {
    // I(y) = y^{-s} is power utility with γ = 1 - 1/s, up to a constant.
    let s = 2.5;
    let atom = Utility::inverse_marginal(&[1.0], &[s]).unwrap();
    let power = Utility::power(1.0 - 1.0 / s).unwrap();
    for x in [0.1, 1.0, 7.0] {
        assert_relative_eq!(
            atom.risk_tolerance(x).unwrap(),
            power.risk_tolerance(x).unwrap(),
            max_relative = 1e-13
        );
        assert_relative_eq!(
            atom.marginal(x).unwrap(),
            power.marginal(x).unwrap(),
            max_relative = 1e-13
        );
    }
}
