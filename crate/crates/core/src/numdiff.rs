//! Central finite differences with Richardson extrapolation.

/// A derivative estimate and an error estimate from the extrapolation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivative {
    pub value: f64,
    pub error: f64,
}

// Second-order central stencils: (offset multiples of h, coefficient), divisor.
fn stencil(order: usize) -> (&'static [(f64, f64)], f64) {
    match order {
        1 => (&[(1.0, 1.0), (-1.0, -1.0)], 2.0),
        2 => (&[(1.0, 1.0), (0.0, -2.0), (-1.0, 1.0)], 1.0),
        3 => (&[(2.0, 1.0), (1.0, -2.0), (-1.0, 2.0), (-2.0, -1.0)], 2.0),
        4 => (&[(2.0, 1.0), (1.0, -4.0), (0.0, 6.0), (-1.0, -4.0), (-2.0, 1.0)], 1.0),
        5 => (
            &[
                (3.0, 1.0),
                (2.0, -4.0),
                (1.0, 5.0),
                (-1.0, -5.0),
                (-2.0, 4.0),
                (-3.0, -1.0),
            ],
            2.0,
        ),
        _ => panic!("derivative order {order} not supported (1..=5)"),
    }
}

/// Largest multiple of `h` used by the stencil of this order.
pub fn stencil_reach(order: usize) -> f64 {
    stencil(order).0.iter().map(|(k, _)| k.abs()).fold(0.0, f64::max)
}

/// Relative step that balances the `h^6` truncation error of the
/// extrapolated estimate against rounding at the smallest step `h/4`.
pub fn relative_step(order: usize) -> f64 {
    (4f64.powi(order as i32) * f64::EPSILON).powf(1.0 / (order as f64 + 6.0))
}

fn central(f: &mut impl FnMut(f64) -> f64, x: f64, h: f64, order: usize) -> f64 {
    let (pts, div) = stencil(order);
    let s: f64 = pts.iter().map(|&(k, c)| c * f(x + k * h)).sum();
    s / (div * h.powi(order as i32))
}

/// `order`-th derivative of `f` at `x` with base step `h`, using steps
/// `h, h/2, h/4` and eliminating the `h^2` and `h^4` error terms.
pub fn derivative(mut f: impl FnMut(f64) -> f64, x: f64, order: usize, h: f64) -> Derivative {
    let d0 = central(&mut f, x, h, order);
    let d1 = central(&mut f, x, h / 2.0, order);
    let d2 = central(&mut f, x, h / 4.0, order);
    let r01 = (4.0 * d1 - d0) / 3.0;
    let r12 = (4.0 * d2 - d1) / 3.0;
    let best = (16.0 * r12 - r01) / 15.0;
    Derivative {
        value: best,
        error: (best - r12).abs().max((r12 - d2).abs() * 1e-3),
    }
}

/// Derivative with step `relative_step(order) * |x|` (or absolute when `x == 0`).
pub fn derivative_auto(f: impl FnMut(f64) -> f64, x: f64, order: usize) -> Derivative {
    let scale = if x == 0.0 { 1.0 } else { x.abs() };
    derivative(f, x, order, relative_step(order) * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_derivatives() {
        for order in 1..=5 {
            let d = derivative_auto(f64::exp, 0.7, order);
            let exact = 0.7_f64.exp();
            assert!(
                (d.value / exact - 1.0).abs() < 1e-6 * order as f64,
                "order {order}: {} vs {exact}",
                d.value
            );
            assert!(d.error < 1e-5 * exact);
        }
    }

    #[test]
    fn power_fifth_derivative_relative_accuracy() {
        // d^5/dx^5 x^{5.5} = 5.5*4.5*3.5*2.5*1.5 * x^{0.5}
        let x = 3.0_f64;
        let d = derivative_auto(|t| t.powf(5.5), x, 5);
        let exact = 5.5 * 4.5 * 3.5 * 2.5 * 1.5 * x.sqrt();
        assert!((d.value / exact - 1.0).abs() < 1e-5);
    }

    #[test]
    fn stencils_annihilate_low_degree_polynomials() {
        for order in 1..=5 {
            let d = derivative(|t| t.powi(order as i32 - 1), 1.3, order, 0.5);
            assert!(d.value.abs() < 1e-9, "order {order}: {}", d.value);
        }
    }

    #[test]
    fn reach() {
        assert_eq!(stencil_reach(1), 1.0);
        assert_eq!(stencil_reach(5), 3.0);
    }
}
