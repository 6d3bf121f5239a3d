//! Gauss-Legendre quadrature with adaptive bisection, used as an independent
//! oracle for closed-form time integrals.

use crate::error::{KsError, Result};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Positive abscissae of the 21-point Kronrod extension of the 10-point Gauss rule,
/// largest first; odd entries are the Gauss nodes.
#[allow(clippy::excessive_precision)]
const KRONROD_X: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const KRONROD_W: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077600525452998,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

#[allow(clippy::excessive_precision)]
const GAUSS10_W: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

/// Kronrod estimate on `[a, b]` and its distance to the embedded Gauss estimate.
fn kronrod_panel(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    let mid = f(c);
    let mut kronrod = KRONROD_W[10] * mid;
    let mut gauss = 0.0;
    for i in 0..10 {
        let pair = f(c - h * KRONROD_X[i]) + f(c + h * KRONROD_X[i]);
        kronrod += KRONROD_W[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS10_W[i / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive integral of `f` over `[a, b]`: each panel compares a 21-point Kronrod rule
/// with its embedded 10-point Gauss rule and is bisected until they agree to `tol`
/// relative to the size of the whole integral.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let (first, first_change) = kronrod_panel(&f, a, b);
    let scale = first.abs().max(f64::MIN_POSITIVE);
    let mut stack = vec![(a, b, 0u32, first, first_change)];
    let mut total = 0.0;
    let mut worst = 0.0f64;
    while let Some((lo, hi, depth, value, change)) = stack.pop() {
        if change <= tol * scale || change <= 1e-300 {
            total += value;
        } else if depth >= 40 {
            total += value;
            worst = worst.max(change / scale);
        } else {
            let mid = 0.5 * (lo + hi);
            let (l, lc) = kronrod_panel(&f, lo, mid);
            let (r, rc) = kronrod_panel(&f, mid, hi);
            stack.push((lo, mid, depth + 1, l, lc));
            stack.push((mid, hi, depth + 1, r, rc));
        }
    }
    if worst > tol.sqrt() {
        return Err(KsError::QuadratureNotConverged { change: worst });
    }
    Ok(total)
}

/// `int_{-inf}^{b} f(u) du` for `f` decaying like `e^{rate u}` as `u -> -inf`,
/// via `u = b + ln(s) / rate`, `s in (0, 1]`.
pub fn integrate_to_minus_infinity(f: impl Fn(f64) -> f64, b: f64, rate: f64, tol: f64) -> Result<f64> {
    if rate <= 0.0 {
        return Err(KsError::InvalidArgument("decay rate must be positive".into()));
    }
    integrate(
        |s| {
            if s <= 0.0 {
                0.0
            } else {
                f(b + s.ln() / rate) / (rate * s)
            }
        },
        0.0,
        1.0,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        for n in [1, 2, 5, 12, 40] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            let deg = 2 * n - 1;
            let exact = if deg % 2 == 1 { 2.0 / deg as f64 } else { 0.0 };
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32 - 1)).sum();
            assert!((got - exact).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn kronrod_constants_are_consistent() {
        let kw = 2.0 * KRONROD_W[..10].iter().sum::<f64>() + KRONROD_W[10];
        assert!((kw - 2.0).abs() < 1e-14);
        let (x, w) = gauss_legendre(10);
        for i in 0..5 {
            assert!((x[9 - i] - KRONROD_X[2 * i + 1]).abs() < 1e-14);
            assert!((w[9 - i] - GAUSS10_W[i]).abs() < 1e-14);
        }
        // exact for polynomials up to degree 31
        let (v, _) = kronrod_panel(&|x: f64| x.powi(30), -1.0, 1.0);
        assert!((v - 2.0 / 31.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_integrals() {
        let v = integrate(|x| (-50.0 * x).exp(), 0.0, 1.0, 1e-13).unwrap();
        assert!((v - (1.0 - (-50.0f64).exp()) / 50.0).abs() < 1e-14);
        let v = integrate(|x| x.abs().sqrt(), -1.0, 1.0, 1e-12).unwrap();
        assert!((v - 4.0 / 3.0).abs() < 1e-10);
        let v = integrate_to_minus_infinity(|u| (3.0 * u).exp(), 0.5, 3.0, 1e-13).unwrap();
        assert!((v - (1.5f64).exp() / 3.0).abs() < 1e-12);
    }
}
