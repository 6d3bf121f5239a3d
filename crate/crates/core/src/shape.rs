//! Shape coefficients of the second-moment bounds: closed forms together with an
//! independent quadrature evaluation of each defining time integral.
//!
//! Frequencies are passed as integer vectors `k` and enter the time integrals
//! through `lambda(k) = |2 pi k|^2`.

use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::quadrature::{gauss_legendre, integrate, integrate_to_minus_infinity};
use crate::spectral::{exp_divided_difference, TWO_PI};

pub type Freq = (i64, i64);

fn lambda(k: Freq) -> f64 {
    TWO_PI * TWO_PI * (k.0 * k.0 + k.1 * k.1) as f64
}

fn add(a: Freq, b: Freq) -> Freq {
    (a.0 + b.0, a.1 + b.1)
}

fn component(k: Freq, j: usize) -> f64 {
    if j == 0 {
        k.0 as f64
    } else {
        k.1 as f64
    }
}

/// Which shape coefficient a query asks for. Component indices are 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Y,
    L,
    PT,
    Tr { k: usize },
    V { k: usize, k_prime: usize },
}

/// A validated shape-coefficient query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeQuery {
    pub s: f64,
    pub t: f64,
    pub omegas: Vec<Freq>,
    pub kind: ShapeKind,
}

impl ShapeQuery {
    pub fn new(kind: ShapeKind, s: f64, t: f64, omegas: Vec<Freq>) -> Result<Self> {
        if !(s >= 0.0) {
            return Err(KsError::InvalidTime(s));
        }
        if !(t >= 0.0) {
            return Err(KsError::InvalidTime(t));
        }
        let arity = match kind {
            ShapeKind::Y => 2,
            ShapeKind::L => 1,
            ShapeKind::PT | ShapeKind::Tr { .. } | ShapeKind::V { .. } => 3,
        };
        if omegas.len() != arity {
            return Err(KsError::InvalidArgument(format!("{kind:?} takes {arity} frequencies")));
        }
        if omegas.contains(&(0, 0)) {
            return Err(KsError::InvalidArgument("zero frequency".into()));
        }
        if matches!(kind, ShapeKind::Y | ShapeKind::PT) && add(omegas[0], omegas[1]) == (0, 0) {
            return Err(KsError::InvalidArgument("w1 + w2 = 0".into()));
        }
        if let ShapeKind::Tr { k } | ShapeKind::V { k, .. } = kind {
            if k > 1 {
                return Err(KsError::InvalidArgument("component index must be 0 or 1".into()));
            }
        }
        if let ShapeKind::V { k_prime, .. } = kind {
            if k_prime > 1 {
                return Err(KsError::InvalidArgument("component index must be 0 or 1".into()));
            }
        }
        Ok(ShapeQuery { s, t, omegas, kind })
    }

    /// Closed-form value.
    pub fn closed_form(&self) -> f64 {
        let w = &self.omegas;
        match self.kind {
            ShapeKind::Y => shape_y(self.s, self.t, w[0], w[1]),
            ShapeKind::L => shape_l(self.s, self.t, w[0]),
            ShapeKind::PT => shape_pt(self.s, self.t, w[0], w[1], w[2]),
            ShapeKind::Tr { k } => shape_tr(self.s, self.t, k, w[0], w[1], w[2]),
            ShapeKind::V { k, k_prime } => shape_v(self.s, self.t, k, k_prime, w[0], w[1], w[2]),
        }
    }

    /// Quadrature value with relative tolerance `tol`.
    pub fn quadrature(&self, tol: f64) -> Result<f64> {
        let w = &self.omegas;
        match self.kind {
            ShapeKind::Y => shape_y_quadrature(self.s, self.t, w[0], w[1], tol),
            ShapeKind::L => shape_l_quadrature(self.s, self.t, w[0], tol),
            ShapeKind::PT => {
                Ok(shape_y_quadrature(self.s, self.t, w[0], w[1], tol)? * shape_l_quadrature(self.s, self.t, w[2], tol)?)
            }
            ShapeKind::Tr { k } => shape_tr_quadrature(self.s, self.t, k, w[0], w[1], w[2], tol),
            ShapeKind::V { k, k_prime } => shape_v_quadrature(self.s, self.t, k, k_prime, w[0], w[1], w[2], tol),
        }
    }
}

/// `int_0^t du int_0^s du' e^{-(t-u) a - (s-u') a - |u-u'| beta}`.
fn double_exponential_integral(s: f64, t: f64, a: f64, beta: f64) -> f64 {
    let d = (t - s).abs();
    let dd = |tau: f64| exp_divided_difference(beta, a, tau);
    let tail = if a > 0.0 { ((-a * d).exp() - (-a * (s + t)).exp()) / a } else { s.min(t) * 2.0 };
    (dd(d) - (-a * s).exp() * dd(t) - (-a * t).exp() * dd(s) + tail) / (a + beta)
}

/// `S_{s,t} Y(w1, w2)`.
pub fn shape_y(s: f64, t: f64, w1: Freq, w2: Freq) -> f64 {
    let a = lambda(add(w1, w2));
    let b = lambda(w1);
    let c = lambda(w2);
    double_exponential_integral(s, t, a, b + c) / (4.0 * b * c)
}

/// `D_{s,t} Y = S_tt + S_ss - S_st - S_ts`.
pub fn shape_d(s: f64, t: f64, w1: Freq, w2: Freq) -> f64 {
    shape_y(t, t, w1, w2) + shape_y(s, s, w1, w2) - shape_y(s, t, w1, w2) - shape_y(t, s, w1, w2)
}

/// Rounding scale of [`shape_d`]: values above `-shape_d_tolerance` count as non-negative.
pub fn shape_d_tolerance(s: f64, t: f64, w1: Freq, w2: Freq) -> f64 {
    64.0 * f64::EPSILON * (shape_y(t, t, w1, w2) + shape_y(s, s, w1, w2))
}

/// `S_{s,t} L(w4) = |w4|^{-2} e^{-|t-s| |w4|^2} / 2`.
pub fn shape_l(s: f64, t: f64, w4: Freq) -> f64 {
    let c = lambda(w4);
    0.5 / c * (-(t - s).abs() * c).exp()
}

/// `S_{s,t} PT = S_{s,t} Y(w1, w2) S_{s,t} L(w4)`.
pub fn shape_pt(s: f64, t: f64, w1: Freq, w2: Freq, w4: Freq) -> f64 {
    shape_y(s, t, w1, w2) * shape_l(s, t, w4)
}

/// `|H^k(w1) H^j(w2) H^j(w3)|` prefactors summed over `j` for Tr.
fn tr_prefactor(k: usize, w1: Freq, w2: Freq, w3: Freq, j: usize) -> f64 {
    TWO_PI.powi(3) * (component(w1, k) * component(w2, j) * component(w3, j)).abs()
}

/// `A^k_{s,t} Tr(w1, w2, w3)`.
pub fn shape_tr(s: f64, t: f64, k: usize, w1: Freq, w2: Freq, w3: Freq) -> f64 {
    let (l1, l2, l3) = (lambda(w1), lambda(w2), lambda(w3));
    let big = l1 + l2;
    let m = s.min(t);
    let early = (big * m).exp() * ((-big * t).exp() - (-big * s).exp()).abs() / (big * (l2 + l3));
    let late = if s < t { -(-big * (t - s)).exp_m1() / (big * (l2 + l3)) } else { 0.0 };
    // e^{big m} e^{-big t} can overflow separately; rewrite with differences.
    let early = if early.is_finite() {
        early
    } else {
        ((-big * (t - m)).exp() - (-big * (s - m)).exp()).abs() / (big * (l2 + l3))
    };
    (0..2).map(|j| tr_prefactor(k, w1, w2, w3, j)).sum::<f64>() * (early + late)
}

/// `A^k Tr` with the `u1` integral done by quadrature and the `u2` integral in closed form.
pub fn shape_tr_quadrature(s: f64, t: f64, k: usize, w1: Freq, w2: Freq, w3: Freq, tol: f64) -> Result<f64> {
    let (l1, l2, l3) = (lambda(w1), lambda(w2), lambda(w3));
    let heat = |tau: f64, l: f64| if tau >= 0.0 { (-tau * l).exp() } else { 0.0 };
    // int_{-inf}^{u1} du2 |E_t(u1, u2) - E_s(u1, u2)| e^{-(u1 - u2) l3}, where the bracket
    // factorises as e^{l2 u2} times a function of u1.
    let inner = |u1: f64| {
        let g = heat(t - u1, l1) * (-(t - u1) * l2).exp() - heat(s - u1, l1) * (-(s - u1) * l2).exp();
        g.abs() / (l2 + l3)
    };
    let m = s.min(t);
    let mut total = integrate_to_minus_infinity(inner, m, l1 + l2, tol)?;
    if s < t {
        total += integrate(inner, s, t, tol)?;
    }
    Ok((0..2).map(|j| tr_prefactor(k, w1, w2, w3, j)).sum::<f64>() * total)
}

/// `int du1 |H^k_{t-u1}(w1) H^j_{t-u2}(w2) - H^k_{s-u1}(w1) H^j_{s-u2}(w2)|` without the
/// constant prefactor, for `s <= t`.
fn v_inner(s: f64, t: f64, l1: f64, l2: f64, u2: f64) -> f64 {
    if u2 > t {
        0.0
    } else if u2 > s {
        (-(t - u2) * l2).exp() / l1
    } else {
        // u1 <= s: both products present; s < u1 <= t: only the one at time t.
        let both = (l1 * s).exp() / l1 * ((-l1 * t - l2 * (t - u2)).exp() - (-l1 * s - l2 * (s - u2)).exp()).abs();
        let only_t = (-(t - u2) * l2).exp() * (1.0 - (-l1 * (t - s)).exp()) / l1;
        both + only_t
    }
}

fn v_prefactor(k: usize, w1: Freq, w2: Freq, j: usize) -> f64 {
    TWO_PI * TWO_PI * (component(w1, k) * component(w2, j)).abs()
}

/// `A^{k,k'}_{s,t} V(w1, w1', w2)`.
pub fn shape_v(s: f64, t: f64, k: usize, k_prime: usize, w1: Freq, w1p: Freq, w2: Freq) -> f64 {
    let (s, t) = (s.min(t), s.max(t));
    let (l1, l1p, l2) = (lambda(w1), lambda(w1p), lambda(w2));
    let d = t - s;
    // F(u2) = e^{-(s - u2) l2} A for u2 <= s
    let amp = |l: f64| ((1.0 - (-(l + l2) * d).exp()) + (-l2 * d).exp() * (-(-l * d).exp_m1())) / l;
    let early = amp(l1) * amp(l1p) / (2.0 * l2);
    let late = -(-2.0 * l2 * d).exp_m1() / (2.0 * l2 * l1 * l1p);
    (0..2)
        .map(|j| v_prefactor(k, w1, w2, j) * v_prefactor(k_prime, w1p, w2, j))
        .sum::<f64>()
        * (early + late)
}

/// `A V` with the `u2` integral by quadrature and the `u1`, `u1'` integrals in closed form.
pub fn shape_v_quadrature(
    s: f64,
    t: f64,
    k: usize,
    k_prime: usize,
    w1: Freq,
    w1p: Freq,
    w2: Freq,
    tol: f64,
) -> Result<f64> {
    let (s, t) = (s.min(t), s.max(t));
    let (l1, l1p, l2) = (lambda(w1), lambda(w1p), lambda(w2));
    let f = |u2: f64| v_inner(s, t, l1, l2, u2) * v_inner(s, t, l1p, l2, u2);
    let mut total = integrate_to_minus_infinity(f, s, 2.0 * l2, tol)?;
    if s < t {
        total += integrate(f, s, t, tol)?;
    }
    Ok((0..2)
        .map(|j| v_prefactor(k, w1, w2, j) * v_prefactor(k_prime, w1p, w2, j))
        .sum::<f64>()
        * total)
}

/// `S L` by quadrature of `int_{-inf}^{s ^ t} e^{-|t-u| c} e^{-|s-u| c} du`.
pub fn shape_l_quadrature(s: f64, t: f64, w4: Freq, tol: f64) -> Result<f64> {
    let c = lambda(w4);
    integrate_to_minus_infinity(|u| (-(t - u).abs() * c).exp() * (-(s - u).abs() * c).exp(), s.min(t), 2.0 * c, tol)
}

/// `S Y` by tensor quadrature of the defining four-fold integral: the half-infinite
/// `u1`, `u2` ranges are mapped to `(0, 1]` by exponential substitution and the
/// `(u3, u3')` square is integrated adaptively, split along its diagonal.
pub fn shape_y_quadrature(s: f64, t: f64, w1: Freq, w2: Freq, tol: f64) -> Result<f64> {
    let a = lambda(add(w1, w2));
    let b = lambda(w1);
    let c = lambda(w2);
    let (nodes, weights) = gauss_legendre(8);
    let half_line = |upper: f64, rate: f64, f: &dyn Fn(f64) -> f64| {
        nodes
            .iter()
            .zip(&weights)
            .map(|(x, w)| {
                let v = 0.5 * (x + 1.0);
                0.5 * w * f(upper + v.ln() / rate) / (rate * v)
            })
            .sum::<f64>()
    };
    let integrand = |u3: f64, u3p: f64| {
        let m = u3.min(u3p);
        let sum = u3 + u3p;
        let i1 = half_line(m, 2.0 * b, &|u1| (-(sum - 2.0 * u1).abs() * b).exp());
        let i2 = half_line(m, 2.0 * c, &|u2| (-(sum - 2.0 * u2).abs() * c).exp());
        (-(t + s - sum).abs() * a).exp() * i1 * i2
    };
    let inner = |u3: f64| -> Result<f64> {
        let f = |u3p: f64| integrand(u3, u3p);
        if u3 > 0.0 && u3 < s {
            Ok(integrate(f, 0.0, u3, tol)? + integrate(f, u3, s, tol)?)
        } else {
            integrate(f, 0.0, s, tol)
        }
    };
    if s == 0.0 || t == 0.0 {
        return Ok(0.0);
    }
    let err = std::cell::Cell::new(None);
    let outer = |u3: f64| match inner(u3) {
        Ok(v) => v,
        Err(e) => {
            err.set(Some(e));
            0.0
        }
    };
    let total = if s < t { integrate(outer, 0.0, s, tol)? + integrate(outer, s, t, tol)? } else { integrate(outer, 0.0, t, tol)? };
    match err.take() {
        Some(e) => Err(e),
        None => Ok(total),
    }
}
