//! Trigonometric polynomials on the circle, for the one-dimensional product-rule identity
//! `u d(d^{-2} u) = ((d^{-1} u d^{-2} u)'' - (u d^{-2} u)') / 2`.

use std::f64::consts::TAU;

use anyhow::bail;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Coefficients `c_k`, `|k| <= n`, stored at `k + n`. Products widen the band, so no
/// frequency is ever truncated.
#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    n: usize,
    coeffs: Vec<C64>,
}

impl Line {
    pub fn zeros(n: usize) -> Self {
        Line { n, coeffs: vec![C64::new(0.0, 0.0); 2 * n + 1] }
    }

    pub fn from_fn(n: usize, f: impl Fn(i64) -> C64) -> Self {
        Line { n, coeffs: (-(n as i64)..=n as i64).map(f).collect() }
    }

    /// `sin(2 pi m x)`.
    pub fn sine(m: usize) -> Self {
        let mut s = Line::zeros(m);
        s.set(m as i64, C64::new(0.0, -0.5));
        s.set(-(m as i64), C64::new(0.0, 0.5));
        s
    }

    /// A real mean-free field with independent Gaussian modes of size `|k|^{-1}`.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = Line::zeros(n);
        for k in 1..=n as i64 {
            let c = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) / k as f64;
            u.set(k, c);
            u.set(-k, c.conj());
        }
        u
    }

    pub fn band(&self) -> usize {
        self.n
    }

    pub fn get(&self, k: i64) -> C64 {
        if k.unsigned_abs() as usize > self.n {
            C64::new(0.0, 0.0)
        } else {
            self.coeffs[(k + self.n as i64) as usize]
        }
    }

    fn set(&mut self, k: i64, c: C64) {
        self.coeffs[(k + self.n as i64) as usize] = c;
    }

    fn map(&self, f: impl Fn(i64, C64) -> C64) -> Self {
        Line::from_fn(self.n, |k| f(k, self.get(k)))
    }

    pub fn derivative(&self) -> Self {
        self.map(|k, c| c * C64::new(0.0, TAU * k as f64))
    }

    /// The mean-free antiderivative; fails unless the mean vanishes.
    pub fn antiderivative(&self) -> anyhow::Result<Self> {
        if self.get(0).norm() > 1e-14 {
            bail!("antiderivative of a field with mean {}", self.get(0));
        }
        Ok(self.map(|k, c| if k == 0 { C64::new(0.0, 0.0) } else { c / C64::new(0.0, TAU * k as f64) }))
    }

    /// Exact product by convolution.
    pub fn product(&self, other: &Line) -> Self {
        let n = self.n + other.n;
        let mut out = Line::zeros(n);
        for a in -(self.n as i64)..=self.n as i64 {
            let ca = self.get(a);
            for b in -(other.n as i64)..=other.n as i64 {
                out.coeffs[(a + b + n as i64) as usize] += ca * other.get(b);
            }
        }
        out
    }

    pub fn sub(&self, other: &Line) -> Self {
        let n = self.n.max(other.n);
        Line::from_fn(n, |k| self.get(k) - other.get(k))
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|_, c| c * a)
    }

    pub fn max_abs_diff(&self, other: &Line) -> f64 {
        self.sub(other).coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn eval(&self, x: f64) -> f64 {
        (-(self.n as i64)..=self.n as i64).map(|k| (self.get(k) * C64::from_polar(1.0, TAU * k as f64 * x)).re).sum()
    }
}

/// Both sides of the product-rule identity for a mean-free `u`.
pub fn product_rule_sides(u: &Line) -> anyhow::Result<(Line, Line)> {
    let a = u.antiderivative()?;
    let b = a.antiderivative()?;
    let lhs = u.product(&b.derivative());
    let rhs = a.product(&b).derivative().derivative().sub(&u.product(&b).derivative()).scale(0.5);
    Ok((lhs, rhs))
}
