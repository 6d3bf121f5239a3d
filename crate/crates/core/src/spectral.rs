//! Truncated Fourier lattice on the 2-torus and the spectral fields living on it.
//!
//! Convention: `u(x) = sum_w c(w) exp(2 pi i <w, x>)` over `|w|_inf <= N`, with
//! coefficients stored row-major in `(w1, w2)`, `w1` the slow index. Products are
//! evaluated on a zero-padded grid of side at least `2 (2N + 1)`, which makes the
//! truncated product exact (no aliasing back into the lattice).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::error::{KsError, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// `(1 - e^{-z}) / z`, continuous at `z = 0`.
pub fn exp_integral_1(z: f64) -> f64 {
    if z.abs() < 1e-300 {
        1.0
    } else {
        -(-z).exp_m1() / z
    }
}

/// `(1 - e^{-z}(1 + z)) / z^2 = int_0^1 r e^{-r z} dr`.
pub fn exp_integral_2(z: f64) -> f64 {
    if z.abs() < 0.1 {
        // sum_k (-z)^k (k + 1) / (k + 2)!
        let mut term = 0.5;
        let mut sum = 0.0;
        for k in 0..14 {
            sum += term;
            let k = k as f64;
            term *= -z * (k + 2.0) / ((k + 1.0) * (k + 3.0));
        }
        sum
    } else {
        (1.0 - (-z).exp() * (1.0 + z)) / (z * z)
    }
}

/// `(e^{-a tau} - e^{-b tau}) / (b - a)`, symmetric in `(a, b)`, equal to
/// `tau e^{-a tau}` on the diagonal.
pub fn exp_divided_difference(a: f64, b: f64, tau: f64) -> f64 {
    let lo = a.min(b);
    let gap = (a - b).abs();
    tau * (-lo * tau).exp() * exp_integral_1(gap * tau)
}

pub(crate) fn smooth_fft_size(min: usize) -> usize {
    let mut p = min.max(1);
    loop {
        let mut r = p;
        for f in [2, 3, 5] {
            while r.is_multiple_of(f) {
                r /= f;
            }
        }
        if r == 1 {
            return p;
        }
        p += 1;
    }
}

/// 2-D complex FFT of side `p` acting on lattice data of cutoff `n <= (p - 1) / 2`.
pub(crate) struct Fft2 {
    p: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn cached(p: usize) -> Arc<Fft2> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Fft2>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().expect("fft cache poisoned");
        map.entry(p)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                Arc::new(Fft2 {
                    p,
                    fwd: planner.plan_fft_forward(p),
                    inv: planner.plan_fft_inverse(p),
                })
            })
            .clone()
    }

    fn scratch(&self) -> Vec<C64> {
        let len = self
            .fwd
            .get_inplace_scratch_len()
            .max(self.inv.get_inplace_scratch_len());
        vec![C64::new(0.0, 0.0); len]
    }

    /// Point values `u(x)` on the `p x p` grid, row-major in `(x1, x2)`.
    pub(crate) fn synthesize(&self, n: usize, coeffs: &[C64]) -> Vec<C64> {
        let p = self.p;
        let side = 2 * n + 1;
        let mut scratch = self.scratch();
        let mut rows = vec![C64::new(0.0, 0.0); side * p];
        for a in 0..side {
            let row = &mut rows[a * p..(a + 1) * p];
            for b in 0..side {
                let k2 = b as i64 - n as i64;
                row[k2.rem_euclid(p as i64) as usize] = coeffs[a * side + b];
            }
            self.inv.process_with_scratch(row, &mut scratch);
        }
        let mut cols = vec![C64::new(0.0, 0.0); p * p];
        for a in 0..side {
            let k1 = a as i64 - n as i64;
            let r = k1.rem_euclid(p as i64) as usize;
            for x2 in 0..p {
                cols[x2 * p + r] = rows[a * p + x2];
            }
        }
        self.inv.process_with_scratch(&mut cols, &mut scratch);
        let mut out = vec![C64::new(0.0, 0.0); p * p];
        for x2 in 0..p {
            for x1 in 0..p {
                out[x1 * p + x2] = cols[x2 * p + x1];
            }
        }
        out
    }

    /// Lattice coefficients of the trigonometric interpolant of grid values.
    pub(crate) fn analyze(&self, n: usize, values: &[C64]) -> Vec<C64> {
        let p = self.p;
        let side = 2 * n + 1;
        let mut scratch = self.scratch();
        let mut buf = values.to_vec();
        self.fwd.process_with_scratch(&mut buf, &mut scratch);
        let mut cols = vec![C64::new(0.0, 0.0); side * p];
        for b in 0..side {
            let k2 = b as i64 - n as i64;
            let c = k2.rem_euclid(p as i64) as usize;
            for x1 in 0..p {
                cols[b * p + x1] = buf[x1 * p + c];
            }
        }
        self.fwd.process_with_scratch(&mut cols, &mut scratch);
        let norm = 1.0 / (p * p) as f64;
        let mut out = vec![C64::new(0.0, 0.0); side * side];
        for a in 0..side {
            let k1 = a as i64 - n as i64;
            let r = k1.rem_euclid(p as i64) as usize;
            for b in 0..side {
                out[a * side + b] = cols[b * p + r] * norm;
            }
        }
        out
    }
}

struct LatticeInner {
    n: usize,
    side: usize,
    lambda: Vec<f64>,
    grid: Arc<Fft2>,
    padded: Arc<Fft2>,
}

/// Frequency lattice `{w in Z^2 : |w|_inf <= N}`.
#[derive(Clone)]
pub struct Lattice {
    inner: Arc<LatticeInner>,
}

impl fmt::Debug for Lattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Lattice(N = {})", self.inner.n)
    }
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.inner.n == other.inner.n
    }
}

impl Lattice {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(KsError::InvalidArgument("lattice cutoff must be positive".into()));
        }
        let side = 2 * n + 1;
        let mut lambda = Vec::with_capacity(side * side);
        for a in 0..side {
            for b in 0..side {
                let k1 = a as f64 - n as f64;
                let k2 = b as f64 - n as f64;
                lambda.push(TWO_PI * TWO_PI * (k1 * k1 + k2 * k2));
            }
        }
        Ok(Lattice {
            inner: Arc::new(LatticeInner {
                n,
                side,
                lambda,
                grid: Fft2::cached(side),
                padded: Fft2::cached(smooth_fft_size(2 * side)),
            }),
        })
    }

    pub fn n(&self) -> usize {
        self.inner.n
    }

    pub fn side(&self) -> usize {
        self.inner.side
    }

    pub fn len(&self) -> usize {
        self.inner.side * self.inner.side
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Side of the zero-padded product grid.
    pub fn padded_side(&self) -> usize {
        self.inner.padded.p
    }

    pub fn contains(&self, k1: i64, k2: i64) -> bool {
        let n = self.inner.n as i64;
        k1.abs() <= n && k2.abs() <= n
    }

    pub fn index(&self, k1: i64, k2: i64) -> Option<usize> {
        if self.contains(k1, k2) {
            let n = self.inner.n as i64;
            Some(((k1 + n) as usize) * self.inner.side + (k2 + n) as usize)
        } else {
            None
        }
    }

    pub fn freq(&self, idx: usize) -> (i64, i64) {
        let n = self.inner.n as i64;
        let side = self.inner.side;
        ((idx / side) as i64 - n, (idx % side) as i64 - n)
    }

    /// Index of `-w`.
    pub fn neg(&self, idx: usize) -> usize {
        self.len() - 1 - idx
    }

    pub fn zero_index(&self) -> usize {
        self.len() / 2
    }

    /// `|2 pi w|^2`.
    pub fn lambda(&self, idx: usize) -> f64 {
        self.inner.lambda[idx]
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.inner.lambda
    }

    /// Euclidean norm `|w|`.
    pub fn norm(&self, idx: usize) -> f64 {
        self.inner.lambda[idx].sqrt() / TWO_PI
    }

    pub(crate) fn padded_fft(&self) -> &Fft2 {
        &self.inner.padded
    }

    pub(crate) fn grid_fft(&self) -> &Fft2 {
        &self.inner.grid
    }

    fn check(&self, other: &Lattice) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(KsError::LatticeMismatch { left: self.n(), right: other.n() })
        }
    }
}

/// Point values of a field on the zero-padded product grid.
#[derive(Clone, Debug)]
pub struct PaddedValues {
    pub values: Vec<C64>,
}

impl PaddedValues {
    pub fn zeros(lattice: &Lattice) -> Self {
        let p = lattice.padded_side();
        PaddedValues { values: vec![C64::new(0.0, 0.0); p * p] }
    }

    pub fn add_product(&mut self, a: &PaddedValues, b: &PaddedValues) {
        for ((o, x), y) in self.values.iter_mut().zip(&a.values).zip(&b.values) {
            *o += x * y;
        }
    }

    pub fn add_assign(&mut self, a: &PaddedValues) {
        for (o, x) in self.values.iter_mut().zip(&a.values) {
            *o += x;
        }
    }
}

/// Coefficients `c(w)` of a (typically real-valued) field on a [`Lattice`].
#[derive(Clone, Debug)]
pub struct SpectralField {
    lattice: Lattice,
    coeffs: Vec<C64>,
}

pub type VectorField = [SpectralField; 2];

impl SpectralField {
    pub fn zeros(lattice: &Lattice) -> Self {
        SpectralField { lattice: lattice.clone(), coeffs: vec![C64::new(0.0, 0.0); lattice.len()] }
    }

    pub fn constant(lattice: &Lattice, c: f64) -> Self {
        let mut f = Self::zeros(lattice);
        f.coeffs[lattice.zero_index()] = C64::new(c, 0.0);
        f
    }

    pub fn from_coeffs(lattice: &Lattice, coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len() != lattice.len() {
            return Err(KsError::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                lattice.len(),
                coeffs.len()
            )));
        }
        Ok(SpectralField { lattice: lattice.clone(), coeffs })
    }

    pub fn from_fn(lattice: &Lattice, mut f: impl FnMut(i64, i64) -> C64) -> Self {
        let coeffs = (0..lattice.len())
            .map(|i| {
                let (k1, k2) = lattice.freq(i);
                f(k1, k2)
            })
            .collect();
        SpectralField { lattice: lattice.clone(), coeffs }
    }

    /// Interpolates real point values given on the `(2N+1)^2` grid `x = (a, b) / (2N+1)`.
    pub fn from_values(lattice: &Lattice, values: &[f64]) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(KsError::InvalidArgument("grid size does not match lattice".into()));
        }
        let v: Vec<C64> = values.iter().map(|&x| C64::new(x, 0.0)).collect();
        let mut f = SpectralField {
            lattice: lattice.clone(),
            coeffs: lattice.grid_fft().analyze(lattice.n(), &v),
        };
        f.symmetrize();
        Ok(f)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }

    pub fn get(&self, k1: i64, k2: i64) -> C64 {
        self.lattice.index(k1, k2).map_or(C64::new(0.0, 0.0), |i| self.coeffs[i])
    }

    pub fn set(&mut self, k1: i64, k2: i64, c: C64) {
        if let Some(i) = self.lattice.index(k1, k2) {
            self.coeffs[i] = c;
        }
    }

    /// Spatial mean, i.e. the zero mode.
    pub fn mean(&self) -> f64 {
        self.coeffs[self.lattice.zero_index()].re
    }

    /// `max_w |c(w) - conj c(-w)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let l = &self.lattice;
        (0..l.len())
            .map(|i| (self.coeffs[i] - self.coeffs[l.neg(i)].conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn require_hermitian(&self, tol: f64) -> Result<()> {
        let scale = self.coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
        let defect = self.hermitian_defect();
        if defect > tol * scale {
            Err(KsError::NonHermitian { defect })
        } else {
            Ok(())
        }
    }

    /// Projects onto real-valued fields: `c(w) <- (c(w) + conj c(-w)) / 2`.
    pub fn symmetrize(&mut self) {
        let l = self.lattice.clone();
        for i in 0..=l.zero_index() {
            let j = l.neg(i);
            let avg = (self.coeffs[i] + self.coeffs[j].conj()) * 0.5;
            self.coeffs[i] = avg;
            self.coeffs[j] = avg.conj();
        }
    }

    /// Real point values on the `(2N+1)^2` grid.
    pub fn values(&self) -> Vec<f64> {
        self.lattice
            .grid_fft()
            .synthesize(self.lattice.n(), &self.coeffs)
            .into_iter()
            .map(|c| c.re)
            .collect()
    }

    pub fn padded(&self) -> PaddedValues {
        PaddedValues { values: self.lattice.padded_fft().synthesize(self.lattice.n(), &self.coeffs) }
    }

    pub fn from_padded(lattice: &Lattice, values: &PaddedValues) -> Self {
        SpectralField {
            lattice: lattice.clone(),
            coeffs: lattice.padded_fft().analyze(lattice.n(), &values.values),
        }
    }

    /// `||u||_{L^2}` by Parseval.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Sup of `|u|` over the `(2N+1)^2` grid.
    pub fn sup_norm(&self) -> f64 {
        self.lattice
            .grid_fft()
            .synthesize(self.lattice.n(), &self.coeffs)
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    /// `(sum_w (1 + |2 pi w|^2)^k |c(w)|^2)^{1/2}`.
    pub fn sobolev_norm(&self, k: f64) -> f64 {
        self.coeffs
            .iter()
            .zip(self.lattice.lambdas())
            .map(|(c, l)| (1.0 + l).powf(k) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map_coeffs(|_, c| c * a)
    }

    pub fn axpy(&mut self, a: f64, x: &SpectralField) {
        debug_assert!(self.lattice == x.lattice);
        for (y, x) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *y += x * a;
        }
    }

    pub fn map_coeffs(&self, f: impl Fn(usize, C64) -> C64) -> Self {
        SpectralField {
            lattice: self.lattice.clone(),
            coeffs: self.coeffs.iter().enumerate().map(|(i, &c)| f(i, c)).collect(),
        }
    }

    /// Applies a Fourier multiplier `m(k1, k2)`.
    pub fn multiply_symbol(&self, m: impl Fn(i64, i64) -> C64) -> Self {
        let l = &self.lattice;
        self.map_coeffs(|i, c| {
            let (k1, k2) = l.freq(i);
            c * m(k1, k2)
        })
    }

    /// `d_j u`, `j in {0, 1}`.
    pub fn partial(&self, j: usize) -> Self {
        self.multiply_symbol(|k1, k2| {
            let k = if j == 0 { k1 } else { k2 };
            C64::new(0.0, TWO_PI * k as f64)
        })
    }

    pub fn grad(&self) -> VectorField {
        [self.partial(0), self.partial(1)]
    }

    pub fn laplacian(&self) -> Self {
        let l = self.lattice.clone();
        self.map_coeffs(|i, c| -c * l.lambda(i))
    }

    /// Heat semigroup `P_t`, multiplier `exp(-t |2 pi w|^2)`.
    pub fn heat(&self, t: f64) -> Result<Self> {
        if t < 0.0 {
            return Err(KsError::InvalidTime(t));
        }
        let l = self.lattice.clone();
        Ok(self.map_coeffs(|i, c| c * (-t * l.lambda(i)).exp()))
    }

    /// `Phi_f = (-Delta)^{-1}(f - mean f)`.
    pub fn poisson(&self) -> Self {
        let l = self.lattice.clone();
        self.map_coeffs(|i, c| {
            let lam = l.lambda(i);
            if lam == 0.0 {
                C64::new(0.0, 0.0)
            } else {
                c / lam
            }
        })
    }

    /// `grad Phi_f`, multiplier `2 pi i w^j |2 pi w|^{-2}` off the zero mode.
    pub fn grad_poisson(&self) -> VectorField {
        self.poisson().grad()
    }

    /// Dealiased truncated product.
    pub fn product(&self, other: &SpectralField) -> Result<Self> {
        self.lattice.check(&other.lattice)?;
        let mut a = self.padded();
        let b = other.padded();
        for (x, y) in a.values.iter_mut().zip(&b.values) {
            *x *= y;
        }
        Ok(Self::from_padded(&self.lattice, &a))
    }

    /// Brute-force truncated convolution, `O(len^2)`; reference for [`Self::product`].
    pub fn product_direct(&self, other: &SpectralField) -> Self {
        let l = &self.lattice;
        let mut out = Self::zeros(l);
        for i in 0..l.len() {
            let (a1, a2) = l.freq(i);
            for j in 0..l.len() {
                let (b1, b2) = l.freq(j);
                if let Some(k) = l.index(a1 + b1, a2 + b2) {
                    out.coeffs[k] += self.coeffs[i] * other.coeffs[j];
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &SpectralField) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// `div v = d_1 v^1 + d_2 v^2`.
pub fn div(v: &VectorField) -> SpectralField {
    &v[0].partial(0) + &v[1].partial(1)
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, a: f64) -> SpectralField {
        self.scale(a)
    }
}

impl AddAssign<&SpectralField> for SpectralField {
    fn add_assign(&mut self, rhs: &SpectralField) {
        debug_assert!(self.lattice == rhs.lattice);
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a += b;
        }
    }
}

impl SubAssign<&SpectralField> for SpectralField {
    fn sub_assign(&mut self, rhs: &SpectralField) {
        debug_assert!(self.lattice == rhs.lattice);
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a -= b;
        }
    }
}

/// Uniform grid `t_i = i T / M`, `i = 0..=M`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(KsError::InvalidArgument("need at least one time step".into()));
        }
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(KsError::InvalidTime(t_end));
        }
        Ok(TimeGrid { t_end, steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.t_end
        } else {
            i as f64 * self.dt()
        }
    }

    /// Grid with `factor` times as many steps over the same horizon.
    pub fn refine(&self, factor: usize) -> Self {
        TimeGrid { t_end: self.t_end, steps: self.steps * factor }
    }
}

/// A field sampled at every point of a [`TimeGrid`].
#[derive(Clone, Debug)]
pub struct FieldPath {
    pub grid: TimeGrid,
    pub fields: Vec<SpectralField>,
}

impl FieldPath {
    pub fn zeros(lattice: &Lattice, grid: TimeGrid) -> Self {
        FieldPath { grid, fields: vec![SpectralField::zeros(lattice); grid.steps + 1] }
    }

    pub fn last(&self) -> &SpectralField {
        self.fields.last().expect("paths are never empty")
    }

    pub fn map(&self, f: impl Fn(&SpectralField) -> SpectralField) -> Self {
        FieldPath { grid: self.grid, fields: self.fields.iter().map(f).collect() }
    }
}

/// Quadrature rule for the forcing in `I[f](t) = int_0^t P_{t-s} f(s) ds`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DuhamelRule {
    /// Forcing frozen at the left end point of each step; exact for piecewise-constant forcing.
    #[default]
    LeftPoint,
    /// Forcing interpolated linearly over each step; exact for piecewise-linear forcing.
    Trapezoid,
}

/// Per-mode weights of the exponential integrator
/// `X_{i+1} = e^{-lambda dt} X_i + w0 f_i + w1 f_{i+1}`.
#[derive(Clone, Debug)]
pub struct DuhamelWeights {
    pub rule: DuhamelRule,
    pub decay: Vec<f64>,
    pub w0: Vec<f64>,
    pub w1: Vec<f64>,
}

impl DuhamelWeights {
    pub fn new(lattice: &Lattice, dt: f64, rule: DuhamelRule) -> Self {
        let n = lattice.len();
        let mut decay = Vec::with_capacity(n);
        let mut w0 = Vec::with_capacity(n);
        let mut w1 = Vec::with_capacity(n);
        for &lam in lattice.lambdas() {
            let z = lam * dt;
            decay.push((-z).exp());
            match rule {
                DuhamelRule::LeftPoint => {
                    w0.push(dt * exp_integral_1(z));
                    w1.push(0.0);
                }
                DuhamelRule::Trapezoid => {
                    let psi = exp_integral_2(z);
                    w0.push(dt * psi);
                    w1.push(dt * (exp_integral_1(z) - psi));
                }
            }
        }
        DuhamelWeights { rule, decay, w0, w1 }
    }

    /// One step. `next` is the forcing at the right end point, ignored by the left-point rule.
    pub fn step(&self, x: &SpectralField, now: &SpectralField, next: Option<&SpectralField>) -> SpectralField {
        let mut out = x.clone();
        let c = out.coeffs_mut();
        for i in 0..c.len() {
            c[i] = c[i] * self.decay[i] + now.coeffs[i] * self.w0[i];
        }
        if self.rule == DuhamelRule::Trapezoid {
            let next = next.expect("trapezoid rule needs the right end point");
            for i in 0..c.len() {
                c[i] += next.coeffs[i] * self.w1[i];
            }
        }
        out
    }

    /// Adds `w1 * f` to `x` (the implicit part of the trapezoid rule).
    pub fn add_implicit(&self, x: &mut SpectralField, f: &SpectralField) {
        for (i, c) in x.coeffs_mut().iter_mut().enumerate() {
            *c += f.coeffs[i] * self.w1[i];
        }
    }
}

/// `I[f]` on the whole grid with `I[f](0) = 0`; `forcing` holds `f(t_i)`, `i = 0..=M`.
pub fn duhamel(forcing: &FieldPath, rule: DuhamelRule) -> FieldPath {
    let lattice = forcing.fields[0].lattice().clone();
    let w = DuhamelWeights::new(&lattice, forcing.grid.dt(), rule);
    let mut fields = Vec::with_capacity(forcing.fields.len());
    fields.push(SpectralField::zeros(&lattice));
    for i in 0..forcing.grid.steps {
        let next = w.step(&fields[i], &forcing.fields[i], forcing.fields.get(i + 1));
        fields.push(next);
    }
    FieldPath { grid: forcing.grid, fields }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_real_field(lattice: &Lattice, seed: u64) -> SpectralField {
        let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut f = SpectralField::from_fn(lattice, |_, _| C64::new(next(), next()));
        f.symmetrize();
        f
    }

    #[test]
    fn index_roundtrip_and_negation() {
        let l = Lattice::new(3).unwrap();
        for i in 0..l.len() {
            let (a, b) = l.freq(i);
            assert_eq!(l.index(a, b), Some(i));
            assert_eq!(l.freq(l.neg(i)), (-a, -b));
        }
        assert_eq!(l.freq(l.zero_index()), (0, 0));
        assert!(Lattice::new(0).is_err());
    }

    #[test]
    fn padded_side_is_large_enough() {
        for n in [1, 4, 16, 64, 128] {
            let l = Lattice::new(n).unwrap();
            assert!(l.padded_side() >= 2 * l.side());
        }
    }

    #[test]
    fn values_roundtrip() {
        let l = Lattice::new(5).unwrap();
        let f = random_real_field(&l, 3);
        let g = SpectralField::from_values(&l, &f.values()).unwrap();
        assert!(f.max_abs_diff(&g) < 1e-13);
    }

    #[test]
    fn single_mode_values() {
        let l = Lattice::new(4).unwrap();
        let mut f = SpectralField::zeros(&l);
        f.set(1, 2, C64::new(0.5, 0.0));
        f.set(-1, -2, C64::new(0.5, 0.0));
        let v = f.values();
        let side = l.side();
        for a in 0..side {
            for b in 0..side {
                let x = (a as f64 + 2.0 * b as f64) / side as f64;
                assert!((v[a * side + b] - (TWO_PI * x).cos()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn product_matches_direct_convolution() {
        let l = Lattice::new(4).unwrap();
        let f = random_real_field(&l, 1);
        let g = random_real_field(&l, 2);
        let fast = f.product(&g).unwrap();
        let slow = f.product_direct(&g);
        assert!(fast.max_abs_diff(&slow) < 1e-13);
        assert!(fast.hermitian_defect() < 1e-13);
    }

    #[test]
    fn product_of_complex_coefficients_matches_direct() {
        let l = Lattice::new(3).unwrap();
        let f = SpectralField::from_fn(&l, |a, b| C64::new(a as f64 * 0.1, b as f64 * 0.3 + 0.2));
        let g = SpectralField::from_fn(&l, |a, b| C64::new(1.0 / (1.0 + (a * a + b * b) as f64), a as f64));
        assert!(f.product(&g).unwrap().max_abs_diff(&f.product_direct(&g)) < 1e-12);
    }

    #[test]
    fn poisson_inverts_laplacian_off_mean() {
        let l = Lattice::new(6).unwrap();
        let f = random_real_field(&l, 7);
        let mut back = f.poisson().laplacian().scale(-1.0);
        back.coeffs_mut()[l.zero_index()] = f.coeffs()[l.zero_index()];
        assert!(back.max_abs_diff(&f) < 1e-14);
        let g = f.grad_poisson();
        let d = div(&g).scale(-1.0);
        let mut expect = f.clone();
        expect.coeffs_mut()[l.zero_index()] = C64::new(0.0, 0.0);
        assert!(d.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn heat_of_negative_time_is_an_error() {
        let l = Lattice::new(2).unwrap();
        assert_eq!(SpectralField::zeros(&l).heat(-1.0).unwrap_err(), KsError::InvalidTime(-1.0));
    }

    #[test]
    fn duhamel_constant_forcing_closed_form() {
        let l = Lattice::new(3).unwrap();
        let grid = TimeGrid::new(0.3, 7).unwrap();
        let f = random_real_field(&l, 11);
        for rule in [DuhamelRule::LeftPoint, DuhamelRule::Trapezoid] {
            let path = duhamel(&FieldPath { grid, fields: vec![f.clone(); 8] }, rule);
            for (k, x) in path.fields.iter().enumerate() {
                let t = grid.time(k);
                let expect = f.map_coeffs(|i, c| c * t * exp_integral_1(t * l.lambda(i)));
                let scale = f.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max);
                assert!(x.max_abs_diff(&expect) <= 1e-13 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn trapezoid_is_exact_for_linear_forcing() {
        let l = Lattice::new(2).unwrap();
        let grid = TimeGrid::new(0.2, 5).unwrap();
        let f = random_real_field(&l, 5);
        let fields = (0..=5).map(|i| f.scale(grid.time(i))).collect();
        let path = duhamel(&FieldPath { grid, fields }, DuhamelRule::Trapezoid);
        let t = grid.t_end;
        // int_0^t e^{-(t-s) lam} s ds = t^2 (phi1 - psi)(lam t)
        let expect = f.map_coeffs(|i, c| {
            let z = t * l.lambda(i);
            c * t * t * (exp_integral_1(z) - exp_integral_2(z))
        });
        assert!(path.last().max_abs_diff(&expect) < 1e-13);
    }

    #[test]
    fn exp_helpers_are_continuous() {
        for z in [1e-9, 1e-4, 0.0999, 0.1001, 3.0] {
            let psi = exp_integral_2(z);
            let direct = (1.0 - (-z).exp() * (1.0 + z)) / (z * z);
            if z > 1e-3 {
                assert!((psi - direct).abs() < 1e-9 * psi.abs());
            }
        }
        assert!((exp_integral_2(0.0) - 0.5).abs() < 1e-16);
        let a = exp_divided_difference(3.0, 3.0, 0.7);
        assert!((a - 0.7 * (-2.1f64).exp()).abs() < 1e-15);
        let b = exp_divided_difference(2.0, 5.0, 0.7);
        assert!((b - ((-1.4f64).exp() - (-3.5f64).exp()) / 3.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn heat_semigroup(seed in 0u64..1000, s in 0.0f64..0.05, t in 0.0f64..0.05) {
            let l = Lattice::new(4).unwrap();
            let f = random_real_field(&l, seed);
            let a = f.heat(s).unwrap().heat(t).unwrap();
            let b = f.heat(s + t).unwrap();
            prop_assert!(a.max_abs_diff(&b) < 1e-14);
        }

        #[test]
        fn product_preserves_hermitian_symmetry(seed in 0u64..1000) {
            let l = Lattice::new(3).unwrap();
            let f = random_real_field(&l, seed);
            let g = random_real_field(&l, seed + 17);
            prop_assert!(f.product(&g).unwrap().hermitian_defect() < 1e-12);
        }

        #[test]
        fn poisson_has_zero_mean(seed in 0u64..1000) {
            let l = Lattice::new(3).unwrap();
            let f = random_real_field(&l, seed);
            prop_assert_eq!(f.poisson().mean(), 0.0);
        }
    }
}
