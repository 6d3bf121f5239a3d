//! Complex Brownian motions indexed by lattice modes, the mollifier, the noise
//! heterogeneity `sigma` and the stochastic convolution `ti = div I[sigma xi]`.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::spectral::{exp_integral_1, exp_integral_2, FieldPath, Lattice, SpectralField, TimeGrid, TWO_PI};

/// Compactly supported even bump with `bump(0) = 1` and support in `[-1, 1]`.
pub fn bump(r: f64) -> f64 {
    let r2 = r * r;
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r2)).exp()
    }
}

/// Frequency cutoff `phi(delta m)` applied to the noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Mollifier {
    /// Smooth bump at scale `delta`; resolves `|m| < 1/delta`.
    Smooth { delta: f64 },
    /// Keeps every lattice mode with weight one.
    Sharp,
}

impl Mollifier {
    pub fn smooth(delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(KsError::InvalidArgument(format!("mollifier scale must be positive, got {delta}")));
        }
        Ok(Mollifier::Smooth { delta })
    }

    pub fn delta(&self) -> Option<f64> {
        match *self {
            Mollifier::Smooth { delta } => Some(delta),
            Mollifier::Sharp => None,
        }
    }

    pub fn symbol(&self, k1: i64, k2: i64) -> f64 {
        match *self {
            Mollifier::Smooth { delta } => bump(delta * ((k1 * k1 + k2 * k2) as f64).sqrt()),
            Mollifier::Sharp => 1.0,
        }
    }

    /// Every frequency seen by the mollified noise must be on the lattice: `1/delta <= N`.
    pub fn check(&self, lattice: &Lattice) -> Result<()> {
        match *self {
            Mollifier::Smooth { delta } if 1.0 / delta > lattice.n() as f64 + 1e-12 => {
                Err(KsError::DeltaTooSmall { delta, n: lattice.n() })
            }
            _ => Ok(()),
        }
    }

    /// `(index, phi(delta m))` for the lattice modes with non-zero weight.
    pub fn support(&self, lattice: &Lattice) -> Vec<(usize, f64)> {
        (0..lattice.len())
            .filter_map(|i| {
                let (a, b) = lattice.freq(i);
                let w = self.symbol(a, b);
                (w != 0.0).then_some((i, w))
            })
            .collect()
    }
}

/// One trigonometric term `cos_amp cos(2 pi <k, x>) + sin_amp sin(2 pi <k, x>)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub k: (i64, i64),
    pub cos_amp: f64,
    pub sin_amp: f64,
}

#[derive(Clone, Debug)]
enum SigmaPath {
    Constant(SpectralField),
    PerStep(Vec<SpectralField>),
}

/// The multiplicative noise coefficient `sigma(t, x)`, piecewise constant in time on a grid.
#[derive(Clone, Debug)]
pub struct Heterogeneity {
    path: SigmaPath,
}

impl Heterogeneity {
    pub fn constant(lattice: &Lattice, c: f64) -> Self {
        Heterogeneity { path: SigmaPath::Constant(SpectralField::constant(lattice, c)) }
    }

    pub fn trig(lattice: &Lattice, mean: f64, terms: &[TrigTerm]) -> Result<Self> {
        let mut f = SpectralField::constant(lattice, mean);
        for t in terms {
            let (a, b) = t.k;
            if (a, b) == (0, 0) {
                f.set(0, 0, f.get(0, 0) + C64::new(t.cos_amp, 0.0));
                continue;
            }
            if !lattice.contains(a, b) {
                return Err(KsError::InvalidArgument(format!("trig mode {:?} outside the lattice", t.k)));
            }
            let c = C64::new(0.5 * t.cos_amp, -0.5 * t.sin_amp);
            f.set(a, b, f.get(a, b) + c);
            f.set(-a, -b, f.get(-a, -b) + c.conj());
        }
        Ok(Heterogeneity { path: SigmaPath::Constant(f) })
    }

    pub fn from_field(field: SpectralField) -> Result<Self> {
        field.require_hermitian(1e-12)?;
        Ok(Heterogeneity { path: SigmaPath::Constant(field) })
    }

    /// `sigma(t_i) = sqrt(max(rho_bar(t_i), 0))` on the grid, for `i = 0..M-1`.
    /// Fails if the clipped negative mass exceeds `tol` of the total mass.
    pub fn sqrt_deterministic(rho_bar: &FieldPath, tol: f64) -> Result<Self> {
        let mut fields = Vec::with_capacity(rho_bar.grid.steps);
        for f in rho_bar.fields.iter().take(rho_bar.grid.steps) {
            let values = f.values();
            let total: f64 = values.iter().map(|v| v.abs()).sum();
            let negative: f64 = values.iter().filter(|v| **v < 0.0).map(|v| -v).sum();
            let fraction = if total > 0.0 { negative / total } else { 0.0 };
            if fraction > tol {
                return Err(KsError::NegativeMass { fraction });
            }
            let roots: Vec<f64> = values.iter().map(|v| v.max(0.0).sqrt()).collect();
            fields.push(SpectralField::from_values(f.lattice(), &roots)?);
        }
        Ok(Heterogeneity { path: SigmaPath::PerStep(fields) })
    }

    pub fn is_time_constant(&self) -> bool {
        matches!(self.path, SigmaPath::Constant(_))
    }

    pub fn lattice(&self) -> &Lattice {
        self.at_step(0).lattice()
    }

    /// `sigma` on `[t_i, t_{i+1})`.
    pub fn at_step(&self, i: usize) -> &SpectralField {
        match &self.path {
            SigmaPath::Constant(f) => f,
            SigmaPath::PerStep(v) => &v[i.min(v.len() - 1)],
        }
    }

    pub fn steps(&self) -> Option<usize> {
        match &self.path {
            SigmaPath::Constant(_) => None,
            SigmaPath::PerStep(v) => Some(v.len()),
        }
    }

    /// Coefficients of `sigma(t_i)` with modulus above `1e-14` of the largest one.
    pub fn support(&self, i: usize) -> Vec<(usize, C64)> {
        let f = self.at_step(i);
        let max = f.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max);
        f.coeffs()
            .iter()
            .enumerate()
            .filter(|(_, c)| max > 0.0 && c.norm() > 1e-14 * max)
            .map(|(i, c)| (i, *c))
            .collect()
    }

    /// `||sigma||_{C_T H^2}`.
    pub fn h2_norm(&self) -> f64 {
        match &self.path {
            SigmaPath::Constant(f) => f.sobolev_norm(2.0),
            SigmaPath::PerStep(v) => v.iter().map(|f| f.sobolev_norm(2.0)).fold(0.0, f64::max),
        }
    }

    fn check(&self, lattice: &Lattice, grid: &TimeGrid) -> Result<()> {
        if self.lattice() != lattice {
            return Err(KsError::LatticeMismatch { left: self.lattice().n(), right: lattice.n() });
        }
        if let Some(s) = self.steps() {
            if s < grid.steps {
                return Err(KsError::InvalidArgument(format!(
                    "heterogeneity covers {s} steps, grid has {}",
                    grid.steps
                )));
            }
        }
        Ok(())
    }
}

/// Increments `Delta W^j_i(m)` of two families of complex Brownian motions with
/// `W(-m) = conj W(m)`; real and imaginary parts have variance `dt / 2` each and
/// the self-conjugate mode `m = 0` is real with variance `dt`.
///
/// Mode `m` of component `j` is drawn from its own ChaCha stream keyed by
/// `(seed, j, m)`, so a given seed yields the same increments on every lattice
/// containing `m`.
#[derive(Clone, Debug)]
pub struct BrownianField {
    lattice: Lattice,
    grid: TimeGrid,
    seed: u64,
    increments: Vec<[Vec<C64>; 2]>,
}

fn stream_rng(seed: u64, j: usize, k1: i64, k2: i64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(j as u64).to_le_bytes());
    key[16..24].copy_from_slice(b"ks-brown");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(((k1 as u32 as u64) << 32) | k2 as u32 as u64);
    rng
}

impl BrownianField {
    /// Samples all modes with `|m| < radius` (all lattice modes if `radius` is `None`).
    pub fn sample(lattice: &Lattice, grid: TimeGrid, seed: u64, radius: Option<f64>) -> Self {
        let zero = C64::new(0.0, 0.0);
        let mut increments = vec![[vec![zero; lattice.len()], vec![zero; lattice.len()]]; grid.steps];
        let sd = (grid.dt() / 2.0).sqrt();
        for idx in lattice.zero_index()..lattice.len() {
            if let Some(r) = radius {
                if lattice.norm(idx) >= r {
                    continue;
                }
            }
            let (k1, k2) = lattice.freq(idx);
            let neg = lattice.neg(idx);
            for j in 0..2 {
                let mut rng = stream_rng(seed, j, k1, k2);
                for step in increments.iter_mut() {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    if idx == neg {
                        step[j][idx] = C64::new(a * grid.dt().sqrt(), 0.0);
                    } else {
                        let z = C64::new(a * sd, b * sd);
                        step[j][idx] = z;
                        step[j][neg] = z.conj();
                    }
                }
            }
        }
        BrownianField { lattice: lattice.clone(), grid, seed, increments }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increment(&self, step: usize, j: usize) -> &[C64] {
        &self.increments[step][j]
    }

    /// Sums blocks of `factor` consecutive increments, giving the same paths on a coarser grid.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.grid.steps.is_multiple_of(factor) {
            return Err(KsError::InvalidArgument(format!(
                "cannot coarsen {} steps by {factor}",
                self.grid.steps
            )));
        }
        let increments = self
            .increments
            .chunks(factor)
            .map(|chunk| {
                let mut sum = chunk[0].clone();
                for inc in &chunk[1..] {
                    for j in 0..2 {
                        for (s, x) in sum[j].iter_mut().zip(&inc[j]) {
                            *s += x;
                        }
                    }
                }
                sum
            })
            .collect();
        Ok(BrownianField {
            lattice: self.lattice.clone(),
            grid: TimeGrid { t_end: self.grid.t_end, steps: self.grid.steps / factor },
            seed: self.seed,
            increments,
        })
    }
}

/// `sum_a sigma(a) g(w - a)` restricted to the lattice; dense inputs go through the padded FFT.
fn convolve_sigma(sigma: &SpectralField, support: &[(usize, C64)], g: &SpectralField, g_support: &[usize]) -> SpectralField {
    let lattice = sigma.lattice();
    if support.len() > 24 {
        return sigma.product(g).expect("same lattice");
    }
    let mut out = SpectralField::zeros(lattice);
    let c = out.coeffs_mut();
    for &(a, sa) in support {
        let (a1, a2) = lattice.freq(a);
        for &m in g_support {
            let (m1, m2) = lattice.freq(m);
            if let Some(w) = lattice.index(a1 + m1, a2 + m2) {
                c[w] += sa * g.coeffs()[m];
            }
        }
    }
    out
}

/// The mollified noise increment `sigma_i (phi Delta W^j_i)` convolved in frequency.
pub fn noise_increment(
    w: &BrownianField,
    sigma: &Heterogeneity,
    mollifier: &Mollifier,
    step: usize,
    j: usize,
) -> SpectralField {
    let lattice = w.lattice();
    let weights = mollifier.support(lattice);
    noise_increment_with(w, sigma, &weights, step, j)
}

fn noise_increment_with(
    w: &BrownianField,
    sigma: &Heterogeneity,
    weights: &[(usize, f64)],
    step: usize,
    j: usize,
) -> SpectralField {
    let lattice = w.lattice();
    let mut xi = SpectralField::zeros(lattice);
    let mut g_support = Vec::with_capacity(weights.len());
    let inc = w.increment(step, j);
    for &(m, phi) in weights {
        if inc[m] != C64::new(0.0, 0.0) {
            xi.coeffs_mut()[m] = inc[m] * phi;
            g_support.push(m);
        }
    }
    let s = sigma.at_step(step);
    convolve_sigma(s, &sigma.support(step), &xi, &g_support)
}

/// `ti(t_i)` for `i = 0..=M` under the exponential scheme
/// `X_{i+1} = e^{-dt |2 pi w|^2} X_i + sum_j 2 pi i w^j (sigma_i * phi Delta W^j_i)(w)`.
pub fn stochastic_convolution(w: &BrownianField, sigma: &Heterogeneity, mollifier: &Mollifier) -> Result<FieldPath> {
    let lattice = w.lattice().clone();
    let grid = w.grid();
    mollifier.check(&lattice)?;
    sigma.check(&lattice, &grid)?;
    let weights = mollifier.support(&lattice);
    let decay: Vec<f64> = lattice.lambdas().iter().map(|l| (-l * grid.dt()).exp()).collect();
    let mut fields = Vec::with_capacity(grid.steps + 1);
    fields.push(SpectralField::zeros(&lattice));
    for i in 0..grid.steps {
        let mut next = fields[i].map_coeffs(|k, c| c * decay[k]);
        for j in 0..2 {
            let incr = noise_increment_with(w, sigma, &weights, i, j).partial(j);
            next += &incr;
        }
        fields.push(next);
    }
    Ok(FieldPath { grid, fields })
}

/// `int_0^1 r^2 e^{-r z} dr`.
fn exp_moment_2(z: f64) -> f64 {
    if z < 1.0 {
        let mut term = 1.0;
        let mut sum = 0.0;
        for k in 0..40 {
            sum += term / (k as f64 + 3.0);
            term *= -z / (k as f64 + 1.0);
        }
        sum
    } else {
        (2.0 - (-z).exp() * (2.0 + z * (2.0 + z))) / (z * z * z)
    }
}

/// Exact joint sample of `(ti(t), I[ti](t))` for a constant `sigma = c`, with no
/// time stepping. Per mode and component the pair
/// `(int_0^t e^{-lambda (t-s)} dW(s), int_0^t (t-s) e^{-lambda (t-s)} dW(s))` is
/// Gaussian with an explicit covariance. Mode `m` uses the stream keyed by
/// `(seed, j, m)`, so low modes agree across lattices.
pub fn sample_ti_exact(
    lattice: &Lattice,
    c: f64,
    mollifier: &Mollifier,
    t: f64,
    seed: u64,
) -> Result<(SpectralField, SpectralField)> {
    if !(t >= 0.0) {
        return Err(KsError::InvalidTime(t));
    }
    mollifier.check(lattice)?;
    let mut ti = SpectralField::zeros(lattice);
    let mut i_ti = SpectralField::zeros(lattice);
    for idx in lattice.zero_index() + 1..lattice.len() {
        let (k1, k2) = lattice.freq(idx);
        let phi = mollifier.symbol(k1, k2);
        if phi == 0.0 {
            continue;
        }
        let z = 2.0 * lattice.lambda(idx) * t;
        let var_a = t * exp_integral_1(z);
        let cov = t * t * exp_integral_2(z);
        let var_b = t * t * t * exp_moment_2(z);
        let l11 = var_a.sqrt();
        let l21 = cov / l11;
        let l22 = (var_b - l21 * l21).max(0.0).sqrt();
        let mut a = C64::new(0.0, 0.0);
        let mut b = C64::new(0.0, 0.0);
        for (j, k) in [k1, k2].into_iter().enumerate() {
            let mut rng = stream_rng(seed, j, k1, k2);
            let mut normal = || C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * FRAC_1_SQRT_2;
            let z1 = normal();
            let z2 = normal();
            let scale = C64::new(0.0, TWO_PI * k as f64 * c * phi);
            a += scale * (z1 * l11);
            b += scale * (z1 * l21 + z2 * l22);
        }
        let neg = lattice.neg(idx);
        ti.coeffs_mut()[idx] = a;
        ti.coeffs_mut()[neg] = a.conj();
        i_ti.coeffs_mut()[idx] = b;
        i_ti.coeffs_mut()[neg] = b.conj();
    }
    Ok((ti, i_ti))
}

/// `sum_m |sigma(w - m)|^2 phi(delta m)^2` for a time-constant `sigma`.
fn noise_weight(sigma: &SpectralField, mollifier: &Mollifier, k1: i64, k2: i64) -> f64 {
    let l = sigma.lattice();
    let mut s = 0.0;
    for m in 0..l.len() {
        let (m1, m2) = l.freq(m);
        let phi = mollifier.symbol(m1, m2);
        if phi != 0.0 {
            let c = sigma.get(k1 - m1, k2 - m2);
            s += c.norm_sqr() * phi * phi;
        }
    }
    s
}

/// `E |ti(t, w)|^2` of the continuous-time OU process for a time-constant `sigma`:
/// `(1 - e^{-2 t lambda}) / 2 * sum_m |sigma(w - m)|^2 phi(delta m)^2`.
pub fn ou_variance(sigma: &SpectralField, mollifier: &Mollifier, k: (i64, i64), t: f64) -> f64 {
    let lam = TWO_PI * TWO_PI * ((k.0 * k.0 + k.1 * k.1) as f64);
    -0.5 * (-2.0 * t * lam).exp_m1() * noise_weight(sigma, mollifier, k.0, k.1)
}

/// Exact second moment of the discrete scheme after `steps` steps of size `dt`.
pub fn ou_variance_discrete(sigma: &SpectralField, mollifier: &Mollifier, k: (i64, i64), dt: f64, steps: usize) -> f64 {
    let lam = TWO_PI * TWO_PI * ((k.0 * k.0 + k.1 * k.1) as f64);
    let q = (-2.0 * lam * dt).exp();
    let geometric = if lam == 0.0 { steps as f64 } else { (1.0 - q.powi(steps as i32)) / (1.0 - q) };
    lam * dt * geometric * noise_weight(sigma, mollifier, k.0, k.1)
}
