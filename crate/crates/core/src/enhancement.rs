//! Noise enhancement: the canonical and renormalised `ty`, the deterministic
//! counterterm `tl`, the resonant diagrams `tp` and `tc`, and Monte Carlo moment
//! estimators for their norms.

use std::collections::HashMap;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KsError, Result};
use crate::littlewood_paley::{BesovIndex, LittlewoodPaley};
use crate::noise::{Heterogeneity, Mollifier};
use crate::spectral::{
    div, duhamel, exp_divided_difference, exp_integral_1, exp_integral_2, DuhamelRule, FieldPath, Lattice,
    SpectralField, TimeGrid, VectorField, TWO_PI,
};

/// How the time integrals in `tl` are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountertermRule {
    /// Expectation of the continuous-time canonical model, with `sigma`
    /// piecewise constant on the grid. Time integrals are done in closed form.
    #[default]
    Continuous,
    /// Exact expectation of the time-discrete canonical model produced by
    /// [`crate::noise::stochastic_convolution`] and [`canonical_ty`], so that
    /// `ty = ty_can - tl` has mean zero at every step.
    Discrete,
}

#[derive(Clone, Copy, Debug)]
struct PairGeometry {
    out: usize,
    geom: f64,
    lam: f64,
    mu: f64,
    orthogonal: bool,
}

fn dot(a: (i64, i64), b: (i64, i64)) -> i64 {
    a.0 * b.0 + a.1 * b.1
}

/// Contraction weight of the pair `(w1, w2)`, `w = w1 + w2`, after summing over `j1, j3`:
/// `4 pi^2 <w1, w2> * <w, w2> / |w2|^2` or its symmetrisation in `(w1, w2)`.
fn contraction_weight(w1: (i64, i64), w2: (i64, i64), symmetrize: bool) -> f64 {
    let w = (w1.0 + w2.0, w1.1 + w2.1);
    let n1 = dot(w1, w1) as f64;
    let n2 = dot(w2, w2) as f64;
    let elliptic = if symmetrize {
        0.5 * (dot(w, w1) as f64 / n1 + dot(w, w2) as f64 / n2)
    } else {
        dot(w, w2) as f64 / n2
    };
    TWO_PI * TWO_PI * dot(w1, w2) as f64 * elliptic
}

/// `S(w, w1) = sum_m1 sigma(w1 - m1) sigma(w - w1 + m1) phi(delta m1)^2` for all pairs
/// with `w, w1, w - w1` non-zero lattice modes.
fn noise_pair_weights(
    lattice: &Lattice,
    support: &[(usize, C64)],
    phi: &[(usize, f64)],
) -> HashMap<(usize, usize), C64> {
    let mut out = HashMap::new();
    for &(a, sa) in support {
        let fa = lattice.freq(a);
        for &(b, sb) in support {
            let fb = lattice.freq(b);
            let w = (fa.0 + fb.0, fa.1 + fb.1);
            let Some(wi) = lattice.index(w.0, w.1) else { continue };
            if w == (0, 0) {
                continue;
            }
            for &(m, p) in phi {
                let fm = lattice.freq(m);
                let w1 = (fa.0 + fm.0, fa.1 + fm.1);
                let w2 = (w.0 - w1.0, w.1 - w1.1);
                if w1 == (0, 0) || w2 == (0, 0) || !lattice.contains(w2.0, w2.1) {
                    continue;
                }
                let Some(w1i) = lattice.index(w1.0, w1.1) else { continue };
                *out.entry((wi, w1i)).or_insert(C64::new(0.0, 0.0)) += sa * sb * (p * p);
            }
        }
    }
    out
}

fn geometry(lattice: &Lattice, wi: usize, w1i: usize, symmetrize: bool) -> PairGeometry {
    let w = lattice.freq(wi);
    let w1 = lattice.freq(w1i);
    let w2 = (w.0 - w1.0, w.1 - w1.1);
    let four_pi2 = TWO_PI * TWO_PI;
    PairGeometry {
        out: wi,
        geom: contraction_weight(w1, w2, symmetrize),
        lam: lattice.lambda(wi),
        mu: four_pi2 * (dot(w1, w1) + dot(w2, w2)) as f64,
        orthogonal: dot(w1, w2) == 0,
    }
}

/// `tl` at a single time for a time-constant `sigma`, by the closed-form time integral
/// `int_0^t du3 int_0^u3 du1 e^{-(t-u3) lambda} e^{-(u3-u1) mu}
///   = (t phi1(lambda t) - D(lambda, mu; t)) / mu`.
pub fn counterterm_at(
    sigma: &Heterogeneity,
    mollifier: &Mollifier,
    t: f64,
    symmetrize: bool,
) -> Result<SpectralField> {
    if !sigma.is_time_constant() {
        return Err(KsError::InvalidArgument("closed form needs a time-constant sigma".into()));
    }
    if t < 0.0 {
        return Err(KsError::InvalidTime(t));
    }
    let lattice = sigma.lattice().clone();
    mollifier.check(&lattice)?;
    let weights = noise_pair_weights(&lattice, &sigma.support(0), &mollifier.support(&lattice));
    let mut out = SpectralField::zeros(&lattice);
    let mut keys: Vec<_> = weights.keys().copied().collect();
    keys.sort_unstable();
    for key in keys {
        let g = geometry(&lattice, key.0, key.1, symmetrize);
        let time = (t * exp_integral_1(g.lam * t) - exp_divided_difference(g.lam, g.mu, t)) / g.mu;
        out.coeffs_mut()[g.out] += weights[&key] * (g.geom * time);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
struct PairState {
    geometry: PairGeometry,
    first: C64,
    second: C64,
    weight: C64,
}

/// Per-step constants of the recursions for one pair.
#[derive(Clone, Copy, Debug)]
struct StepConstants {
    decay_lam: f64,
    decay_mu: f64,
    heat_weight: f64,
    cross: f64,
    inner: f64,
    w0: f64,
    w1: f64,
}

impl StepConstants {
    fn new(g: &PairGeometry, dt: f64, duhamel_rule: DuhamelRule) -> Self {
        let (lam, mu) = (g.lam, g.mu);
        let inner = if g.orthogonal {
            dt * dt * exp_integral_2(lam * dt)
        } else {
            dt * (exp_integral_1(mu * dt) - exp_integral_1(lam * dt)) / (lam - mu)
        };
        let (w0, w1) = match duhamel_rule {
            DuhamelRule::LeftPoint => (dt * exp_integral_1(lam * dt), 0.0),
            DuhamelRule::Trapezoid => {
                let psi = exp_integral_2(lam * dt);
                (dt * psi, dt * (exp_integral_1(lam * dt) - psi))
            }
        };
        StepConstants {
            decay_lam: (-lam * dt).exp(),
            decay_mu: (-mu * dt).exp(),
            heat_weight: dt * exp_integral_1(lam * dt),
            cross: exp_divided_difference(lam, mu, dt),
            inner,
            w0,
            w1,
        }
    }
}

/// `tl` on every point of `grid`.
///
/// `sigma` is frozen on each step `[t_i, t_{i+1})`. With the continuous rule the
/// recursion carries `A_k = sum_i S_i int e^{-lambda (t_k - u)} du` and
/// `B_k = sum_i S_i int D(lambda, mu; t_k - u) du`, using
/// `D(tau + dt) = e^{-mu dt} D(tau) + e^{-lambda tau} D(dt)`.
pub fn counterterm_path(
    sigma: &Heterogeneity,
    mollifier: &Mollifier,
    grid: TimeGrid,
    rule: CountertermRule,
    duhamel_rule: DuhamelRule,
) -> Result<FieldPath> {
    let lattice = sigma.lattice().clone();
    mollifier.check(&lattice)?;
    if let Some(s) = sigma.steps() {
        if s < grid.steps {
            return Err(KsError::InvalidArgument("heterogeneity shorter than the grid".into()));
        }
    }
    let phi = mollifier.support(&lattice);
    let dt = grid.dt();
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut states: Vec<PairState> = Vec::new();
    let mut constants: Vec<StepConstants> = Vec::new();
    let mut fields = Vec::with_capacity(grid.steps + 1);
    fields.push(SpectralField::zeros(&lattice));

    let load = |step: usize, index: &mut HashMap<(usize, usize), usize>, states: &mut Vec<PairState>, constants: &mut Vec<StepConstants>| {
        for s in states.iter_mut() {
            s.weight = C64::new(0.0, 0.0);
        }
        let weights = noise_pair_weights(&lattice, &sigma.support(step), &phi);
        let mut keys: Vec<_> = weights.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let slot = *index.entry(key).or_insert_with(|| {
                let g = geometry(&lattice, key.0, key.1, true);
                states.push(PairState {
                    geometry: g,
                    first: C64::new(0.0, 0.0),
                    second: C64::new(0.0, 0.0),
                    weight: C64::new(0.0, 0.0),
                });
                constants.push(StepConstants::new(&g, dt, duhamel_rule));
                states.len() - 1
            });
            states[slot].weight = weights[&key];
        }
    };

    load(0, &mut index, &mut states, &mut constants);
    for step in 0..grid.steps {
        let mut field = SpectralField::zeros(&lattice);
        match rule {
            CountertermRule::Continuous => {
                for (s, c) in states.iter_mut().zip(&constants) {
                    let a = s.first;
                    s.second = s.second * c.decay_mu + a * c.cross + s.weight * c.inner;
                    s.first = a * c.decay_lam + s.weight * c.heat_weight;
                }
            }
            CountertermRule::Discrete => {
                // first: covariance P_i / (-4 pi^2 <w1, w2>); second: Duhamel response.
                let old: Vec<C64> = states.iter().map(|s| s.first).collect();
                for (s, c) in states.iter_mut().zip(&constants) {
                    s.first = s.first * c.decay_mu + s.weight * dt;
                }
                for ((s, c), p_old) in states.iter_mut().zip(&constants).zip(old) {
                    s.second = s.second * c.decay_lam + p_old * c.w0 + s.first * c.w1;
                }
            }
        }
        if !sigma.is_time_constant() && step + 1 < grid.steps {
            load(step + 1, &mut index, &mut states, &mut constants);
        }
        for s in &states {
            field.coeffs_mut()[s.geometry.out] += s.second * s.geometry.geom;
        }
        fields.push(field);
    }
    Ok(FieldPath { grid, fields })
}

/// `div(f grad Phi_f)`.
pub fn transport_forcing(f: &SpectralField) -> Result<SpectralField> {
    let g = f.grad_poisson();
    Ok(div(&[f.product(&g[0])?, f.product(&g[1])?]))
}

/// `ty_can = div I[ti grad Phi_ti]` with `ty_can(0) = 0`.
pub fn canonical_ty(ti: &FieldPath, rule: DuhamelRule) -> Result<FieldPath> {
    let forcing = FieldPath {
        grid: ti.grid,
        fields: ti.fields.iter().map(transport_forcing).collect::<Result<_>>()?,
    };
    Ok(duhamel(&forcing, rule))
}

/// `ty = ty_can - tl`.
pub fn renormalized_ty(ty_can: &FieldPath, tl: &FieldPath) -> Result<FieldPath> {
    if ty_can.grid != tl.grid {
        return Err(KsError::InvalidArgument("ty_can and tl live on different grids".into()));
    }
    Ok(FieldPath {
        grid: ty_can.grid,
        fields: ty_can.fields.iter().zip(&tl.fields).map(|(a, b)| a - b).collect(),
    })
}

/// `tp^j = ty o d_j Phi_ti + d_j Phi_ty o ti` at one time.
pub fn diagram_tp(lp: &LittlewoodPaley, ty: &SpectralField, ti: &SpectralField) -> VectorField {
    let b_ty = lp.blocks(ty);
    let b_ti = lp.blocks(ti);
    let g_ti = ti.grad_poisson();
    let g_ty = ty.grad_poisson();
    let one = |j: usize| {
        &lp.resonant_blocks(&b_ty, &lp.blocks(&g_ti[j])) + &lp.resonant_blocks(&lp.blocks(&g_ty[j]), &b_ti)
    };
    [one(0), one(1)]
}

/// The two summands of `tc^{kj}`, indexed `[k][j]`.
#[derive(Clone, Debug)]
pub struct TcComponents {
    /// `d_k I[ti] o d_j Phi_ti`.
    pub first: [[SpectralField; 2]; 2],
    /// `d_k d_j I[Phi_ti] o ti`.
    pub second: [[SpectralField; 2]; 2],
}

impl TcComponents {
    pub fn sum(&self) -> [[SpectralField; 2]; 2] {
        let c = |k: usize, j: usize| &self.first[k][j] + &self.second[k][j];
        [[c(0, 0), c(0, 1)], [c(1, 0), c(1, 1)]]
    }
}

/// `tc` at one time from `I[ti]` and `ti` at that time.
pub fn diagram_tc(lp: &LittlewoodPaley, i_ti: &SpectralField, ti: &SpectralField) -> TcComponents {
    let b_ti = lp.blocks(ti);
    let grad_i = i_ti.grad();
    let grad_phi = ti.grad_poisson();
    let b_grad_i: Vec<_> = grad_i.iter().map(|f| lp.blocks(f)).collect();
    let b_grad_phi: Vec<_> = grad_phi.iter().map(|f| lp.blocks(f)).collect();
    let phi_i = i_ti.poisson();
    let hess = |k: usize, j: usize| lp.blocks(&phi_i.partial(k).partial(j));
    let h00 = hess(0, 0);
    let h01 = hess(0, 1);
    let h11 = hess(1, 1);
    let first = |k: usize, j: usize| lp.resonant_blocks(&b_grad_i[k], &b_grad_phi[j]);
    let second_01 = lp.resonant_blocks(&h01, &b_ti);
    TcComponents {
        first: [[first(0, 0), first(0, 1)], [first(1, 0), first(1, 1)]],
        second: [
            [lp.resonant_blocks(&h00, &b_ti), second_01.clone()],
            [second_01, lp.resonant_blocks(&h11, &b_ti)],
        ],
    }
}

/// The full enhancement on a grid: `ti`, `ty`, `tp`, `tc` and the counterterm `tl`.
#[derive(Clone, Debug)]
pub struct Enhancement {
    pub ti: FieldPath,
    pub ty: FieldPath,
    pub ty_can: FieldPath,
    pub tl: FieldPath,
    /// `I[ti]`, needed by the paracontrolled solver.
    pub i_ti: FieldPath,
    pub tp: [FieldPath; 2],
    pub tc: [[FieldPath; 2]; 2],
    /// Time discretization of `I` used for `ty` and `I[ti]`.
    pub rule: DuhamelRule,
}

impl Enhancement {
    pub fn build(lp: &LittlewoodPaley, ti: FieldPath, tl: FieldPath, rule: DuhamelRule) -> Result<Self> {
        let ty_can = canonical_ty(&ti, rule)?;
        let ty = renormalized_ty(&ty_can, &tl)?;
        let i_ti = duhamel(&ti, rule);
        let grid = ti.grid;
        let n = grid.steps + 1;
        let mut tp: [Vec<SpectralField>; 2] = [Vec::with_capacity(n), Vec::with_capacity(n)];
        let mut tc: [[Vec<SpectralField>; 2]; 2] = Default::default();
        for i in 0..n {
            let p = diagram_tp(lp, &ty.fields[i], &ti.fields[i]);
            let c = diagram_tc(lp, &i_ti.fields[i], &ti.fields[i]).sum();
            for j in 0..2 {
                tp[j].push(p[j].clone());
                for k in 0..2 {
                    tc[k][j].push(c[k][j].clone());
                }
            }
        }
        let path = |fields: Vec<SpectralField>| FieldPath { grid, fields };
        let [tp0, tp1] = tp;
        let [[c00, c01], [c10, c11]] = tc;
        Ok(Enhancement {
            ti,
            ty,
            ty_can,
            tl,
            i_ti,
            tp: [path(tp0), path(tp1)],
            tc: [[path(c00), path(c01)], [path(c10), path(c11)]],
            rule,
        })
    }

    /// The enhancement of a vanishing noise.
    pub fn zero(lattice: &Lattice, grid: TimeGrid, rule: DuhamelRule) -> Self {
        let z = FieldPath::zeros(lattice, grid);
        Enhancement {
            ti: z.clone(),
            ty: z.clone(),
            ty_can: z.clone(),
            tl: z.clone(),
            i_ti: z.clone(),
            tp: [z.clone(), z.clone()],
            tc: [[z.clone(), z.clone()], [z.clone(), z]],
            rule,
        }
    }
}

/// Sample mean of `||X||^p` with its jackknife standard error, and the `p`-th root.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub p: f64,
    pub samples: usize,
    pub mean: f64,
    pub se: f64,
    pub root: f64,
    pub root_se: f64,
}

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Moment estimate from already computed norms.
pub fn moment_from_norms(norms: &[f64], p: f64) -> Result<MomentEstimate> {
    let n = norms.len();
    if n < 2 {
        return Err(KsError::InvalidArgument("need at least two samples".into()));
    }
    let pow: Vec<f64> = norms.iter().map(|x| x.powf(p)).collect();
    let total = pairwise_sum(&pow);
    let mean = total / n as f64;
    let nf = n as f64;
    let leave_out: Vec<f64> = pow.iter().map(|x| (total - x) / (nf - 1.0)).collect();
    let jack = |vals: &[f64]| {
        let m = pairwise_sum(vals) / nf;
        let ss: Vec<f64> = vals.iter().map(|v| (v - m) * (v - m)).collect();
        ((nf - 1.0) / nf * pairwise_sum(&ss)).sqrt()
    };
    let roots: Vec<f64> = leave_out.iter().map(|m| m.powf(1.0 / p)).collect();
    Ok(MomentEstimate { p, samples: n, mean, se: jack(&leave_out), root: mean.powf(1.0 / p), root_se: jack(&roots) })
}

/// Evaluates `norm(sampler(seed))` for every seed in parallel and estimates `E ||X||^p`.
pub fn estimate_moment_norm<X, S, N>(sampler: S, norm: N, seeds: &[u64], p: f64) -> Result<MomentEstimate>
where
    S: Fn(u64) -> Result<X> + Sync,
    N: Fn(&X) -> f64 + Sync,
{
    let norms: Vec<f64> = seeds
        .par_iter()
        .map(|&s| sampler(s).map(|x| norm(&x)))
        .collect::<Result<_>>()?;
    moment_from_norms(&norms, p)
}

/// `||f||_{C^{-eps}}`.
pub fn holder_norm(lp: &LittlewoodPaley, f: &SpectralField, eps: f64) -> f64 {
    lp.besov_norm(f, BesovIndex::holder(-eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{stochastic_convolution, BrownianField, TrigTerm};

    fn trig_sigma(l: &Lattice) -> Heterogeneity {
        Heterogeneity::trig(l, 1.0, &[TrigTerm { k: (1, 0), cos_amp: 0.5, sin_amp: 0.0 }]).unwrap()
    }

    /// Brute force over `(w, w1, m)` with the unsymmetrised contraction and the
    /// time integral by nested Gauss-Legendre quadrature.
    fn brute_force_tl(sigma: &SpectralField, moll: &Mollifier, t: f64) -> SpectralField {
        let l = sigma.lattice();
        let (nodes, weights) = crate::quadrature::gauss_legendre(40);
        let time = |lam: f64, mu: f64| {
            let mut s = 0.0;
            for (x3, w3) in nodes.iter().zip(&weights) {
                let u3 = 0.5 * t * (x3 + 1.0);
                let mut inner = 0.0;
                for (x1, w1) in nodes.iter().zip(&weights) {
                    let u1 = 0.5 * u3 * (x1 + 1.0);
                    inner += w1 * 0.5 * u3 * (-(u3 - u1) * mu).exp();
                }
                s += w3 * 0.5 * t * (-(t - u3) * lam).exp() * inner;
            }
            s
        };
        let four_pi2 = TWO_PI * TWO_PI;
        SpectralField::from_fn(l, |k1, k2| {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..l.len() {
                let w1 = l.freq(i);
                let w2 = (k1 - w1.0, k2 - w1.1);
                if w1 == (0, 0) || w2 == (0, 0) || !l.contains(w2.0, w2.1) {
                    continue;
                }
                for m in 0..l.len() {
                    let fm = l.freq(m);
                    let phi = moll.symbol(fm.0, fm.1);
                    if phi == 0.0 {
                        continue;
                    }
                    let s = sigma.get(w1.0 - fm.0, w1.1 - fm.1) * sigma.get(w2.0 + fm.0, w2.1 + fm.1) * phi * phi;
                    if s == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let hh = -four_pi2 * (w1.0 * w2.0 + w1.1 * w2.1) as f64;
                    let hg = -((k1 * w2.0 + k2 * w2.1) as f64) / (w2.0 * w2.0 + w2.1 * w2.1) as f64;
                    let mu = four_pi2 * (w1.0 * w1.0 + w1.1 * w1.1 + w2.0 * w2.0 + w2.1 * w2.1) as f64;
                    let lam = four_pi2 * (k1 * k1 + k2 * k2) as f64;
                    acc += s * hh * hg * time(lam, mu);
                }
            }
            acc
        })
    }

    #[test]
    fn closed_form_counterterm_matches_brute_force() {
        let l = Lattice::new(4).unwrap();
        let sigma = trig_sigma(&l);
        let moll = Mollifier::smooth(0.5).unwrap();
        let t = 0.02;
        let oracle = brute_force_tl(sigma.at_step(0), &moll, t);
        let closed = counterterm_at(&sigma, &moll, t, true).unwrap();
        let plain = counterterm_at(&sigma, &moll, t, false).unwrap();
        let scale = oracle.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(scale > 0.0);
        assert!(closed.max_abs_diff(&oracle) < 1e-10 * scale, "{}", closed.max_abs_diff(&oracle) / scale);
        assert!(plain.max_abs_diff(&closed) < 1e-12 * scale);
        assert!(closed.hermitian_defect() < 1e-12 * scale);
    }

    #[test]
    fn counterterm_path_matches_closed_form() {
        let l = Lattice::new(6).unwrap();
        let sigma = trig_sigma(&l);
        let moll = Mollifier::smooth(0.25).unwrap();
        let grid = TimeGrid::new(0.05, 10).unwrap();
        let path = counterterm_path(&sigma, &moll, grid, CountertermRule::Continuous, DuhamelRule::LeftPoint).unwrap();
        assert_eq!(path.fields[0].l2_norm(), 0.0);
        for k in 1..=10 {
            let c = counterterm_at(&sigma, &moll, grid.time(k), true).unwrap();
            let scale = c.l2_norm();
            assert!(path.fields[k].max_abs_diff(&c) < 1e-12 * scale);
        }
    }

    #[test]
    fn constant_sigma_gives_zero_counterterm() {
        let l = Lattice::new(8).unwrap();
        let sigma = Heterogeneity::constant(&l, 2.0);
        let moll = Mollifier::smooth(0.125).unwrap();
        let grid = TimeGrid::new(0.1, 5).unwrap();
        for rule in [CountertermRule::Continuous, CountertermRule::Discrete] {
            let p = counterterm_path(&sigma, &moll, grid, rule, DuhamelRule::LeftPoint).unwrap();
            assert!(p.fields.iter().all(|f| f.l2_norm() == 0.0));
        }
    }

    #[test]
    fn discrete_counterterm_matches_discrete_expectation() {
        // Expectation of the discrete canonical model by explicit step sums.
        let l = Lattice::new(4).unwrap();
        let sigma = trig_sigma(&l);
        let moll = Mollifier::smooth(0.5).unwrap();
        let grid = TimeGrid::new(0.01, 4).unwrap();
        let dt = grid.dt();
        let s = sigma.at_step(0);
        let four_pi2 = TWO_PI * TWO_PI;
        let tl = counterterm_path(&sigma, &moll, grid, CountertermRule::Discrete, DuhamelRule::LeftPoint).unwrap();
        let oracle = SpectralField::from_fn(&l, |k1, k2| {
            let lam = four_pi2 * (k1 * k1 + k2 * k2) as f64;
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..l.len() {
                let w1 = l.freq(i);
                let w2 = (k1 - w1.0, k2 - w1.1);
                if w1 == (0, 0) || w2 == (0, 0) || !l.contains(w2.0, w2.1) {
                    continue;
                }
                let mu = four_pi2 * (w1.0 * w1.0 + w1.1 * w1.1 + w2.0 * w2.0 + w2.1 * w2.1) as f64;
                let mut sw = C64::new(0.0, 0.0);
                for m in 0..l.len() {
                    let fm = l.freq(m);
                    let phi = moll.symbol(fm.0, fm.1);
                    sw += s.get(w1.0 - fm.0, w1.1 - fm.1) * s.get(w2.0 + fm.0, w2.1 + fm.1) * phi * phi;
                }
                let hh = -four_pi2 * (w1.0 * w2.0 + w1.1 * w2.1) as f64;
                let hg = -((k1 * w2.0 + k2 * w2.1) as f64) / (w2.0 * w2.0 + w2.1 * w2.1) as f64;
                // ty(t_4) = sum_{i<4} e^{-(3-i) lam dt} w0 * E[forcing_i]
                let mut time = 0.0;
                for step in 0..4 {
                    let mut cov = 0.0;
                    for r in 0..step {
                        cov += dt * (-((step - 1 - r) as f64) * mu * dt).exp();
                    }
                    time += (-((3 - step) as f64) * lam * dt).exp() * dt * exp_integral_1(lam * dt) * cov;
                }
                acc += sw * hh * hg * time;
            }
            acc
        });
        let scale = oracle.l2_norm();
        assert!(scale > 0.0);
        assert!(tl.last().max_abs_diff(&oracle) < 1e-12 * scale);
    }

    #[test]
    fn canonical_ty_of_zero_is_zero_and_mean_free() {
        let l = Lattice::new(4).unwrap();
        let grid = TimeGrid::new(0.01, 3).unwrap();
        let zero = FieldPath::zeros(&l, grid);
        assert!(canonical_ty(&zero, DuhamelRule::LeftPoint).unwrap().fields.iter().all(|f| f.l2_norm() == 0.0));
        let w = BrownianField::sample(&l, grid, 3, None);
        let ti = stochastic_convolution(&w, &trig_sigma(&l), &Mollifier::smooth(0.25).unwrap()).unwrap();
        let ty = canonical_ty(&ti, DuhamelRule::LeftPoint).unwrap();
        assert!(ty.fields.iter().all(|f| f.mean().abs() < 1e-15));
    }

    #[test]
    fn canonical_ty_single_mode_closed_form() {
        // ti = cos(2 pi x1) + sin(2 pi x2) held constant in time: the forcing is
        // computed by hand from the two-mode convolution.
        let l = Lattice::new(4).unwrap();
        let grid = TimeGrid::new(0.02, 4).unwrap();
        let mut f = SpectralField::zeros(&l);
        f.set(1, 0, C64::new(0.5, 0.0));
        f.set(-1, 0, C64::new(0.5, 0.0));
        f.set(0, 1, C64::new(0.0, -0.5));
        f.set(0, -1, C64::new(0.0, 0.5));
        let ti = FieldPath { grid, fields: vec![f.clone(); 5] };
        let ty = canonical_ty(&ti, DuhamelRule::LeftPoint).unwrap();
        // grad Phi_f = (-sin(2 pi x1), cos(2 pi x2)) / (2 pi); f grad Phi_f has
        // first component -(cos x1 sin x1 + sin x2 sin x1)/(2 pi) and second (cos x1 cos x2 + sin x2 cos x2)/(2 pi)
        // with x = 2 pi x. Its divergence is -cos(2x1) + cos(2 x2) - cos(x1) sin(x2) - sin(x1) sin(x2) ... computed spectrally:
        let values = {
            let side = l.side();
            let mut v = vec![0.0; side * side];
            for a in 0..side {
                for b in 0..side {
                    let x1 = TWO_PI * a as f64 / side as f64;
                    let x2 = TWO_PI * b as f64 / side as f64;
                    // div(f grad Phi_f) = grad f . grad Phi_f + f Delta Phi_f = grad f . grad Phi_f - f^2
                    let f = x1.cos() + x2.sin();
                    let df = (-TWO_PI * x1.sin(), TWO_PI * x2.cos());
                    let dphi = (-x1.sin() / TWO_PI, x2.cos() / TWO_PI);
                    v[a * side + b] = df.0 * dphi.0 + df.1 * dphi.1 - f * f + 0.0;
                }
            }
            v
        };
        let mut forcing = SpectralField::from_values(&l, &values).unwrap();
        forcing.coeffs_mut()[l.zero_index()] = C64::new(0.0, 0.0);
        let t = grid.t_end;
        let expect = forcing.map_coeffs(|i, c| c * t * exp_integral_1(t * l.lambda(i)));
        assert!(ty.last().max_abs_diff(&expect) < 1e-13);
    }

    #[test]
    fn tp_canonical_minus_renormalised_is_contraction_pair() {
        let l = Lattice::new(6).unwrap();
        let lp = LittlewoodPaley::new(&l);
        let grid = TimeGrid::new(0.02, 4).unwrap();
        let sigma = trig_sigma(&l);
        let moll = Mollifier::smooth(0.25).unwrap();
        let w = BrownianField::sample(&l, grid, 11, None);
        let ti = stochastic_convolution(&w, &sigma, &moll).unwrap();
        let tl = counterterm_path(&sigma, &moll, grid, CountertermRule::Continuous, DuhamelRule::LeftPoint).unwrap();
        let e = Enhancement::build(&lp, ti, tl, DuhamelRule::LeftPoint).unwrap();
        for i in 0..=4 {
            assert!((&e.ty.fields[i] + &e.tl.fields[i]).max_abs_diff(&e.ty_can.fields[i]) < 1e-12);
            let can = diagram_tp(&lp, &e.ty_can.fields[i], &e.ti.fields[i]);
            let tl = &e.tl.fields[i];
            let ti = &e.ti.fields[i];
            let gti = ti.grad_poisson();
            let gtl = tl.grad_poisson();
            for j in 0..2 {
                let pair = &lp.resonant(tl, &gti[j]) + &lp.resonant(&gtl[j], ti);
                assert!((&can[j] - &e.tp[j].fields[i]).max_abs_diff(&pair) < 1e-12);
            }
        }
    }

    #[test]
    fn tc_matches_frequency_side_sums() {
        let l = Lattice::new(4).unwrap();
        let lp = LittlewoodPaley::new(&l);
        let mut ti = SpectralField::zeros(&l);
        ti.set(1, 2, C64::new(0.3, 0.1));
        ti.set(-1, -2, C64::new(0.3, -0.1));
        ti.set(3, -1, C64::new(-0.2, 0.4));
        ti.set(-3, 1, C64::new(-0.2, -0.4));
        let i_ti = ti.heat(0.01).unwrap().scale(0.7);
        let tc = diagram_tc(&lp, &i_ti, &ti);
        let g = ti.grad_poisson();
        let phi_i = i_ti.poisson();
        for k in 0..2 {
            for j in 0..2 {
                let a = lp.sim_restricted_convolution(&i_ti.partial(k), &g[j]);
                let b = lp.sim_restricted_convolution(&phi_i.partial(k).partial(j), &ti);
                assert!(tc.first[k][j].max_abs_diff(&a) < 1e-13);
                assert!(tc.second[k][j].max_abs_diff(&b) < 1e-13);
            }
        }
        let neg = diagram_tc(&lp, &i_ti.scale(-1.0), &ti);
        for k in 0..2 {
            for j in 0..2 {
                assert!((&neg.sum()[k][j] + &tc.sum()[k][j]).l2_norm() < 1e-14);
            }
        }
    }

    #[test]
    fn moment_estimates() {
        let c = moment_from_norms(&[2.0; 5], 2.0).unwrap();
        assert_eq!(c.mean, 4.0);
        assert_eq!(c.se, 0.0);
        assert_eq!(c.root, 2.0);
        let v = [1.0, 2.0, 3.0, 7.0];
        let m1 = moment_from_norms(&v, 1.0).unwrap();
        let m2 = moment_from_norms(&v, 2.0).unwrap();
        assert!(m1.root <= m2.root);
        // jackknife SE of a mean is the usual s / sqrt(n)
        let mean = 13.0 / 4.0;
        let s2 = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0;
        assert!((m1.se - (s2 / 4.0).sqrt()).abs() < 1e-14);
        assert!(moment_from_norms(&[1.0], 1.0).is_err());
    }
}
