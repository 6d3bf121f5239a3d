//! Deterministic Keller-Segel solver, the direct mild solver for the regularized
//! renormalized equation and the paracontrolled fixed-point iteration.
//!
//! All three routes share one exponential integrator for `I`, so on a fixed grid
//! they discretize the same equations and agree up to round-off.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::enhancement::{counterterm_path, holder_norm, CountertermRule, Enhancement};
use crate::error::{KsError, Result};
use crate::littlewood_paley::{BesovIndex, LittlewoodPaley};
use crate::noise::{stochastic_convolution, BrownianField, Heterogeneity, Mollifier};
use crate::spectral::{
    div, duhamel, DuhamelRule, DuhamelWeights, FieldPath, Lattice, SpectralField, TimeGrid, VectorField,
};

/// Tolerances and limits shared by the solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub rule: DuhamelRule,
    /// Per-step Picard tolerance on the L2 norm of the update.
    pub picard_tol: f64,
    pub picard_max: usize,
    /// Composite `C^{-eps}` residual at which the paracontrolled iteration stops.
    pub fixed_point_tol: f64,
    pub fixed_point_max: usize,
    /// Regularity loss used by the residual norms.
    pub eps: f64,
    /// Runs abort once `||rho(t)||_{L^inf}` exceeds this.
    pub blow_up: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rule: DuhamelRule::LeftPoint,
            picard_tol: 1e-10,
            picard_max: 50,
            fixed_point_tol: 1e-8,
            fixed_point_max: 100,
            eps: 0.05,
            blow_up: 1e6,
        }
    }
}

/// Output of a solve. The decomposition fields are only set by the paracontrolled route.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub rho: FieldPath,
    pub w: Option<FieldPath>,
    pub w_sharp: Option<FieldPath>,
    pub w_prime: Option<[FieldPath; 2]>,
    /// Picard residual of each time step (direct) or of each iteration (paracontrolled).
    pub residuals: Vec<f64>,
    pub converged: bool,
}

fn check_blow_up(rho: &SpectralField, t: f64, limit: f64) -> Result<()> {
    let norm = rho.sup_norm();
    if !(norm <= limit) {
        return Err(KsError::BlowUp { t, norm });
    }
    Ok(())
}

fn check_path(name: &str, path: &FieldPath, lattice: &Lattice, grid: TimeGrid) -> Result<()> {
    if path.grid != grid {
        return Err(KsError::InvalidArgument(format!("{name} lives on a different time grid")));
    }
    let l = path.fields[0].lattice();
    if l != lattice {
        return Err(KsError::LatticeMismatch { left: lattice.n(), right: l.n() });
    }
    Ok(())
}

/// `div(f grad Phi_f)`.
fn transport(f: &SpectralField) -> Result<SpectralField> {
    let g = f.grad_poisson();
    Ok(div(&[f.product(&g[0])?, f.product(&g[1])?]))
}

/// `P_{t_i} rho0` on the grid.
fn heat_path(rho0: &SpectralField, grid: TimeGrid) -> Result<FieldPath> {
    let fields = (0..=grid.steps).map(|i| rho0.heat(grid.time(i))).collect::<Result<_>>()?;
    Ok(FieldPath { grid, fields })
}

/// Exponential Euler for the deterministic equation
/// `rho_{i+1} = P_dt rho_i + dt phi1(lambda dt) div(rho_i grad Phi_{rho_i})`.
pub fn deterministic_ks(rho0: &SpectralField, grid: TimeGrid) -> Result<FieldPath> {
    deterministic_ks_with(rho0, grid, SolverOptions::default().blow_up)
}

pub fn deterministic_ks_with(rho0: &SpectralField, grid: TimeGrid, blow_up: f64) -> Result<FieldPath> {
    rho0.require_hermitian(1e-12)?;
    let weights = DuhamelWeights::new(rho0.lattice(), grid.dt(), DuhamelRule::LeftPoint);
    let mut fields = Vec::with_capacity(grid.steps + 1);
    check_blow_up(rho0, 0.0, blow_up)?;
    fields.push(rho0.clone());
    for i in 0..grid.steps {
        let next = weights.step(&fields[i], &transport(&fields[i])?, None);
        check_blow_up(&next, grid.time(i + 1), blow_up)?;
        fields.push(next);
    }
    Ok(FieldPath { grid, fields })
}

/// Direct solve of `rho = P rho0 + div I[rho grad Phi_rho] - tl + ti`.
///
/// Writing `rho = V + ti - tl`, each step reads
/// `V_{i+1} = e^{-lambda dt} V_i + w0 F(rho_i) + w1 F(rho_{i+1})` with
/// `F(f) = div(f grad Phi_f)`. The implicit trapezoid part is solved by Picard
/// iteration, damped by one half whenever the update grows.
pub fn solve_rho_delta(rho0: &SpectralField, ti: &FieldPath, tl: &FieldPath, opts: &SolverOptions) -> Result<SolverState> {
    rho0.require_hermitian(1e-12)?;
    let lattice = rho0.lattice().clone();
    let grid = ti.grid;
    check_path("ti", ti, &lattice, grid)?;
    check_path("tl", tl, &lattice, grid)?;
    let weights = DuhamelWeights::new(&lattice, grid.dt(), opts.rule);
    let noise = |i: usize| &ti.fields[i] - &tl.fields[i];
    let mut v = &(rho0 - &ti.fields[0]) + &tl.fields[0];
    let mut rho = vec![rho0.clone()];
    let mut residuals = Vec::with_capacity(grid.steps);
    let zero = SpectralField::zeros(&lattice);
    check_blow_up(rho0, 0.0, opts.blow_up)?;
    for i in 0..grid.steps {
        let base = weights.step(&v, &transport(&rho[i])?, Some(&zero));
        let shift = noise(i + 1);
        let next_v = match opts.rule {
            DuhamelRule::LeftPoint => {
                residuals.push(0.0);
                base
            }
            DuhamelRule::Trapezoid => {
                let (x, r) = picard_step(&base, &shift, &weights, opts)
                    .map_err(|r| KsError::PicardDidNotConverge { step: i, residual: r })?;
                residuals.push(r);
                x
            }
        };
        let next_rho = &next_v + &shift;
        check_blow_up(&next_rho, grid.time(i + 1), opts.blow_up)?;
        v = next_v;
        rho.push(next_rho);
    }
    Ok(SolverState {
        rho: FieldPath { grid, fields: rho },
        w: None,
        w_sharp: None,
        w_prime: None,
        residuals,
        converged: true,
    })
}

/// Solves `X = base + w1 F(X + shift)`; returns the last update norm on failure.
fn picard_step(
    base: &SpectralField,
    shift: &SpectralField,
    weights: &DuhamelWeights,
    opts: &SolverOptions,
) -> std::result::Result<(SpectralField, f64), f64> {
    let map = |x: &SpectralField| -> std::result::Result<SpectralField, f64> {
        let f = transport(&(x + shift)).map_err(|_| f64::NAN)?;
        let mut out = base.clone();
        weights.add_implicit(&mut out, &f);
        Ok(out)
    };
    let mut x = base.clone();
    let mut last = f64::INFINITY;
    for _ in 0..opts.picard_max {
        let gx = map(&x)?;
        let update = &gx - &x;
        let r = update.l2_norm();
        if !r.is_finite() {
            return Err(r);
        }
        if r > last {
            x.axpy(0.5, &update);
        } else {
            x = gx;
        }
        if r <= opts.picard_tol {
            return Ok((x, r));
        }
        last = r;
    }
    Err(last)
}

/// One element `(w, w', w#)` of the paracontrolled iteration, with the Ansatz part
/// `a = div I[w' < ti]` kept so that `w = a + w#`.
#[derive(Clone, Debug)]
pub struct Iterate {
    pub w: Vec<SpectralField>,
    pub w_prime: Vec<VectorField>,
    pub w_sharp: Vec<SpectralField>,
    pub ansatz: Vec<SpectralField>,
}

/// Enhancement-derived fields needed by `Omega#` at one time.
struct Frame {
    ti: SpectralField,
    ty: SpectralField,
    grad_phi_ti: VectorField,
    /// `d_j I[ti]`.
    grad_i_ti: VectorField,
    /// `d_j d_k I[Phi_ti]`.
    hess_i_phi: [[SpectralField; 2]; 2],
    tp: VectorField,
    /// `tc^{jk}`, first index on `I[ti]`.
    tc: [[SpectralField; 2]; 2],
}

/// The map `Psi(u) = (w, w', w#)` with
/// `w' = grad Phi_u + grad Phi_ty`, `w# = P rho0 + div I[Omega#(u)]`,
/// `w = div I[w' < ti] + w#`.
pub struct ParacontrolledMap<'a> {
    lp: &'a LittlewoodPaley,
    enhancement: &'a Enhancement,
    heat: FieldPath,
    frames: Vec<Frame>,
    eps: f64,
}

impl<'a> ParacontrolledMap<'a> {
    pub fn new(lp: &'a LittlewoodPaley, rho0: &SpectralField, enhancement: &'a Enhancement, eps: f64) -> Result<Self> {
        rho0.require_hermitian(1e-12)?;
        let lattice = rho0.lattice();
        if lp.lattice() != lattice {
            return Err(KsError::LatticeMismatch { left: lattice.n(), right: lp.lattice().n() });
        }
        let grid = enhancement.ti.grid;
        for (name, path) in [
            ("ti", &enhancement.ti),
            ("ty", &enhancement.ty),
            ("I[ti]", &enhancement.i_ti),
            ("tp", &enhancement.tp[0]),
            ("tc", &enhancement.tc[0][0]),
        ] {
            check_path(name, path, lattice, grid)?;
        }
        let frames = (0..=grid.steps)
            .map(|i| {
                let e = enhancement;
                let i_ti = &e.i_ti.fields[i];
                let phi_i = i_ti.poisson();
                let h = |j: usize, k: usize| phi_i.partial(j).partial(k);
                let h01 = h(0, 1);
                Frame {
                    ti: e.ti.fields[i].clone(),
                    ty: e.ty.fields[i].clone(),
                    grad_phi_ti: e.ti.fields[i].grad_poisson(),
                    grad_i_ti: i_ti.grad(),
                    hess_i_phi: [[h(0, 0), h01.clone()], [h01, h(1, 1)]],
                    tp: [e.tp[0].fields[i].clone(), e.tp[1].fields[i].clone()],
                    tc: [
                        [e.tc[0][0].fields[i].clone(), e.tc[0][1].fields[i].clone()],
                        [e.tc[1][0].fields[i].clone(), e.tc[1][1].fields[i].clone()],
                    ],
                }
            })
            .collect();
        Ok(ParacontrolledMap { lp, enhancement, heat: heat_path(rho0, grid)?, frames, eps })
    }

    pub fn grid(&self) -> TimeGrid {
        self.heat.grid
    }

    fn duhamel(&self, fields: Vec<SpectralField>) -> Vec<SpectralField> {
        duhamel(&FieldPath { grid: self.grid(), fields }, self.enhancement.rule).fields
    }

    /// `div(w' < ti)` at every time.
    fn ansatz_forcing(&self, w_prime: &[VectorField]) -> Vec<SpectralField> {
        w_prime
            .par_iter()
            .zip(&self.frames)
            .map(|(wp, fr)| {
                let b_ti = self.lp.blocks(&fr.ti);
                let p = |j: usize| self.lp.paraproduct_blocks(&self.lp.blocks(&wp[j]), &b_ti);
                div(&[p(0), p(1)])
            })
            .collect()
    }

    /// The seed `w' = grad Phi_{P rho0}`, `w# = P rho0`, `w = div I[w' < ti] + w#`.
    pub fn seed(&self) -> Iterate {
        let w_sharp = self.heat.fields.clone();
        let w_prime: Vec<VectorField> = w_sharp.iter().map(SpectralField::grad_poisson).collect();
        let ansatz = self.duhamel(self.ansatz_forcing(&w_prime));
        let w = ansatz.iter().zip(&w_sharp).map(|(a, s)| a + s).collect();
        Iterate { w, w_prime, w_sharp, ansatz }
    }

    /// `Omega#(u)` at the time of `fr`.
    fn omega_sharp(&self, fr: &Frame, u: &SpectralField, up: &VectorField, us: &SpectralField, ua: &SpectralField) -> Result<VectorField> {
        let lp = self.lp;
        let v = u + &fr.ty;
        let grad_v = v.grad_poisson();
        let b_v = lp.blocks(&v);
        let b_ti = lp.blocks(&fr.ti);
        let b_up = [lp.blocks(&up[0]), lp.blocks(&up[1])];
        // Remainders of the Ansatz: u - u' < grad I[ti] and grad Phi_u - u' < grad^2 I[Phi_ti].
        let r1 = &(us + ua)
            - &(0..2).fold(SpectralField::zeros(lp.lattice()), |acc, j| {
                &acc + &lp.paraproduct_blocks(&b_up[j], &lp.blocks(&fr.grad_i_ti[j]))
            });
        let grad_u = (us + ua).grad_poisson();
        let b_r1 = lp.blocks(&r1);
        let component = |k: usize| -> Result<SpectralField> {
            let g_ti = &fr.grad_phi_ti[k];
            let b_g_ti = lp.blocks(g_ti);
            let mut out = v.product(&grad_v[k])?;
            out += &fr.tp[k];
            out += &lp.paraproduct_blocks(&b_g_ti, &b_v);
            out += &lp.paraproduct_blocks(&b_v, &b_g_ti);
            out += &lp.paraproduct_blocks(&b_ti, &lp.blocks(&grad_v[k]));
            let mut r2 = grad_u[k].clone();
            for j in 0..2 {
                out += &lp.commutator(&up[j], &fr.grad_i_ti[j], g_ti)?;
                out += &lp.commutator(&up[j], &fr.hess_i_phi[j][k], &fr.ti)?;
                out += &up[j].product(&fr.tc[j][k])?;
                r2 -= &lp.paraproduct_blocks(&b_up[j], &lp.blocks(&fr.hess_i_phi[j][k]));
            }
            out += &lp.resonant_blocks(&b_r1, &b_g_ti);
            out += &lp.resonant_blocks(&lp.blocks(&r2), &b_ti);
            Ok(out)
        };
        Ok([component(0)?, component(1)?])
    }

    pub fn apply(&self, u: &Iterate) -> Result<Iterate> {
        let n = self.frames.len();
        let parts: Vec<(VectorField, SpectralField)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let fr = &self.frames[i];
                let w_prime = (&u.w[i] + &fr.ty).grad_poisson();
                let omega = self.omega_sharp(fr, &u.w[i], &u.w_prime[i], &u.w_sharp[i], &u.ansatz[i])?;
                Ok((w_prime, div(&omega)))
            })
            .collect::<Result<_>>()?;
        let (w_prime, omega): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let w_sharp: Vec<SpectralField> =
            self.duhamel(omega).iter().zip(&self.heat.fields).map(|(a, h)| a + h).collect();
        let ansatz = self.duhamel(self.ansatz_forcing(&w_prime));
        let w = ansatz.iter().zip(&w_sharp).map(|(a, s)| a + s).collect();
        Ok(Iterate { w, w_prime, w_sharp, ansatz })
    }

    /// Largest `C^{-eps}` distance between corresponding fields, over all times.
    pub fn residual(&self, a: &Iterate, b: &Iterate) -> f64 {
        let d = |x: &SpectralField, y: &SpectralField| holder_norm(self.lp, &(x - y), self.eps);
        (0..self.frames.len())
            .into_par_iter()
            .map(|i| {
                d(&a.w[i], &b.w[i])
                    .max(d(&a.w_sharp[i], &b.w_sharp[i]))
                    .max(d(&a.w_prime[i][0], &b.w_prime[i][0]))
                    .max(d(&a.w_prime[i][1], &b.w_prime[i][1]))
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// Iterates `Psi` from the seed until the composite residual drops below the
/// tolerance, then assembles `rho = ti + ty + w`.
pub fn solve_paracontrolled(
    lp: &LittlewoodPaley,
    rho0: &SpectralField,
    enhancement: &Enhancement,
    opts: &SolverOptions,
) -> Result<SolverState> {
    let map = ParacontrolledMap::new(lp, rho0, enhancement, opts.eps)?;
    let grid = map.grid();
    let mut cur = map.seed();
    let mut residuals = Vec::new();
    let mut rises = 0;
    let mut converged = false;
    for iteration in 1..=opts.fixed_point_max {
        let next = map.apply(&cur)?;
        let r = map.residual(&next, &cur);
        cur = next;
        if !r.is_finite() {
            residuals.push(r);
            return Err(KsError::NonContraction { iteration, residual: r, history: residuals });
        }
        if residuals.last().is_some_and(|&prev| r > prev) {
            rises += 1;
        } else {
            rises = 0;
        }
        residuals.push(r);
        if r < opts.fixed_point_tol {
            converged = true;
            break;
        }
        if rises >= 3 {
            return Err(KsError::NonContraction { iteration, residual: r, history: residuals });
        }
    }
    let rho: Vec<SpectralField> = (0..=grid.steps)
        .map(|i| &(&enhancement.ti.fields[i] + &enhancement.ty.fields[i]) + &cur.w[i])
        .collect();
    for (i, r) in rho.iter().enumerate() {
        check_blow_up(r, grid.time(i), opts.blow_up)?;
    }
    let Iterate { w, w_prime, w_sharp, .. } = cur;
    let (wp0, wp1): (Vec<_>, Vec<_>) = w_prime.into_iter().map(|[a, b]| (a, b)).unzip();
    let path = |fields| FieldPath { grid, fields };
    Ok(SolverState {
        rho: path(rho),
        w: Some(path(w)),
        w_sharp: Some(path(w_sharp)),
        w_prime: Some([path(wp0), path(wp1)]),
        residuals,
        converged,
    })
}

/// `sup_i (1 ^ t_i)^eta ||f(t_i)||_{C^alpha}`.
pub fn weighted_sup_norm(lp: &LittlewoodPaley, path: &FieldPath, alpha: f64, eta: f64) -> f64 {
    path.fields
        .iter()
        .enumerate()
        .map(|(i, f)| path.grid.time(i).min(1.0).powf(eta) * lp.besov_norm(f, BesovIndex::holder(alpha)))
        .fold(0.0, f64::max)
}

/// `sup_{s < t} (1 ^ s)^eta ||f(t) - f(s)||_{C^alpha} / |t - s|^kappa` over grid pairs.
pub fn weighted_holder_in_time(lp: &LittlewoodPaley, path: &FieldPath, alpha: f64, kappa: f64, eta: f64) -> f64 {
    let n = path.fields.len();
    (0..n)
        .into_par_iter()
        .map(|a| {
            let s = path.grid.time(a);
            (a + 1..n)
                .map(|b| {
                    let t = path.grid.time(b);
                    let d = lp.besov_norm(&(&path.fields[b] - &path.fields[a]), BesovIndex::holder(alpha));
                    s.min(1.0).powf(eta) * d / (t - s).powf(kappa)
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Inputs of the Cauchy-in-delta experiment.
#[derive(Clone, Debug)]
pub struct CauchyConfig {
    pub rho0: SpectralField,
    pub sigma: Heterogeneity,
    /// Each entry `delta` compares `rho^{2 delta}` with `rho^delta`.
    pub deltas: Vec<f64>,
    pub grid: TimeGrid,
    pub samples: usize,
    pub seed: u64,
    /// The differences are measured in `C^{-1-eps}`.
    pub eps: f64,
    pub options: SolverOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CauchyReport {
    pub deltas: Vec<f64>,
    /// `differences[d][s]` for delta index `d` and sample `s`.
    pub differences: Vec<Vec<f64>>,
    pub medians: Vec<f64>,
}

/// Seed of sample `s` in a study keyed by `seed`.
pub fn sample_seed(seed: u64, s: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(s as u64)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `rho^delta(T)` for each `delta`, all driven by the same Brownian sample `w`.
pub fn coupled_solutions(
    rho0: &SpectralField,
    sigma: &Heterogeneity,
    w: &BrownianField,
    counterterms: &[(Mollifier, FieldPath)],
    opts: &SolverOptions,
) -> Result<Vec<SpectralField>> {
    counterterms
        .iter()
        .map(|(moll, tl)| {
            let ti = stochastic_convolution(w, sigma, moll)?;
            Ok(solve_rho_delta(rho0, &ti, tl, opts)?.rho.last().clone())
        })
        .collect()
}

/// Coupled-noise differences `||rho^{2 delta}(T) - rho^delta(T)||_{C^{-1-eps}}` and their medians.
pub fn cauchy_in_delta(cfg: &CauchyConfig) -> Result<CauchyReport> {
    if cfg.samples == 0 {
        return Err(KsError::InvalidArgument("need at least one sample".into()));
    }
    let lattice = cfg.rho0.lattice().clone();
    let lp = LittlewoodPaley::new(&lattice);
    let mut scales: Vec<f64> = cfg.deltas.iter().flat_map(|&d| [2.0 * d, d]).collect();
    scales.sort_by(f64::total_cmp);
    scales.dedup();
    let counterterms: Vec<(Mollifier, FieldPath)> = scales
        .iter()
        .map(|&d| {
            let moll = Mollifier::smooth(d)?;
            let tl = counterterm_path(&cfg.sigma, &moll, cfg.grid, CountertermRule::Discrete, cfg.options.rule)?;
            Ok((moll, tl))
        })
        .collect::<Result<_>>()?;
    let position = |d: f64| scales.iter().position(|&s| s == d).expect("every scale was registered");
    let per_sample: Vec<Vec<f64>> = (0..cfg.samples)
        .into_par_iter()
        .map(|s| {
            let w = BrownianField::sample(&lattice, cfg.grid, sample_seed(cfg.seed, s), None);
            let rho = coupled_solutions(&cfg.rho0, &cfg.sigma, &w, &counterterms, &cfg.options)?;
            Ok(cfg
                .deltas
                .iter()
                .map(|&d| {
                    let diff = &rho[position(2.0 * d)] - &rho[position(d)];
                    lp.besov_norm(&diff, BesovIndex::holder(-1.0 - cfg.eps))
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let differences: Vec<Vec<f64>> =
        (0..cfg.deltas.len()).map(|d| per_sample.iter().map(|row| row[d]).collect()).collect();
    let medians = differences.iter().map(|v| median(v)).collect();
    Ok(CauchyReport { deltas: cfg.deltas.clone(), differences, medians })
}
