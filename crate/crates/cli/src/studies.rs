//! Experiments. Each study writes its CSV (and SVG where useful) plus a JSON manifest
//! into the output directory and returns an [`Outcome`] with its pass/fail verdict.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use ks_para_core::enhancement::{counterterm_at, counterterm_path, diagram_tc, holder_norm, CountertermRule, Enhancement};
use ks_para_core::estimates::{inverse_square_sum, verify_bound, Lemma};
use ks_para_core::littlewood_paley::LittlewoodPaley;
use ks_para_core::noise::{
    ou_variance, sample_ti_exact, stochastic_convolution, BrownianField, Heterogeneity, Mollifier,
};
use ks_para_core::shape::{shape_d, shape_d_tolerance, Freq, ShapeKind, ShapeQuery};
use ks_para_core::solver::{
    cauchy_in_delta, deterministic_ks, median, sample_seed, solve_paracontrolled, solve_rho_delta, CauchyConfig,
    SolverOptions, SolverState,
};
use ks_para_core::spectral::{div, duhamel, DuhamelRule};
use ks_para_core::{FieldPath, Lattice, SpectralField, TimeGrid};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::SigmaSpec;
use crate::fit::{fit_line, LineFit};
use crate::io::{num, CsvOut, ManifestBuilder};
use crate::line::{product_rule_sides, Line};
use crate::svg::{line_plot, Series};

/// Verdict and artifacts of one study.
#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub study: String,
    pub pass: bool,
    pub detail: String,
    pub artifacts: Vec<PathBuf>,
    pub seconds: f64,
}

/// Every study that `run-all` knows about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Study {
    ConstantCounterterm,
    Counterterm,
    TcCancellation,
    OuCheck,
    Estimates,
    Shapes,
    Solver,
    Cauchy,
    Identities,
    ProductRule,
}

impl Study {
    pub const ALL: [Study; 10] = [
        Study::ConstantCounterterm,
        Study::Counterterm,
        Study::TcCancellation,
        Study::OuCheck,
        Study::Estimates,
        Study::Shapes,
        Study::Solver,
        Study::Cauchy,
        Study::Identities,
        Study::ProductRule,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Study::ConstantCounterterm => "constant-counterterm",
            Study::Counterterm => "counterterm",
            Study::TcCancellation => "tc-cancellation",
            Study::OuCheck => "ou-check",
            Study::Estimates => "estimates",
            Study::Shapes => "shapes",
            Study::Solver => "solver",
            Study::Cauchy => "cauchy",
            Study::Identities => "identities",
            Study::ProductRule => "product-rule",
        }
    }

    /// Acceptance criterion checked by the study, if any.
    pub fn criterion(&self) -> Option<u8> {
        match self {
            Study::ConstantCounterterm => Some(1),
            Study::Counterterm => Some(2),
            Study::TcCancellation => Some(3),
            Study::OuCheck => Some(4),
            Study::Estimates => Some(5),
            Study::Shapes => Some(6),
            Study::Solver => Some(7),
            Study::Cauchy => Some(8),
            Study::Identities => Some(9),
            Study::ProductRule => None,
        }
    }

    pub fn for_criterion(c: u8) -> Option<Study> {
        Study::ALL.into_iter().find(|s| s.criterion() == Some(c))
    }

    /// Runs the study with its default parameters and the given seed.
    pub fn run(&self, out: &Path, seed: u64) -> anyhow::Result<Outcome> {
        match self {
            Study::ConstantCounterterm => constant_counterterm(&ConstantCountertermParams::default(), out),
            Study::Counterterm => counterterm_study(&CountertermParams::default(), out),
            Study::TcCancellation => tc_cancellation(&TcParams { seed, ..Default::default() }, out),
            Study::OuCheck => ou_check(&OuParams { seed, ..Default::default() }, out),
            Study::Estimates => estimates_study(&EstimatesParams::default(), out),
            Study::Shapes => shape_study(&ShapeParams { seed, ..Default::default() }, out),
            Study::Solver => solver_study(&SolverParams { seed, ..Default::default() }, out),
            Study::Cauchy => cauchy_study(&CauchyParams { seed, ..Default::default() }, out),
            Study::Identities => identities_study(&IdentityParams { seed, ..Default::default() }, out),
            Study::ProductRule => product_rule_study(&ProductRuleParams { seed, ..Default::default() }, out),
        }
    }
}

impl std::str::FromStr for Study {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        Study::ALL.into_iter().find(|st| st.id() == s).with_context(|| {
            let known: Vec<&str> = Study::ALL.iter().map(|s| s.id()).collect();
            format!("unknown study {s:?}; known: {}", known.join(", "))
        })
    }
}

fn finish(
    study: &str,
    manifest: ManifestBuilder,
    out: &Path,
    results: impl Serialize,
    artifacts: Vec<PathBuf>,
    pass: bool,
    detail: String,
) -> anyhow::Result<Outcome> {
    let m = manifest.finish(out, &results, artifacts.clone())?;
    Ok(Outcome { study: study.into(), pass, detail, artifacts, seconds: m.wall_time_seconds })
}

/// `1 + cos(2 pi x1) / 2`.
pub fn cosine_density(lattice: &Lattice) -> SpectralField {
    let mut f = SpectralField::constant(lattice, 1.0);
    f.set(1, 0, C64::new(0.25, 0.0));
    f.set(-1, 0, C64::new(0.25, 0.0));
    f
}

/// A real field with independent uniform modes of size `(1 + |k|)^{-1}`.
pub fn random_field(lattice: &Lattice, seed: u64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = SpectralField::from_fn(lattice, |a, b| {
        let s = 1.0 + ((a * a + b * b) as f64).sqrt();
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) / s
    });
    f.symmetrize();
    f
}

fn lattice_for_delta(delta: f64) -> anyhow::Result<Lattice> {
    Ok(Lattice::new((2.0 / delta).round() as usize)?)
}

/// Largest coefficient modulus over a path.
fn path_max(path: &FieldPath) -> f64 {
    path.fields.iter().flat_map(|f| f.coeffs().iter().map(|c| c.norm())).fold(0.0, f64::max)
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstantCountertermParams {
    pub c: f64,
    pub deltas: Vec<f64>,
    pub t_end: f64,
    pub steps: usize,
    pub eps: f64,
    pub tolerance: f64,
}

impl Default for ConstantCountertermParams {
    fn default() -> Self {
        ConstantCountertermParams {
            c: 1.7,
            deltas: vec![0.125, 0.0625, 0.03125, 0.015625],
            t_end: 0.5,
            steps: 10,
            eps: 0.05,
            tolerance: 1e-10,
        }
    }
}

/// For constant `sigma` the counterterm vanishes on every grid time, `N = 2/delta`.
pub fn constant_counterterm(p: &ConstantCountertermParams, out: &Path) -> anyhow::Result<Outcome> {
    let manifest = ManifestBuilder::start("constant-counterterm", p)?;
    let grid = TimeGrid::new(p.t_end, p.steps)?;
    let path = out.join("constant_counterterm.csv");
    let mut csv = CsvOut::create(&path, &["delta", "n", "max_coefficient", "max_holder_norm"])?;
    let mut worst = 0.0f64;
    for &delta in &p.deltas {
        let lattice = lattice_for_delta(delta)?;
        let lp = LittlewoodPaley::new(&lattice);
        let sigma = Heterogeneity::constant(&lattice, p.c);
        let tl = counterterm_path(&sigma, &Mollifier::smooth(delta)?, grid, CountertermRule::Continuous, DuhamelRule::LeftPoint)?;
        let coeff = path_max(&tl);
        let holder = tl.fields.iter().map(|f| holder_norm(&lp, f, p.eps)).fold(0.0, f64::max);
        worst = worst.max(coeff).max(holder);
        csv.row(&[num(delta), lattice.n().to_string(), num(coeff), num(holder)])?;
    }
    let artifacts = vec![csv.finish()?];
    let pass = worst <= p.tolerance;
    let detail = format!("max norm over delta and t: {worst:.3e} (tolerance {:.0e})", p.tolerance);
    finish("constant-counterterm", manifest, out, serde_json::json!({ "worst": worst }), artifacts, pass, detail)
}

#[derive(Clone, Debug, Serialize)]
pub struct CountertermParams {
    pub sigma: SigmaSpec,
    pub deltas: Vec<f64>,
    pub t_end: f64,
    /// Time steps, used only for time-dependent `sigma`.
    pub steps: usize,
    pub eps: f64,
    pub min_r_squared: f64,
}

impl Default for CountertermParams {
    fn default() -> Self {
        CountertermParams {
            sigma: SigmaSpec::standard_trig(),
            deltas: (3..=7).map(|k| 2f64.powi(-k)).collect(),
            t_end: 0.5,
            steps: 50,
            eps: 0.05,
            min_r_squared: 0.95,
        }
    }
}

/// Largest delta for which the counterterm bound is stated.
pub const MAX_COUNTERTERM_DELTA: f64 = 1.0 - std::f64::consts::SQRT_2 / 2.0;

#[derive(Clone, Debug, Serialize)]
struct CountertermResults {
    rows: Vec<(f64, f64)>,
    log_fit: Option<LineFit>,
    inverse_fit: Option<LineFit>,
}

/// `||tl^delta(T)||_{C^{-eps}}` against `log(1/delta)` with `N = 2/delta`, and the
/// competing fit against `1/delta`.
pub fn counterterm_study(p: &CountertermParams, out: &Path) -> anyhow::Result<Outcome> {
    for &d in &p.deltas {
        if !(d > 0.0 && d <= MAX_COUNTERTERM_DELTA) || d.log2().fract() != 0.0 {
            bail!("delta = {d} must be dyadic and at most 1 - sqrt2/2");
        }
    }
    let manifest = ManifestBuilder::start("counterterm", p)?;
    let grid = TimeGrid::new(p.t_end, p.steps)?;
    let rows: Vec<(f64, f64, f64)> = p
        .deltas
        .iter()
        .map(|&delta| {
            let lattice = lattice_for_delta(delta)?;
            let lp = LittlewoodPaley::new(&lattice);
            let sigma = p.sigma.build(&lattice, grid)?;
            let moll = Mollifier::smooth(delta)?;
            let tl = if sigma.is_time_constant() {
                counterterm_at(&sigma, &moll, p.t_end, true)?
            } else {
                counterterm_path(&sigma, &moll, grid, CountertermRule::Continuous, DuhamelRule::LeftPoint)?.last().clone()
            };
            Ok((delta, holder_norm(&lp, &tl, p.eps), sigma.h2_norm().powi(2)))
        })
        .collect::<anyhow::Result<_>>()?;
    let csv_path = out.join("counterterm.csv");
    let mut csv = CsvOut::create(&csv_path, &["delta", "log_inv_delta", "norm", "sigma_h2_sq"])?;
    for &(d, n, h) in &rows {
        csv.row(&[num(d), num((1.0 / d).ln()), num(n), num(h)])?;
    }
    let x: Vec<f64> = rows.iter().map(|r| (1.0 / r.0).ln()).collect();
    let inv: Vec<f64> = rows.iter().map(|r| 1.0 / r.0).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let log_fit = fit_line(&x, &y);
    let inverse_fit = fit_line(&inv, &y);
    let mut series = vec![Series {
        label: "norm",
        points: x.iter().copied().zip(y.iter().copied()).collect(),
        color: "black",
        dashed: false,
    }];
    if let Some(f) = log_fit {
        series.push(Series { label: "least-squares fit", points: x.iter().map(|&a| (a, f.eval(a))).collect(), color: "#c0392b", dashed: true });
    }
    let svg_path = out.join("counterterm.svg");
    std::fs::write(&svg_path, line_plot("counterterm norm at T", "log(1/delta)", "C^{-eps} norm", &series))?;
    let (pass, detail) = match (log_fit, inverse_fit) {
        (Some(l), Some(i)) => (
            l.r_squared >= p.min_r_squared && l.slope > 0.0 && l.residual < i.residual,
            format!(
                "log fit slope {:.3e}, R^2 {:.3} (need >= {}); residuals log {:.3e} vs 1/delta {:.3e}",
                l.slope, l.r_squared, p.min_r_squared, l.residual, i.residual
            ),
        ),
        _ => (false, "fewer than two distinct deltas".into()),
    };
    let results = CountertermResults { rows: rows.iter().map(|r| (r.0, r.1)).collect(), log_fit, inverse_fit };
    finish("counterterm", manifest, out, results, vec![csv.finish()?, svg_path], pass, detail)
}

#[derive(Clone, Debug, Serialize)]
pub struct TcParams {
    pub ns: Vec<usize>,
    pub samples: usize,
    pub t_end: f64,
    pub eps: f64,
    pub seed: u64,
    /// Required growth of each summand per doubling of `N`.
    pub min_growth: f64,
    /// Allowed change of the summed diagram per doubling.
    pub max_change: f64,
}

impl Default for TcParams {
    fn default() -> Self {
        TcParams { ns: vec![16, 32, 64], samples: 100, t_end: 0.1, eps: 0.75, seed: 1, min_growth: 0.10, max_change: 0.10 }
    }
}

fn diagram_norm(lp: &LittlewoodPaley, d: &[[SpectralField; 2]; 2], eps: f64) -> f64 {
    d.iter().flatten().map(|f| holder_norm(lp, f, eps)).fold(0.0, f64::max)
}

/// Medians of the two summands of `tc` and of their sum for `sigma = 1`, sampled from
/// the exact law of `(ti(T), I[ti](T))` with every lattice mode excited.
pub fn tc_cancellation(p: &TcParams, out: &Path) -> anyhow::Result<Outcome> {
    let manifest = ManifestBuilder::start("tc-cancellation", p)?;
    let mut medians = Vec::new();
    for &n in &p.ns {
        let lattice = Lattice::new(n)?;
        let lp = LittlewoodPaley::new(&lattice);
        let norms: Vec<[f64; 3]> = (0..p.samples)
            .into_par_iter()
            .map(|s| {
                let (ti, i_ti) = sample_ti_exact(&lattice, 1.0, &Mollifier::Sharp, p.t_end, sample_seed(p.seed, s))?;
                let tc = diagram_tc(&lp, &i_ti, &ti);
                Ok([diagram_norm(&lp, &tc.first, p.eps), diagram_norm(&lp, &tc.second, p.eps), diagram_norm(&lp, &tc.sum(), p.eps)])
            })
            .collect::<anyhow::Result<_>>()?;
        let m: Vec<f64> = (0..3).map(|i| median(&norms.iter().map(|r| r[i]).collect::<Vec<_>>())).collect();
        medians.push((n, [m[0], m[1], m[2]]));
    }
    let path = out.join("tc_cancellation.csv");
    let mut csv = CsvOut::create(&path, &["n", "first_median", "second_median", "sum_median"])?;
    for (n, m) in &medians {
        csv.row(&[n.to_string(), num(m[0]), num(m[1]), num(m[2])])?;
    }
    let mut pass = medians.len() >= 2;
    let mut steps = Vec::new();
    for w in medians.windows(2) {
        let g = |i: usize| w[1].1[i] / w[0].1[i] - 1.0;
        pass &= g(0) >= p.min_growth && g(1) >= p.min_growth && g(2).abs() <= p.max_change;
        steps.push(format!("{}->{}: {:+.1}%, {:+.1}%, sum {:+.1}%", w[0].0, w[1].0, 100.0 * g(0), 100.0 * g(1), 100.0 * g(2)));
    }
    let detail = format!("summand and sum median changes {}", steps.join("; "));
    finish("tc-cancellation", manifest, out, &medians, vec![csv.finish()?], pass, detail)
}

#[derive(Clone, Debug, Serialize)]
pub struct OuParams {
    pub n: usize,
    pub t_end: f64,
    pub steps: usize,
    pub delta: f64,
    pub sigma: SigmaSpec,
    pub frequencies: Vec<(i64, i64)>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for OuParams {
    fn default() -> Self {
        OuParams {
            n: 4,
            t_end: 0.01,
            steps: 200,
            delta: 0.25,
            sigma: SigmaSpec::standard_trig(),
            frequencies: vec![(1, 0), (0, 1), (1, 1), (2, 0), (1, 2)],
            samples: 10_000,
            seed: 1,
        }
    }
}

/// Monte Carlo `E |ti^delta(T, w)|^2` against the continuous-time OU variance.
pub fn ou_check(p: &OuParams, out: &Path) -> anyhow::Result<Outcome> {
    let manifest = ManifestBuilder::start("ou-check", p)?;
    let lattice = Lattice::new(p.n)?;
    let grid = TimeGrid::new(p.t_end, p.steps)?;
    let sigma = p.sigma.build(&lattice, grid)?;
    if !sigma.is_time_constant() {
        bail!("the OU variance needs a time-constant sigma");
    }
    let moll = Mollifier::smooth(p.delta)?;
    let draws: Vec<Vec<f64>> = (0..p.samples)
        .into_par_iter()
        .map(|s| {
            let w = BrownianField::sample(&lattice, grid, sample_seed(p.seed, s), None);
            let ti = stochastic_convolution(&w, &sigma, &moll)?;
            Ok(p.frequencies.iter().map(|k| ti.last().get(k.0, k.1).norm_sqr()).collect())
        })
        .collect::<anyhow::Result<_>>()?;
    let path = out.join("ou_check.csv");
    let mut csv = CsvOut::create(&path, &["k1", "k2", "mean", "se", "exact", "z"])?;
    let mut worst_z = 0.0f64;
    for (i, k) in p.frequencies.iter().enumerate() {
        let xs: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        let (mean, se) = mean_and_se(&xs);
        let exact = ou_variance(sigma.at_step(0), &moll, *k, p.t_end);
        let z = (mean - exact) / se;
        worst_z = worst_z.max(z.abs());
        csv.row(&[k.0.to_string(), k.1.to_string(), num(mean), num(se), num(exact), num(z)])?;
    }
    let pass = worst_z <= 3.0;
    let detail = format!("largest |mean - exact| / se over {} frequencies: {worst_z:.2}", p.frequencies.len());
    finish("ou-check", manifest, out, serde_json::json!({ "worst_z": worst_z }), vec![csv.finish()?], pass, detail)
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimatesParams {
    pub lemmas: Vec<String>,
    pub max_freq: i64,
    /// Deltas at which the summation estimate is compared with a brute-force sum.
    pub summation_deltas: Vec<f64>,
}

impl Default for EstimatesParams {
    fn default() -> Self {
        EstimatesParams {
            lemmas: Lemma::ALL.iter().map(|l| l.id().to_string()).collect(),
            max_freq: 64,
            summation_deltas: vec![0.25, 0.125, 0.0625, 0.03125],
        }
    }
}

/// `sum_{0 < |m| <= 1/delta} |m|^{-2}` by enumeration.
pub fn brute_force_inverse_square_sum(delta: f64) -> f64 {
    let r = 1.0 / delta;
    let n = r.floor() as i64;
    let mut s = 0.0;
    for a in -n..=n {
        for b in -n..=n {
            let q = (a * a + b * b) as f64;
            if q > 0.0 && q <= r * r {
                s += 1.0 / q;
            }
        }
    }
    s
}

/// Every estimate check at caps `max_freq / 2` and `max_freq`.
pub fn estimates_study(p: &EstimatesParams, out: &Path) -> anyhow::Result<Outcome> {
    let manifest = ManifestBuilder::start("verify-estimates", p)?;
    let lemmas: Vec<Lemma> = p.lemmas.iter().map(|l| l.parse()).collect::<Result<_, _>>()?;
    let caps = [p.max_freq / 2, p.max_freq];
    let reports: Vec<_> = lemmas.iter().map(|&l| verify_bound(l, &caps)).collect::<Result<_, _>>()?;
    let path = out.join("report.csv");
    let mut csv = CsvOut::create(&path, &["lemma", "params", "lhs", "rhs", "ratio"])?;
    for r in &reports {
        for row in &r.rows {
            let params = format!("cap={} {} at {}", row.cap, row.params, row.at);
            csv.row(&[row.lemma.clone(), params, num(row.lhs), num(row.rhs), num(row.ratio)])?;
        }
    }
    let summary = out.join("report_summary.csv");
    let mut s = CsvOut::create(&summary, &["lemma", "cap_low", "max_ratio_low", "cap_high", "max_ratio_high", "growth", "pass"])?;
    for r in &reports {
        let (lo, hi) = (r.max_ratio[0], r.max_ratio[1]);
        s.row(&[r.lemma.id().into(), lo.0.to_string(), num(lo.1), hi.0.to_string(), num(hi.1), num(r.growth), r.pass.to_string()])?;
    }
    let sums: Vec<(f64, f64, f64)> =
        p.summation_deltas.iter().map(|&d| (d, inverse_square_sum(d), brute_force_inverse_square_sum(d))).collect();
    let sums_ok = sums.iter().all(|&(_, a, b)| (a - b).abs() <= 1e-12 * b);
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.lemma.id()).collect();
    let worst = reports.iter().map(|r| r.growth).fold(f64::NEG_INFINITY, f64::max);
    let pass = failed.is_empty() && sums_ok;
    let detail = format!(
        "{}/{} estimates pass, largest growth {:+.1}%{}; summation vs brute force {}",
        reports.len() - failed.len(),
        reports.len(),
        100.0 * worst,
        if failed.is_empty() { String::new() } else { format!(" (failing: {})", failed.join(", ")) },
        if sums_ok { "exact" } else { "MISMATCH" }
    );
    let results = serde_json::json!({ "reports": reports.iter().map(|r| (r.lemma.id(), r.growth, r.pass)).collect::<Vec<_>>(), "summation": sums });
    finish("verify-estimates", manifest, out, results, vec![csv.finish()?, s.finish()?], pass, detail)
}

#[derive(Clone, Debug, Serialize)]
pub struct ShapeParams {
    pub queries: usize,
    pub max_freq: i64,
    pub max_time: f64,
    pub quadrature_tol: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for ShapeParams {
    fn default() -> Self {
        ShapeParams { queries: 1000, max_freq: 8, max_time: 0.1, quadrature_tol: 1e-12, tolerance: 1e-8, seed: 1 }
    }
}

/// Closed-form shape coefficients against quadrature on random queries.
pub fn shape_study(p: &ShapeParams, out: &Path) -> anyhow::Result<Outcome> {
    let manifest = ManifestBuilder::start("shapes", p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let freq = |rng: &mut ChaCha8Rng| -> Freq {
        loop {
            let w = (rng.random_range(-p.max_freq..=p.max_freq), rng.random_range(-p.max_freq..=p.max_freq));
            if w != (0, 0) {
                return w;
            }
        }
    };
    let time = |rng: &mut ChaCha8Rng| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..p.max_time) };
    let mut queries = Vec::with_capacity(2 * p.queries);
    for _ in 0..p.queries {
        let (s, t) = (time(&mut rng), time(&mut rng));
        let w1 = freq(&mut rng);
        let w2 = loop {
            let w = freq(&mut rng);
            if (w.0 + w1.0, w.1 + w1.1) != (0, 0) {
                break w;
            }
        };
        queries.push(ShapeQuery::new(ShapeKind::Y, s, t, vec![w1, w2])?);
    }
    for _ in 0..p.queries {
        let (s, t) = (time(&mut rng), time(&mut rng));
        queries.push(ShapeQuery::new(ShapeKind::L, s, t, vec![freq(&mut rng)])?);
    }
    let rows: Vec<(f64, f64, f64, bool)> = queries
        .par_iter()
        .map(|q| {
            let c = q.closed_form();
            let n = q.quadrature(p.quadrature_tol)?;
            let gap = if c == n { 0.0 } else { (c - n).abs() / c.abs().max(n.abs()) };
            let d_ok = match q.kind {
                ShapeKind::Y => shape_d(q.s, q.t, q.omegas[0], q.omegas[1]) >= -shape_d_tolerance(q.s, q.t, q.omegas[0], q.omegas[1]),
                _ => true,
            };
            Ok((c, n, gap, d_ok))
        })
        .collect::<anyhow::Result<_>>()?;
    let path = out.join("shapes.csv");
    let mut csv = CsvOut::create(&path, &["kind", "s", "t", "omegas", "closed_form", "quadrature", "relative_gap"])?;
    for (q, r) in queries.iter().zip(&rows) {
        let kind = if matches!(q.kind, ShapeKind::Y) { "Y" } else { "L" };
        let omegas: Vec<String> = q.omegas.iter().map(|w| format!("{} {}", w.0, w.1)).collect();
        csv.row(&[kind.into(), num(q.s), num(q.t), omegas.join(";"), num(r.0), num(r.1), num(r.2)])?;
    }
    let worst = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let d_fail = rows.iter().filter(|r| !r.3).count();
    let pass = worst <= p.tolerance && d_fail == 0;
    let detail = format!("{} Y and {} L queries: worst relative gap {worst:.2e}; D Y negative on {d_fail}", p.queries, p.queries);
    finish("shapes", manifest, out, serde_json::json!({ "worst_gap": worst, "d_negative": d_fail }), vec![csv.finish()?], pass, detail)
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverParams {
    pub n: usize,
    pub delta: f64,
    pub t_end: f64,
    pub steps: usize,
    pub eps: f64,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams { n: 16, delta: 0.25, t_end: 0.05, steps: 8, eps: 0.05, seed: 1 }
    }
}

fn max_over_path(a: &FieldPath, b: &FieldPath, f: impl Fn(&SpectralField) -> f64) -> f64 {
    a.fields.iter().zip(&b.fields).map(|(x, y)| f(&(x - y))).fold(0.0, f64::max)
}

fn mean_drift(state: &SolverState, mean: f64) -> f64 {
    state.rho.fields.iter().map(|f| (f.mean() - mean).abs()).fold(0.0, f64::max)
}

/// `max_t |w - (div I[w' < ti] + w#)|` and `max_t |rho - (ti + ty + w)|`.
pub fn decomposition_defects(lp: &LittlewoodPaley, e: &Enhancement, state: &SolverState) -> anyhow::Result<(f64, f64)> {
    let (Some(w), Some(ws), Some(wp)) = (&state.w, &state.w_sharp, &state.w_prime) else {
        bail!("state carries no paracontrolled decomposition");
    };
    let forcing = FieldPath {
        grid: w.grid,
        fields: (0..=w.grid.steps)
            .map(|i| {
                let p = |j: usize| lp.paraproduct(&wp[j].fields[i], &e.ti.fields[i]);
                div(&[p(0), p(1)])
            })
            .collect(),
    };
    let ansatz = duhamel(&forcing, e.rule);
    let mut a = 0.0f64;
    let mut d = 0.0f64;
    for i in 0..=w.grid.steps {
        a = a.max((&ansatz.fields[i] + &ws.fields[i]).max_abs_diff(&w.fields[i]));
        let sum = &(&e.ti.fields[i] + &e.ty.fields[i]) + &w.fields[i];
        d = d.max(sum.max_abs_diff(&state.rho.fields[i]));
    }
    Ok((a, d))
}

/// Direct against paracontrolled solve, the structural identities, and the zero-noise reduction.
pub fn solver_study(p: &SolverParams, out: &Path) -> anyhow::Result<Outcome> {
    let manifest = ManifestBuilder::start("solver", p)?;
    let lattice = Lattice::new(p.n)?;
    let lp = LittlewoodPaley::new(&lattice);
    let grid = TimeGrid::new(p.t_end, p.steps)?;
    let opts = SolverOptions { eps: p.eps, ..Default::default() };
    let rho0 = cosine_density(&lattice);
    let sigma = SigmaSpec::standard_trig().build(&lattice, grid)?;
    let moll = Mollifier::smooth(p.delta)?;
    let w = BrownianField::sample(&lattice, grid, p.seed, None);
    let ti = stochastic_convolution(&w, &sigma, &moll)?;
    let tl = counterterm_path(&sigma, &moll, grid, CountertermRule::Discrete, opts.rule)?;
    let e = Enhancement::build(&lp, ti, tl, opts.rule)?;
    let direct = solve_rho_delta(&rho0, &e.ti, &e.tl, &opts)?;
    let para = solve_paracontrolled(&lp, &rho0, &e, &opts)?;
    let route = max_over_path(&direct.rho, &para.rho, |f| holder_norm(&lp, f, p.eps));
    let (ansatz, decomposition) = decomposition_defects(&lp, &e, &para)?;
    let mean = mean_drift(&direct, rho0.mean()).max(mean_drift(&para, rho0.mean()));
    let det = deterministic_ks(&rho0, grid)?;
    let zero = Enhancement::zero(&lattice, grid, opts.rule);
    let quiet_direct = solve_rho_delta(&rho0, &zero.ti, &zero.tl, &opts)?;
    let quiet_para = solve_paracontrolled(&lp, &rho0, &zero, &opts)?;
    let coeff = |f: &SpectralField| f.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max);
    let quiet = max_over_path(&quiet_direct.rho, &det, coeff).max(max_over_path(&quiet_para.rho, &det, coeff));
    let checks = [
        ("route_difference_holder", route, 1e-6),
        ("ansatz_identity", ansatz, 1e-9),
        ("decomposition_identity", decomposition, 1e-9),
        ("mean_drift", mean, 1e-10),
        ("zero_noise_vs_deterministic", quiet, 1e-9),
    ];
    let path = out.join("solver_checks.csv");
    let mut csv = CsvOut::create(&path, &["check", "value", "tolerance", "pass"])?;
    for (name, v, tol) in checks {
        csv.row(&[name.into(), num(v), num(tol), (v <= tol).to_string()])?;
    }
    let pass = para.converged && checks.iter().all(|c| c.1 <= c.2);
    let detail = checks.iter().map(|c| format!("{} {:.1e}", c.0, c.1)).collect::<Vec<_>>().join(", ")
        + &format!(" ({} fixed-point iterations)", para.residuals.len());
    let results = serde_json::json!({ "checks": checks, "residuals": para.residuals });
    finish("solver", manifest, out, results, vec![csv.finish()?], pass, detail)
}

#[derive(Clone, Debug, Serialize)]
pub struct CauchyParams {
    pub n: usize,
    pub t_end: f64,
    pub steps: usize,
    pub deltas: Vec<f64>,
    pub samples: usize,
    pub eps: f64,
    pub seed: u64,
}

impl Default for CauchyParams {
    fn default() -> Self {
        CauchyParams { n: 16, t_end: 0.02, steps: 100, deltas: vec![0.25, 0.125, 0.0625], samples: 50, eps: 0.75, seed: 1 }
    }
}

/// Coupled-noise medians of `||rho^{2 delta}(T) - rho^delta(T)||_{C^{-1-eps}}`.
pub fn cauchy_study(p: &CauchyParams, out: &Path) -> anyhow::Result<Outcome> {
    let manifest = ManifestBuilder::start("cauchy", p)?;
    let lattice = Lattice::new(p.n)?;
    let grid = TimeGrid::new(p.t_end, p.steps)?;
    let cfg = CauchyConfig {
        rho0: cosine_density(&lattice),
        sigma: SigmaSpec::standard_trig().build(&lattice, grid)?,
        deltas: p.deltas.clone(),
        grid,
        samples: p.samples,
        seed: p.seed,
        eps: p.eps,
        options: SolverOptions::default(),
    };
    let report = cauchy_in_delta(&cfg)?;
    let path = out.join("cauchy.csv");
    let mut csv = CsvOut::create(&path, &["delta", "sample", "difference"])?;
    for (d, diffs) in report.deltas.iter().zip(&report.differences) {
        for (s, v) in diffs.iter().enumerate() {
            csv.row(&[num(*d), s.to_string(), num(*v)])?;
        }
    }
    let mpath = out.join("cauchy_medians.csv");
    let mut m = CsvOut::create(&mpath, &["delta", "median"])?;
    for (d, v) in report.deltas.iter().zip(&report.medians) {
        m.row(&[num(*d), num(*v)])?;
    }
    let pass = report.medians.len() >= 2 && report.medians.windows(2).all(|w| w[1] < w[0]);
    let detail = format!("medians {:?}", report.medians.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    finish("cauchy", manifest, out, &report.medians, vec![csv.finish()?, m.finish()?], pass, detail)
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityParams {
    pub n: usize,
    pub line_n: usize,
    pub fields: usize,
    pub seed: u64,
}

impl Default for IdentityParams {
    fn default() -> Self {
        IdentityParams { n: 16, line_n: 32, fields: 5, seed: 1 }
    }
}

/// Bony reconstruction, dyadic partition of unity and the one-dimensional product rule.
pub fn identities_study(p: &IdentityParams, out: &Path) -> anyhow::Result<Outcome> {
    let manifest = ManifestBuilder::start("identities", p)?;
    let lattice = Lattice::new(p.n)?;
    let lp = LittlewoodPaley::new(&lattice);
    let mut bony = 0.0f64;
    let mut blocks = 0.0f64;
    for i in 0..p.fields as u64 {
        let u = random_field(&lattice, sample_seed(p.seed, 2 * i as usize));
        let v = random_field(&lattice, sample_seed(p.seed, 2 * i as usize + 1));
        let [a, b, c] = lp.bony(&u, &v);
        bony = bony.max((&(&a + &b) + &c).max_abs_diff(&u.product(&v)?));
        let mut sum = SpectralField::zeros(&lattice);
        for k in lp.partition().blocks() {
            sum += &lp.block(&u, k);
        }
        blocks = blocks.max(sum.max_abs_diff(&u));
    }
    let partition = lp.partition();
    let unity = (0..lattice.len())
        .map(|i| {
            let r = lattice.norm(i);
            (partition.blocks().map(|k| partition.rho(k, r)).sum::<f64>() - 1.0).abs()
        })
        .fold(0.0, f64::max);
    let mut product_rule = 0.0f64;
    for i in 0..p.fields {
        let (l, r) = product_rule_sides(&Line::random(p.line_n, sample_seed(p.seed, 1000 + i)))?;
        product_rule = product_rule.max(l.max_abs_diff(&r));
    }
    let (l, r) = product_rule_sides(&Line::sine(1))?;
    product_rule = product_rule.max(l.max_abs_diff(&r));
    let checks = [
        ("bony_reconstruction", bony, 1e-12),
        ("block_reconstruction", blocks, 1e-12),
        ("partition_of_unity", unity, 1e-12),
        ("product_rule", product_rule, 1e-10),
    ];
    let path = out.join("identities.csv");
    let mut csv = CsvOut::create(&path, &["identity", "value", "tolerance", "pass"])?;
    for (name, v, tol) in checks {
        csv.row(&[name.into(), num(v), num(tol), (v <= tol).to_string()])?;
    }
    let pass = checks.iter().all(|c| c.1 <= c.2);
    let detail = checks.iter().map(|c| format!("{} {:.1e}", c.0, c.1)).collect::<Vec<_>>().join(", ");
    finish("identities", manifest, out, serde_json::json!({ "checks": checks }), vec![csv.finish()?], pass, detail)
}

#[derive(Clone, Debug, Serialize)]
pub struct ProductRuleParams {
    pub n: usize,
    pub seed: u64,
}

impl Default for ProductRuleParams {
    fn default() -> Self {
        ProductRuleParams { n: 32, seed: 1 }
    }
}

/// Both sides of the one-dimensional product-rule identity for a random mean-free field.
pub fn product_rule_study(p: &ProductRuleParams, out: &Path) -> anyhow::Result<Outcome> {
    let manifest = ManifestBuilder::start("product-rule", p)?;
    let u = Line::random(p.n, p.seed);
    let (lhs, rhs) = product_rule_sides(&u)?;
    let path = out.join("product_rule.csv");
    let mut csv = CsvOut::create(&path, &["k", "lhs_re", "lhs_im", "rhs_re", "rhs_im"])?;
    let band = lhs.band().max(rhs.band()) as i64;
    for k in -band..=band {
        let (a, b) = (lhs.get(k), rhs.get(k));
        csv.row(&[k.to_string(), num(a.re), num(a.im), num(b.re), num(b.im)])?;
    }
    let gap = lhs.max_abs_diff(&rhs);
    let pass = gap <= 1e-10;
    let detail = format!("max coefficient gap {gap:.2e}");
    finish("product-rule", manifest, out, serde_json::json!({ "max_gap": gap }), vec![csv.finish()?], pass, detail)
}

/// Consolidated result of `run-all`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Bundle {
    pub outcomes: Vec<Outcome>,
}

impl Bundle {
    pub fn pass(&self) -> bool {
        self.outcomes.iter().all(|o| o.pass)
    }
}

/// Runs the studies in order, each in its own subdirectory, and writes `summary.csv`.
pub fn run_all(studies: &[Study], out: &Path, seed: u64) -> anyhow::Result<Bundle> {
    let mut bundle = Bundle::default();
    if studies.is_empty() {
        return Ok(bundle);
    }
    std::fs::create_dir_all(out)?;
    let mut errors = Vec::new();
    for study in studies {
        let dir = out.join(study.id());
        std::fs::create_dir_all(&dir)?;
        let start = Instant::now();
        match study.run(&dir, seed) {
            Ok(o) => bundle.outcomes.push(o),
            Err(e) => {
                errors.push(format!("{}: {e:#}", study.id()));
                bundle.outcomes.push(Outcome {
                    study: study.id().into(),
                    pass: false,
                    detail: format!("error: {e:#}"),
                    artifacts: Vec::new(),
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
        }
    }
    let path = out.join("summary.csv");
    let mut csv = CsvOut::create(&path, &["study", "criterion", "status", "detail"])?;
    for (s, o) in studies.iter().zip(&bundle.outcomes) {
        let criterion = s.criterion().map(|c| c.to_string()).unwrap_or_default();
        csv.row(&[o.study.clone(), criterion, if o.pass { "PASS" } else { "FAIL" }.into(), o.detail.clone()])?;
    }
    csv.finish()?;
    if !errors.is_empty() {
        eprintln!("studies failed with errors:\n  {}", errors.join("\n  "));
    }
    Ok(bundle)
}
