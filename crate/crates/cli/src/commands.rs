//! Subcommands that produce fields rather than pass/fail verdicts.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ks_para_core::enhancement::{counterterm_path, holder_norm, moment_from_norms, CountertermRule, Enhancement};
use ks_para_core::littlewood_paley::{BesovIndex, LittlewoodPaley};
use ks_para_core::noise::{stochastic_convolution, BrownianField, Mollifier};
use ks_para_core::solver::{deterministic_ks, sample_seed, solve_paracontrolled, solve_rho_delta, SolverOptions};
use ks_para_core::{FieldPath, SpectralField};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::io::{num, read_field, write_fields, CsvOut, Manifest, ManifestBuilder};
use crate::studies::cosine_density;

/// Which route `simulate` takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Direct,
    Paracontrolled,
    Both,
}

fn initial_density(cfg: &RunConfig, rho0: Option<&Path>) -> anyhow::Result<SpectralField> {
    let lattice = cfg.lattice()?;
    match rho0 {
        None => Ok(cosine_density(&lattice)),
        Some(p) => {
            let (f, _) = read_field(p)?;
            if f.lattice() != &lattice {
                bail!("{} holds a field with N = {}, the run uses N = {}", p.display(), f.lattice().n(), lattice.n());
            }
            Ok(f)
        }
    }
}

fn write_path(path: &Path, fields: &FieldPath) -> anyhow::Result<PathBuf> {
    let snaps: Vec<(f64, &SpectralField)> = fields.fields.iter().enumerate().map(|(i, f)| (fields.grid.time(i), f)).collect();
    write_fields(path, &snaps)?;
    Ok(path.to_path_buf())
}

fn norm_rows(csv: &mut CsvOut, lp: &LittlewoodPaley, label: &str, path: &FieldPath, eps: f64) -> anyhow::Result<()> {
    for (i, f) in path.fields.iter().enumerate() {
        csv.row(&[
            label.into(),
            i.to_string(),
            num(path.grid.time(i)),
            num(f.mean()),
            num(f.l2_norm()),
            num(f.sup_norm()),
            num(holder_norm(lp, f, eps)),
        ])?;
    }
    Ok(())
}

const NORM_HEADER: [&str; 7] = ["route", "step", "t", "mean", "l2", "sup", "holder_minus_eps"];

#[derive(Serialize)]
struct SimulateParams<'a> {
    config: &'a RunConfig,
    mode: Mode,
    rho0: Option<&'a Path>,
    counterterm: CountertermRule,
}

/// One sample of `rho^delta` by the direct and/or paracontrolled route.
pub fn simulate(cfg: &RunConfig, mode: Mode, rho0: Option<&Path>, counterterm: CountertermRule) -> anyhow::Result<Manifest> {
    cfg.validate()?;
    let delta = *cfg.deltas.first().context("simulate needs one delta")?;
    std::fs::create_dir_all(&cfg.out)?;
    let manifest = ManifestBuilder::start("simulate", SimulateParams { config: cfg, mode, rho0, counterterm })?;
    let lattice = cfg.lattice()?;
    let grid = cfg.grid()?;
    let lp = LittlewoodPaley::new(&lattice);
    let rho0 = initial_density(cfg, rho0)?;
    let sigma = cfg.sigma.build(&lattice, grid)?;
    let moll = Mollifier::smooth(delta)?;
    let opts = SolverOptions { rule: cfg.rule, eps: cfg.eps, ..Default::default() };
    let w = BrownianField::sample(&lattice, grid, cfg.seed, None);
    let ti = stochastic_convolution(&w, &sigma, &moll)?;
    let tl = counterterm_path(&sigma, &moll, grid, counterterm, cfg.rule)?;
    let norms_path = cfg.out.join("norms.csv");
    let mut csv = CsvOut::create(&norms_path, &NORM_HEADER)?;
    let mut outputs = Vec::new();
    let mut results = serde_json::Map::new();
    if matches!(mode, Mode::Direct | Mode::Both) {
        let s = solve_rho_delta(&rho0, &ti, &tl, &opts)?;
        norm_rows(&mut csv, &lp, "direct", &s.rho, cfg.eps)?;
        outputs.push(write_path(&cfg.out.join("rho_direct.ksf"), &s.rho)?);
    }
    if matches!(mode, Mode::Paracontrolled | Mode::Both) {
        let e = Enhancement::build(&lp, ti, tl, cfg.rule)?;
        let s = solve_paracontrolled(&lp, &rho0, &e, &opts)?;
        norm_rows(&mut csv, &lp, "paracontrolled", &s.rho, cfg.eps)?;
        outputs.push(write_path(&cfg.out.join("rho_paracontrolled.ksf"), &s.rho)?);
        if let Some(w) = &s.w {
            outputs.push(write_path(&cfg.out.join("w.ksf"), w)?);
        }
        results.insert("fixed_point_residuals".into(), serde_json::to_value(&s.residuals)?);
        results.insert("converged".into(), s.converged.into());
    }
    outputs.insert(0, csv.finish()?);
    manifest.finish(&cfg.out, results, outputs)
}

/// The deterministic Keller-Segel flow.
pub fn deterministic(cfg: &RunConfig, rho0: Option<&Path>) -> anyhow::Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out)?;
    let manifest = ManifestBuilder::start("deterministic", serde_json::json!({ "config": cfg, "rho0": rho0 }))?;
    let lattice = cfg.lattice()?;
    let lp = LittlewoodPaley::new(&lattice);
    let rho = deterministic_ks(&initial_density(cfg, rho0)?, cfg.grid()?)?;
    let norms_path = cfg.out.join("norms.csv");
    let mut csv = CsvOut::create(&norms_path, &NORM_HEADER)?;
    norm_rows(&mut csv, &lp, "deterministic", &rho, cfg.eps)?;
    let outputs = vec![csv.finish()?, write_path(&cfg.out.join("rho_deterministic.ksf"), &rho)?];
    manifest.finish(&cfg.out, serde_json::json!({}), outputs)
}

fn vector_norm(lp: &LittlewoodPaley, fields: &[&SpectralField], f: impl Fn(&LittlewoodPaley, &SpectralField) -> f64) -> f64 {
    fields.iter().map(|x| f(lp, x)).fold(0.0, f64::max)
}

/// Second-moment estimates of the enhancement diagrams at four times.
pub fn enhance(cfg: &RunConfig, counterterm: CountertermRule) -> anyhow::Result<Manifest> {
    cfg.validate()?;
    if cfg.samples < 2 {
        bail!("moment estimates need at least two samples");
    }
    let delta = *cfg.deltas.first().context("enhance needs one delta")?;
    std::fs::create_dir_all(&cfg.out)?;
    let manifest = ManifestBuilder::start("enhance", serde_json::json!({ "config": cfg, "counterterm": counterterm }))?;
    let lattice = cfg.lattice()?;
    let grid = cfg.grid()?;
    let lp = LittlewoodPaley::new(&lattice);
    let sigma = cfg.sigma.build(&lattice, grid)?;
    let moll = Mollifier::smooth(delta)?;
    let tl = counterterm_path(&sigma, &moll, grid, counterterm, cfg.rule)?;
    let steps: Vec<usize> = (1..=4).map(|j| (grid.steps * j).div_ceil(4)).collect();
    let seeds: Vec<u64> = (0..cfg.samples).map(|s| sample_seed(cfg.seed, s)).collect();
    let sampler = |seed: u64| -> ks_para_core::Result<Enhancement> {
        let w = BrownianField::sample(&lattice, grid, seed, None);
        Enhancement::build(&lp, stochastic_convolution(&w, &sigma, &moll)?, tl.clone(), cfg.rule)
    };
    type Pick = fn(&Enhancement, usize) -> Vec<&SpectralField>;
    let diagrams: [(&str, Pick); 5] = [
        ("ti", |e, i| vec![&e.ti.fields[i]]),
        ("ty", |e, i| vec![&e.ty.fields[i]]),
        ("tp", |e, i| vec![&e.tp[0].fields[i], &e.tp[1].fields[i]]),
        ("tc", |e, i| e.tc.iter().flatten().map(|p| &p.fields[i]).collect()),
        ("tl", |e, i| vec![&e.tl.fields[i]]),
    ];
    let path = cfg.out.join("enhancement.csv");
    let mut csv = CsvOut::create(&path, &["diagram", "t", "norm_kind", "eps", "value", "se"])?;
    let eps = cfg.eps;
    let norms = estimate_rows(&seeds, &sampler, &diagrams, &steps, &lp, eps)?;
    for (d, (name, _)) in diagrams.iter().enumerate() {
        for (k, &i) in steps.iter().enumerate() {
            for (kind, col) in [("holder", 0usize), ("l2", 1)] {
                let values: Vec<f64> = norms.iter().map(|s| s[d][k][col]).collect();
                let m = moment_from_norms(&values, 2.0)?;
                let eps_cell = if col == 0 { num(eps) } else { String::new() };
                csv.row(&[(*name).into(), num(grid.time(i)), kind.into(), eps_cell, num(m.root), num(m.root_se)])?;
            }
        }
    }
    manifest.finish(&cfg.out, serde_json::json!({ "samples": cfg.samples }), vec![csv.finish()?])
}

/// Per sample, per diagram and per reported step: `[C^{-eps} norm, L^2 norm]`.
type Row = Vec<Vec<[f64; 2]>>;

fn estimate_rows<S>(
    seeds: &[u64],
    sampler: &S,
    diagrams: &[(&str, fn(&Enhancement, usize) -> Vec<&SpectralField>)],
    steps: &[usize],
    lp: &LittlewoodPaley,
    eps: f64,
) -> anyhow::Result<Vec<Row>>
where
    S: Fn(u64) -> ks_para_core::Result<Enhancement> + Sync,
{
    seeds
        .par_iter()
        .map(|&seed| {
            let e = sampler(seed)?;
            Ok(diagrams
                .iter()
                .map(|(_, pick)| {
                    steps
                        .iter()
                        .map(|&i| {
                            let fields = pick(&e, i);
                            [
                                vector_norm(lp, &fields, |lp, f| holder_norm(lp, f, eps)),
                                vector_norm(lp, &fields, |_, f| f.l2_norm()),
                            ]
                        })
                        .collect()
                })
                .collect())
        })
        .collect()
}

/// Block and Hölder-Besov norms of the last snapshot in a field file.
pub fn besov(field: &Path, alphas: &[f64], out: Option<&Path>) -> anyhow::Result<Vec<(String, f64)>> {
    let (f, t) = read_field(field)?;
    let lp = LittlewoodPaley::new(f.lattice());
    let mut rows = vec![("t".to_string(), t), ("mean".into(), f.mean()), ("l2".into(), f.l2_norm()), ("sup".into(), f.sup_norm())];
    for k in lp.partition().blocks() {
        rows.push((format!("block_{k}_sup"), lp.block(&f, k).sup_norm()));
    }
    for &a in alphas {
        rows.push((format!("holder_{a}"), lp.besov_norm(&f, BesovIndex::holder(a))));
    }
    if let Some(path) = out {
        let mut csv = CsvOut::create(path, &["quantity", "value"])?;
        for (q, v) in &rows {
            csv.row(&[q.clone(), num(*v)])?;
        }
        csv.finish()?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(out: &Path) -> RunConfig {
        RunConfig { n: 4, t_end: 0.01, steps: 4, samples: 3, out: out.to_path_buf(), ..Default::default() }
    }

    #[test]
    fn simulate_both_routes_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let m = simulate(&cfg, Mode::Both, None, CountertermRule::Discrete).unwrap();
        assert!(m.outputs.iter().all(|p| p.exists()));
        let direct = crate::io::read_fields(&dir.path().join("rho_direct.ksf")).unwrap();
        let para = crate::io::read_fields(&dir.path().join("rho_paracontrolled.ksf")).unwrap();
        assert_eq!(direct.len(), cfg.steps + 1);
        assert!(direct.last().unwrap().1.max_abs_diff(&para.last().unwrap().1) < 1e-9);
        let norms = std::fs::read_to_string(dir.path().join("norms.csv")).unwrap();
        assert_eq!(norms.lines().count(), 1 + 2 * (cfg.steps + 1));
        let rows = besov(&dir.path().join("rho_direct.ksf"), &[-1.0, 0.0], Some(&dir.path().join("b.csv"))).unwrap();
        let mean = rows.iter().find(|r| r.0 == "mean").unwrap().1;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_writes_snapshots() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        deterministic(&cfg, None).unwrap();
        let snaps = crate::io::read_fields(&dir.path().join("rho_deterministic.ksf")).unwrap();
        assert_eq!(snaps.len(), cfg.steps + 1);
        assert_eq!(snaps[0].1.max_abs_diff(&cosine_density(&cfg.lattice().unwrap())), 0.0);
    }

    #[test]
    fn enhance_reports_every_diagram() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        enhance(&cfg, CountertermRule::Discrete).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("enhancement.csv")).unwrap();
        assert!(csv.starts_with("diagram,t,norm_kind,eps,value,se\n"));
        assert_eq!(csv.lines().count(), 1 + 5 * 4 * 2);
        let rerun = tempfile::tempdir().unwrap();
        enhance(&RunConfig { out: rerun.path().to_path_buf(), ..cfg }, CountertermRule::Discrete).unwrap();
        assert_eq!(csv, std::fs::read_to_string(rerun.path().join("enhancement.csv")).unwrap());
    }
}
