//! Run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ks_para_core::noise::{Heterogeneity, TrigTerm};
use ks_para_core::solver::deterministic_ks;
use ks_para_core::spectral::DuhamelRule;
use ks_para_core::{Lattice, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::io::read_field;

/// Noise coefficient descriptor: `const:c`, `trig:mean;k1,k2,cos,sin;...` or `sqrt-det:file`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SigmaSpec {
    Constant(f64),
    Trig { mean: f64, terms: Vec<TrigTerm> },
    /// `sqrt` of the deterministic solution started from the field stored in the file.
    SqrtDet(PathBuf),
}

impl std::str::FromStr for SigmaSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let (kind, rest) = s.split_once(':').context("sigma must look like kind:params")?;
        match kind {
            "const" => Ok(SigmaSpec::Constant(rest.trim().parse().context("const sigma")?)),
            "trig" => {
                let mut parts = rest.split(';');
                let mean = parts.next().unwrap_or("").trim().parse().context("trig mean")?;
                let terms = parts
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| {
                        let v: Vec<&str> = p.split(',').map(str::trim).collect();
                        if v.len() != 4 {
                            bail!("trig term must be k1,k2,cos,sin, got {p:?}");
                        }
                        Ok(TrigTerm { k: (v[0].parse()?, v[1].parse()?), cos_amp: v[2].parse()?, sin_amp: v[3].parse()? })
                    })
                    .collect::<anyhow::Result<_>>()?;
                Ok(SigmaSpec::Trig { mean, terms })
            }
            "sqrt-det" => Ok(SigmaSpec::SqrtDet(PathBuf::from(rest))),
            _ => bail!("unknown sigma kind {kind:?}"),
        }
    }
}

impl std::fmt::Display for SigmaSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SigmaSpec::Constant(c) => write!(f, "const:{c}"),
            SigmaSpec::Trig { mean, terms } => {
                write!(f, "trig:{mean}")?;
                for t in terms {
                    write!(f, ";{},{},{},{}", t.k.0, t.k.1, t.cos_amp, t.sin_amp)?;
                }
                Ok(())
            }
            SigmaSpec::SqrtDet(p) => write!(f, "sqrt-det:{}", p.display()),
        }
    }
}

impl TryFrom<String> for SigmaSpec {
    type Error = anyhow::Error;
    fn try_from(s: String) -> anyhow::Result<Self> {
        s.parse()
    }
}

impl From<SigmaSpec> for String {
    fn from(s: SigmaSpec) -> String {
        s.to_string()
    }
}

/// Largest tolerated clipped negative mass fraction for `sqrt-det`.
pub const SQRT_DET_CLIP: f64 = 1e-6;

impl SigmaSpec {
    /// `1 + cos(2 pi x1) / 2`.
    pub fn standard_trig() -> Self {
        SigmaSpec::Trig { mean: 1.0, terms: vec![TrigTerm { k: (1, 0), cos_amp: 0.5, sin_amp: 0.0 }] }
    }

    pub fn build(&self, lattice: &Lattice, grid: TimeGrid) -> anyhow::Result<Heterogeneity> {
        Ok(match self {
            SigmaSpec::Constant(c) => Heterogeneity::constant(lattice, *c),
            SigmaSpec::Trig { mean, terms } => Heterogeneity::trig(lattice, *mean, terms)?,
            SigmaSpec::SqrtDet(path) => {
                let (rho0, _) = read_field(path)?;
                if rho0.lattice() != lattice {
                    bail!("{} holds a field with N = {}, expected {}", path.display(), rho0.lattice().n(), lattice.n());
                }
                Heterogeneity::sqrt_deterministic(&deterministic_ks(&rho0, grid)?, SQRT_DET_CLIP)?
            }
        })
    }
}

/// Every numeric parameter of a run. Flags override values read from a JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    pub n: usize,
    pub t_end: f64,
    pub steps: usize,
    pub deltas: Vec<f64>,
    pub eps: f64,
    pub samples: usize,
    pub seed: u64,
    pub sigma: SigmaSpec,
    pub rule: DuhamelRule,
    pub out: PathBuf,
    /// Studies run by `run-all`; empty means none.
    pub studies: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: "run".into(),
            n: 16,
            t_end: 0.1,
            steps: 20,
            deltas: vec![0.25],
            eps: 0.05,
            samples: 100,
            seed: 1,
            sigma: SigmaSpec::standard_trig(),
            rule: DuhamelRule::LeftPoint,
            out: PathBuf::from("out"),
            studies: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Checks `1/delta <= N` for every delta, `steps >= 1` and `eps in (0, 1)`.
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.n == 0 {
            bail!("N must be positive");
        }
        if self.steps == 0 {
            bail!("steps must be at least 1");
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            bail!("T must be positive, got {}", self.t_end);
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            bail!("eps must lie in (0, 1), got {}", self.eps);
        }
        for &d in &self.deltas {
            if !(d > 0.0) || 1.0 / d > self.n as f64 + 1e-12 {
                bail!("delta = {d} needs 1/delta <= N = {}", self.n);
            }
        }
        Ok(())
    }

    pub fn lattice(&self) -> anyhow::Result<Lattice> {
        Ok(Lattice::new(self.n)?)
    }

    pub fn grid(&self) -> anyhow::Result<TimeGrid> {
        Ok(TimeGrid::new(self.t_end, self.steps)?)
    }
}

/// Caps the global rayon pool at `KS_PARA_THREADS` threads when the variable is set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("KS_PARA_THREADS") {
        let n: usize = v.parse().with_context(|| format!("KS_PARA_THREADS = {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}
