use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ks_para_cli::commands::{self, Mode};
use ks_para_cli::config::init_threads;
use ks_para_cli::io::Manifest;
use ks_para_cli::studies::{self, CountertermParams, EstimatesParams, ProductRuleParams};
use ks_para_cli::{run_all, RunConfig, SigmaSpec, Study};
use ks_para_core::enhancement::CountertermRule;
use ks_para_core::spectral::DuhamelRule;
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "ks-para", version, about = "Renormalised stochastic Keller-Segel on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run parameters. Flags override the JSON config, which overrides the defaults.
#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frequency cutoff N.
    #[arg(long = "N")]
    n: Option<usize>,
    /// Final time T.
    #[arg(long = "T")]
    t_end: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Mollifier scales, comma separated.
    #[arg(long = "delta", value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// Regularity loss eps of the C^{-eps} norms.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Noise coefficient: const:c, trig:mean;k1,k2,cos,sin;... or sqrt-det:file.
    #[arg(long)]
    sigma: Option<SigmaSpec>,
    /// Duhamel quadrature: left-point or trapezoid.
    #[arg(long, value_parser = parse_rule)]
    rule: Option<DuhamelRule>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_rule(s: &str) -> Result<DuhamelRule, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown rule {s:?}"))
}

fn parse_counterterm(s: &str) -> Result<CountertermRule, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown counterterm rule {s:?}"))
}

impl Common {
    fn file(&self) -> anyhow::Result<serde_json::Map<String, serde_json::Value>> {
        let Some(path) = &self.config else { return Ok(Default::default()) };
        RunConfig::from_file(path)?;
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// `flag`, else the config entry `key`, else `None`.
    fn pick<T: DeserializeOwned>(&self, key: &str, flag: Option<T>) -> anyhow::Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file()?.remove(key) {
            Some(v) => Ok(Some(serde_json::from_value(v).with_context(|| format!("config entry {key}"))?)),
            None => Ok(None),
        }
    }

    fn run_config(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let s = self.clone();
        c.n = s.n.unwrap_or(c.n);
        c.t_end = s.t_end.unwrap_or(c.t_end);
        c.steps = s.steps.unwrap_or(c.steps);
        c.deltas = s.deltas.unwrap_or(c.deltas);
        c.eps = s.eps.unwrap_or(c.eps);
        c.samples = s.samples.unwrap_or(c.samples);
        c.seed = s.seed.unwrap_or(c.seed);
        c.sigma = s.sigma.unwrap_or(c.sigma);
        c.rule = s.rule.unwrap_or(c.rule);
        c.out = s.out.unwrap_or(c.out);
        c.validate()?;
        Ok(c)
    }

    fn out(&self) -> anyhow::Result<PathBuf> {
        Ok(self.pick("out", self.out.clone())?.unwrap_or_else(|| PathBuf::from("out")))
    }
}

#[derive(Subcommand)]
enum Command {
    /// One sample of rho^delta by the direct and/or paracontrolled route.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "both")]
        mode: Mode,
        /// Initial density (field container); defaults to 1 + cos(2 pi x1)/2.
        #[arg(long)]
        rho0: Option<PathBuf>,
        /// continuous or discrete.
        #[arg(long, value_parser = parse_counterterm, default_value = "discrete")]
        counterterm: CountertermRule,
    },
    /// Counterterm norm against log(1/delta), with N = 2/delta.
    Counterterm {
        #[command(flatten)]
        common: Common,
    },
    /// Second-moment estimates of the enhancement diagrams.
    Enhance {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_counterterm, default_value = "discrete")]
        counterterm: CountertermRule,
    },
    /// Numerical checks of the summation and convolution estimates.
    VerifyEstimates {
        /// Estimate id or "all".
        #[arg(long, default_value = "all")]
        lemma: String,
        /// Largest frequency cap; the check also runs at half of it.
        #[arg(long, default_value_t = 64)]
        max_freq: i64,
        /// Report CSV path or output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Norm report for the last snapshot of a field file.
    Besov {
        field: PathBuf,
        /// Hölder-Besov exponents, comma separated.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "-1.05,-0.05,0")]
        alpha: Vec<f64>,
        /// Optional CSV report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The deterministic Keller-Segel flow.
    Deterministic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho0: Option<PathBuf>,
    },
    /// The one-dimensional product-rule identity on a random mean-free field.
    ProductRule {
        #[arg(long = "N", default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Runs the listed studies and prints a PASS/FAIL summary.
    RunAll {
        #[command(flatten)]
        common: Common,
        /// Study ids, comma separated, or "all". Defaults to the config list, else all.
        #[arg(long, value_delimiter = ',')]
        studies: Option<Vec<String>>,
    },
}

fn report(m: &Manifest) {
    println!("{} finished in {:.2} s", m.command, m.wall_time_seconds);
    for o in &m.outputs {
        println!("  wrote {}", o.display());
    }
}

fn report_outcome(o: &ks_para_cli::Outcome) {
    println!("{}: {} ({})", o.study, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    for a in &o.artifacts {
        println!("  wrote {}", a.display());
    }
}

fn study_dir(out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Simulate { common, mode, rho0, counterterm } => {
            report(&commands::simulate(&common.run_config()?, mode, rho0.as_deref(), counterterm)?);
        }
        Command::Deterministic { common, rho0 } => report(&commands::deterministic(&common.run_config()?, rho0.as_deref())?),
        Command::Enhance { common, counterterm } => report(&commands::enhance(&common.run_config()?, counterterm)?),
        Command::Counterterm { common } => {
            let d = CountertermParams::default();
            let p = CountertermParams {
                sigma: common.pick("sigma", common.sigma.clone())?.unwrap_or(d.sigma),
                deltas: common.pick("deltas", common.deltas.clone())?.unwrap_or(d.deltas),
                t_end: common.pick("t_end", common.t_end)?.unwrap_or(d.t_end),
                steps: common.pick("steps", common.steps)?.unwrap_or(d.steps),
                eps: common.pick("eps", common.eps)?.unwrap_or(d.eps),
                ..d
            };
            let out = common.out()?;
            study_dir(&out)?;
            let o = studies::counterterm_study(&p, &out)?;
            report_outcome(&o);
        }
        Command::VerifyEstimates { lemma, max_freq, out } => {
            let lemmas = if lemma == "all" { EstimatesParams::default().lemmas } else { vec![lemma] };
            let is_csv = out.extension().is_some_and(|e| e == "csv");
            let dir = if is_csv { out.parent().map(Path::to_path_buf).unwrap_or_default() } else { out.clone() };
            let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
            study_dir(&dir)?;
            let o = studies::estimates_study(&EstimatesParams { lemmas, max_freq, ..Default::default() }, &dir)?;
            if is_csv && out != dir.join("report.csv") {
                std::fs::rename(dir.join("report.csv"), &out)?;
            }
            report_outcome(&o);
            return Ok(o.pass);
        }
        Command::Besov { field, alpha, out } => {
            for (q, v) in commands::besov(&field, &alpha, out.as_deref())? {
                println!("{q:<16} {v:.6e}");
            }
        }
        Command::ProductRule { n, seed, out } => {
            study_dir(&out)?;
            let o = studies::product_rule_study(&ProductRuleParams { n, seed }, &out)?;
            report_outcome(&o);
            return Ok(o.pass);
        }
        Command::RunAll { common, studies } => {
            let names: Vec<String> = match common.pick("studies", studies)? {
                Some(v) => v,
                None => vec!["all".into()],
            };
            let list: Vec<Study> = if names.iter().any(|n| n == "all") {
                Study::ALL.to_vec()
            } else {
                names.iter().map(|n| n.parse()).collect::<anyhow::Result<_>>()?
            };
            let seed = common.pick("seed", common.seed)?.unwrap_or(1);
            let bundle = run_all(&list, &common.out()?, seed)?;
            for o in &bundle.outcomes {
                report_outcome(o);
            }
            return Ok(bundle.pass());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
