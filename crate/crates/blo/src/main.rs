use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blo::checks::{run_all, CheckScale, EXACT_STORED};
use blo::config::{parse_estimator, ConfigError, Experiment, ExperimentConfig};
use blo::experiments::{run_fewshot, run_quadratic, run_sweep, run_synthetic};
use blo::output::{summary_path, write_runs, write_sweep, write_synthetic, write_synthetic_summary};

#[derive(Parser)]
#[command(name = "blo", version, about = "Bilevel-optimization gradient estimator experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-task counterexample with FO and UFO outer loops.
    Synthetic(Common),
    /// Outer loop on random diagonal quadratics.
    Quadratic(Common),
    /// Outer loop on synthetic few-shot softmax regression.
    FewshotToy(Common),
    /// Estimator cost and error table over estimators, r and q.
    Sweep(Common),
    /// Run every property suite; exit status 0 iff all pass.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` file overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed; repeat for several runs.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// fo, exact-stored, exact-rerun, exact-checkpointed[:n] or ufo[:q]
    #[arg(long)]
    estimator: Option<String>,
    /// UFO correction probability
    #[arg(long)]
    q: Option<f64>,
    /// Outer iterations
    #[arg(long)]
    tau: Option<usize>,
    /// Inner steps
    #[arg(long)]
    r: Option<usize>,
    /// Inner step size
    #[arg(long)]
    alpha: Option<f64>,
}

fn load(experiment: Experiment, c: &Common) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(experiment, p)?,
        None => ExperimentConfig::defaults(experiment),
    };
    if let Some(q) = c.q {
        cfg.set("q", &q.to_string())?;
    }
    if let Some(e) = &c.estimator {
        cfg.estimator = parse_estimator(e, cfg.q).map_err(|reason| ConfigError::Value {
            key: "estimator".into(),
            value: e.clone(),
            reason,
        })?;
    }
    if let Some(t) = c.tau {
        cfg.tau = t;
    }
    if let Some(r) = c.r {
        cfg.r = r;
    }
    if let Some(a) = c.alpha {
        cfg.alpha = a;
    }
    if !c.seeds.is_empty() {
        cfg.seeds = c.seeds.clone();
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    Ok(cfg)
}

fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(experiment: Experiment, common: &Common) -> Result<bool, Box<dyn std::error::Error>> {
    let cfg = load(experiment, common)?;
    let out = cfg.out.as_deref();
    match experiment {
        Experiment::Synthetic => {
            let res = run_synthetic(&cfg)?;
            write_synthetic(&res, sink(out)?)?;
            match out {
                Some(p) => write_synthetic_summary(&res, sink(Some(&summary_path(p)))?)?,
                None => write_synthetic_summary(&res, io::stderr().lock())?,
            }
            Ok(true)
        }
        Experiment::Quadratic => {
            write_runs(&run_quadratic(&cfg)?, sink(out)?)?;
            Ok(true)
        }
        Experiment::FewshotToy => {
            write_runs(&run_fewshot(&cfg)?, sink(out)?)?;
            Ok(true)
        }
        Experiment::Sweep => {
            write_sweep(&run_sweep(&cfg)?, sink(out)?)?;
            Ok(true)
        }
        Experiment::Check => {
            let seed = cfg.seeds.first().copied().unwrap_or(0);
            let results = run_all(EXACT_STORED, seed, CheckScale::default());
            let mut w = sink(out)?;
            for r in &results {
                writeln!(w, "{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail)?;
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
            if !failed.is_empty() {
                eprintln!("failed suites: {}", failed.join(", "));
            }
            Ok(failed.is_empty())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, common) = match &cli.command {
        Command::Synthetic(c) => (Experiment::Synthetic, c),
        Command::Quadratic(c) => (Experiment::Quadratic, c),
        Command::FewshotToy(c) => (Experiment::FewshotToy, c),
        Command::Sweep(c) => (Experiment::Sweep, c),
        Command::Check(c) => (Experiment::Check, c),
    };
    match run(experiment, common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("blo {}: {e}", experiment.name());
            ExitCode::from(2)
        }
    }
}
