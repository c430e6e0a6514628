mod commands;
mod config;
mod failure;
mod statics;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use commands::{Outcome, Output};
use config::RunConfig;
use failure::Failure;

#[derive(Parser)]
#[command(name = "glassgap", version, about = "Parisi phases, overlap barriers and spectral gaps of mean-field spin glasses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimizer flags over a β grid with bisection at flag changes.
    #[command(name = "phase_scan", alias = "phase-scan")]
    PhaseScan(Common),
    /// Search for λ* with 𝒫(λ*, q) below 𝒫(0, q) near an atom.
    Barrier(Common),
    /// Certified lower bound on the overlap rate function.
    #[command(name = "rate_curve", alias = "rate-curve")]
    RateCurve(Common),
    /// Exact gaps and all bounds over disorder seeds.
    #[command(name = "exact_gap", alias = "exact-gap")]
    ExactGap(Common),
    /// Parallel-tempering overlap histogram.
    Mcmc(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides numerics.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Caps the worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn split(self) -> (&'static str, Common) {
        match self {
            Command::PhaseScan(c) => ("phase_scan", c),
            Command::Barrier(c) => ("barrier", c),
            Command::RateCurve(c) => ("rate_curve", c),
            Command::ExactGap(c) => ("exact_gap", c),
            Command::Mcmc(c) => ("mcmc", c),
        }
    }
}

/// Applies flag overrides and fills the active command block with defaults.
fn resolve(mut cfg: RunConfig, name: &str, common: &Common) -> RunConfig {
    if let Some(s) = common.seed {
        cfg.numerics.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.numerics.threads = Some(t);
    }
    if let Some(o) = &common.out {
        cfg.output.dir = o.display().to_string();
    }
    match name {
        "phase_scan" => cfg.phase_scan = Some(cfg.phase_scan.take().unwrap_or_default()),
        "barrier" => cfg.barrier = Some(cfg.barrier.take().unwrap_or_default()),
        "rate_curve" => cfg.rate_curve = Some(cfg.rate_curve.take().unwrap_or_default()),
        "exact_gap" => cfg.exact_gap = Some(cfg.exact_gap.take().unwrap_or_default()),
        _ => cfg.mcmc = Some(cfg.mcmc.take().unwrap_or_default()),
    }
    cfg
}

fn run(name: &str, common: &Common) -> Result<Option<Failure>, Failure> {
    let cfg = resolve(RunConfig::load(&common.config)?, name, common);
    if let Some(t) = cfg.numerics.threads {
        if t == 0 {
            return Err(Failure::Config("threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().map_err(|e| Failure::Config(e.to_string()))?;
    }
    let mut out = Output::new(PathBuf::from(&cfg.output.dir))?;
    let result = match name {
        "phase_scan" => commands::phase_scan(&cfg, &mut out),
        "barrier" => commands::barrier(&cfg, &mut out),
        "rate_curve" => commands::rate_curve(&cfg, &mut out),
        "exact_gap" => commands::exact_gap(&cfg, &mut out),
        _ => commands::mcmc(&cfg, &mut out),
    };
    let (outcome, hard) = match result {
        Ok(o) => (o, None),
        Err(e) => (Outcome { summary: serde_json::Value::Null, failure: None }, Some(e)),
    };
    let failure = hard.or(outcome.failure);
    let manifest = json!({
        "tool": "glassgap",
        "version": env!("CARGO_PKG_VERSION"),
        "command": name,
        "config": cfg,
        "outputs": out.files.clone(),
        "status": failure.as_ref().map_or_else(|| "ok".to_string(), |f| f.to_string()),
        "exit_code": failure.as_ref().map_or(0, |f| f.exit_code()),
        "summary": outcome.summary,
    });
    out.write_json("manifest.json", &manifest)?;
    Ok(failure)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = cli.command.split();
    match run(name, &common) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(f)) | Err(f) => {
            eprintln!("glassgap {name}: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
