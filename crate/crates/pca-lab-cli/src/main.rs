use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pca_lab::harness::{run, ExperimentConfig, ExperimentId, SeedSpec};
use pca_lab::io::parse_seeds;
use pca_lab::Error;

#[derive(Parser)]
#[command(name = "pca-lab", version, about = "Seeded experiments for black-box deflation PCA")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and write CSV + JSON reports.
    Run(RunArgs),
    /// List experiment ids.
    List,
    /// Print what an experiment measures and which flags it reads.
    Describe { experiment: String },
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long, value_delimiter = ',')]
    dim: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long)]
    eps: Option<f64>,
    /// Per-call delta.
    #[arg(long)]
    delta: Option<f64>,
    /// Per-call gamma.
    #[arg(long)]
    gamma: Option<f64>,
    /// Target Delta.
    #[arg(long = "Delta")]
    big_delta: Option<f64>,
    /// Target Gamma.
    #[arg(long = "Gamma")]
    big_gamma: Option<f64>,
    /// `7`, `1..20` or a comma list. Defaults to $PCA_LAB_SEED, else 0.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory. Without it the CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Record per-row wall time in the `ms` column.
    #[arg(long)]
    timing: bool,
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("pca-lab: {msg}");
    ExitCode::from(2)
}

fn build_config(a: RunArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &a.config {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            ExperimentConfig::from_toml(&s)?
        }
        None => {
            let id: ExperimentId = a
                .experiment
                .as_deref()
                .ok_or_else(|| Error::InvalidInput("--experiment or --config is required".into()))?
                .parse()?;
            let seed = match std::env::var("PCA_LAB_SEED") {
                Ok(s) => s.trim().parse().map_err(|_| Error::Parse(format!("PCA_LAB_SEED = {s:?} is not a seed")))?,
                Err(_) => 0,
            };
            ExperimentConfig::new(id, vec![seed])
        }
    };
    if let Some(e) = a.experiment {
        cfg.experiment = e;
    }
    if !a.dim.is_empty() {
        cfg.dims = a.dim;
    }
    if !a.k.is_empty() {
        cfg.ks = a.k;
    }
    cfg.eps = a.eps.or(cfg.eps);
    cfg.delta = a.delta.or(cfg.delta);
    cfg.gamma = a.gamma.or(cfg.gamma);
    cfg.big_delta = a.big_delta.or(cfg.big_delta);
    cfg.big_gamma = a.big_gamma.or(cfg.big_gamma);
    if let Some(s) = a.seeds {
        cfg.seeds = SeedSpec::List(parse_seeds(&s)?);
    }
    if let Some(o) = a.out {
        cfg.out = Some(o.display().to_string());
    }
    cfg.jobs = a.jobs.or(cfg.jobs);
    cfg.timing |= a.timing;
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::List => {
            for e in ExperimentId::ALL {
                println!("{}", e.name());
            }
            ExitCode::SUCCESS
        }
        Cmd::Describe { experiment } => match experiment.parse::<ExperimentId>() {
            Ok(e) => {
                println!("{}: {}", e.name(), e.describe());
                ExitCode::SUCCESS
            }
            Err(e) => usage(e),
        },
        Cmd::Run(a) => {
            let cfg = match build_config(a) {
                Ok(c) => c,
                Err(e) => return usage(e),
            };
            let report = match run(&cfg) {
                Ok(r) => r,
                Err(e @ (Error::InvalidInput(_) | Error::Parse(_) | Error::RegimeRejected(_))) => return usage(e),
                Err(e) => {
                    eprintln!("pca-lab: {e}");
                    return ExitCode::from(1);
                }
            };
            match &cfg.out {
                Some(dir) => match report.write(std::path::Path::new(dir)) {
                    Ok((csv, js)) => println!("wrote {} and {}", csv.display(), js.display()),
                    Err(e) => {
                        eprintln!("pca-lab: {e}");
                        return ExitCode::from(1);
                    }
                },
                None => print!("{}", report.csv()),
            }
            let s = &report.summary;
            eprintln!(
                "{}: {} rows, {} passed, {} failed, {} expected-fail rows",
                s.experiment, s.rows, s.passed, s.failed, s.expected_fail_rows
            );
            for sk in &s.skipped {
                eprintln!("skipped: {sk}");
            }
            if s.all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
