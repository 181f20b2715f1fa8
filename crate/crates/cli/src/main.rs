mod config;
mod output;
mod report;
mod studies;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::{ConfigError, ExperimentConfig};
use output::{Manifest, Versions};

#[derive(Parser)]
#[command(name = "fissure", version, about = "Two-scale fissured-media experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study declared in a config file.
    Run {
        config: PathBuf,
        /// Output root (default: `FISSURE_OUT`, then the config's `output`, then `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for independent (eps, sample) jobs.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Merge finished runs under a directory into `summary.json` and `plots/*.dat`.
    Report { dir: PathBuf },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(#[from] fissure_core::Error),
    #[error(transparent)]
    Report(#[from] report::ReportError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            _ => 1,
        }
    }
}

fn output_root(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os("FISSURE_OUT").map(PathBuf::from))
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(config: &Path, out: Option<PathBuf>, workers: Option<usize>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let resolved = cfg.resolved();
    let hash = output::config_hash(&resolved);
    let dir = output::run_dir(&output_root(out, &cfg), cfg.study.name(), &hash);

    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.unwrap_or(0)).build()?;
    let start = Instant::now();
    let outcome = pool.install(|| studies::run(&cfg))?;
    let manifest = Manifest {
        study: cfg.study.name().into(),
        config_hash: hash,
        seed: cfg.seed,
        versions: Versions::current(),
        workers: pool.current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
        pass: outcome.pass,
        summary: outcome.summary.clone(),
        artifacts: Vec::new(),
    };
    let manifest = output::write_run(&dir, &resolved, manifest, &outcome)?;
    println!(
        "{} {} in {:.1}s -> {}",
        manifest.study,
        if manifest.pass { "passed" } else { "finished with failing verdict" },
        manifest.wall_time_s,
        dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, workers } => run(&config, out, workers),
        Command::Report { dir } => report::report(&dir).map_err(Failure::from).map(|r| {
            println!("{} section(s), {} plot file(s) -> {}", r.sections, r.plots.len(), r.path.display());
        }),
        Command::Validate { config } => ExperimentConfig::load(&config).map_err(Failure::from).map(|cfg| {
            let hash = output::config_hash(&cfg.resolved());
            println!("ok: {} study, config hash {}", cfg.study.name(), &hash[..8]);
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
