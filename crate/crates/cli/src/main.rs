//! `focalmap`: run the imaging experiments stage by stage or end to end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use focalmap_core::config::{load_config, preset, ExperimentConfig, PRESET_NAMES};
use focalmap_core::pipeline::{self, RunManifest};
use focalmap_core::Error;

#[derive(Parser)]
#[command(name = "focalmap", version, about = "Learn Green's functions and their focal points from array data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the true and homogeneous sensing matrices and the data ensemble.
    Simulate(Common),
    /// Learn the dictionary from the simulated data.
    Learn(Common),
    /// Recover the focal points of the learned columns.
    Localize(Common),
    /// Form images of test sources with the true, homogeneous and learned matrices.
    Image(Common),
    /// Run every stage into a fresh output directory.
    Pipeline(Common),
    /// Write figure data and the run summary.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
    preset: Option<String>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; defaults to the configured one, then `runs/<name>-<seed>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf), Error> {
        let (mut cfg, name) = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
                (load_config(path)?, stem.unwrap_or_else(|| "run".into()))
            }
            (None, Some(p)) => (preset(p)?, p.clone()),
            (None, None) => (preset("desk")?, "desk".into()),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(format!("{name}-{}", cfg.seed)));
        Ok((cfg, out))
    }
}

fn print_manifest(m: &RunManifest, out: &Path) {
    for s in &m.stages {
        println!("{:<9} {:>9.2}s {}", s.name, s.seconds, if s.ok { "ok" } else { "FAILED" });
    }
    println!("{} files in {}", m.files.len(), out.display());
}

/// A failure with the stage it happened in.
struct Failure {
    stage: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let stage = e.stage().unwrap_or("setup").to_string();
        let message = match e {
            Error::Stage { source, .. } => source.to_string(),
            other => other.to_string(),
        };
        Failure { stage, message }
    }
}

impl Failure {
    fn new(stage: &str, message: impl ToString) -> Self {
        Failure {
            stage: stage.into(),
            message: message.to_string(),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (cmd, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Learn(c) => ("learn", c),
        Command::Localize(c) => ("localize", c),
        Command::Image(c) => ("image", c),
        Command::Pipeline(c) => ("pipeline", c),
        Command::Report(c) => ("report", c),
    };
    let (cfg, out) = common.resolve().map_err(|e| Failure::new("config", e))?;
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new("setup", format!("thread pool: {e}")))?;
    }
    log::info!("{cmd}: config {} seed {} -> {}", &cfg.hash()[..12], cfg.seed, out.display());
    match cmd {
        "pipeline" => {
            let res = pipeline::run_pipeline(&cfg, &out)?;
            print_manifest(&res.manifest, &out);
            println!("{}", serde_json::to_string_pretty(&res.summary).map_err(|e| Failure::new("report", e))?);
        }
        "report" => {
            let summary = pipeline::stages::report(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| Failure::new("report", e))?);
        }
        _ => {
            cfg.validate().map_err(|e| Failure::new("config", e))?;
            let m = match cmd {
                "simulate" => pipeline::stages::simulate(&cfg, &out)?,
                "learn" => pipeline::stages::learn(&cfg, &out)?,
                "localize" => pipeline::stages::localize(&cfg, &out)?,
                _ => pipeline::stages::image(&cfg, &out)?,
            };
            print_manifest(&m, &out);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("focalmap: stage `{}` failed: {}", f.stage, f.message);
            ExitCode::from(2)
        }
    }
}
