//! Batch front end: configuration, job orchestration and the command-line surface.

pub mod config;
pub mod jobs;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use config::RunConfig;
use jobs::{Pipeline, SpectrumOutputs};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_JOB_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "openbaker", version, about = "Resonance spectra and transport of quantized open baker's maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Configuration file (`key = value` lines).
    pub config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Concurrent jobs; overrides the environment and `run.workers`.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Remove the files of a previous run recorded in the output manifest.
    #[arg(long)]
    pub replace: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Spectra plus counts, Weyl fits and profile curves over the radii grid.
    Spectrum(RunArgs),
    /// Spectra and the `N,r,count` table.
    Count(RunArgs),
    /// Spectra and one Weyl fit per radius.
    Weyl(RunArgs),
    /// Spectra and the rescaled profile table.
    Profile(RunArgs),
    /// Toy-model spectra compared against the closed-form lattice.
    ToyCheck(RunArgs),
    /// Transmission results per (k, ϑ) and the asymptotics report.
    Transport(RunArgs),
    /// Escape grids, trapped-set dimensions and the transfer-matrix report.
    Classical(RunArgs),
    /// Checks that a run directory matches its manifest.
    Manifest {
        /// Output directory of a previous run.
        dir: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spectrum(_) => "spectrum",
            Command::Count(_) => "count",
            Command::Weyl(_) => "weyl",
            Command::Profile(_) => "profile",
            Command::ToyCheck(_) => "toy-check",
            Command::Transport(_) => "transport",
            Command::Classical(_) => "classical",
            Command::Manifest { .. } => "manifest",
        }
    }
}

fn load(args: &RunArgs) -> crate::Result<RunConfig> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    let env = std::env::var(jobs::WORKERS_ENV).ok();
    cfg.workers = jobs::resolve_workers(args.workers, env.as_deref(), cfg.workers)?;
    Ok(cfg)
}

fn run_pipeline(args: &RunArgs, pipeline: Pipeline, command: &str) -> i32 {
    let cfg = match load(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if matches!(pipeline, Pipeline::Spectrum(o) if o.toy_check) && cfg.family != crate::quantize::MapFamily::ToyDiagonal {
        eprintln!("error: toy-check needs map.family = toy");
        return EXIT_CONFIG;
    }
    if let Err(e) = jobs::prepare_output_dir(&cfg.output_dir, args.replace) {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    match jobs::run(&cfg, pipeline, command) {
        Ok(manifest) => {
            for j in manifest.failed() {
                eprintln!("job {} failed: {}", j.name, j.error.as_deref().unwrap_or(""));
            }
            println!(
                "{} jobs, {} failed, {} files in {}",
                manifest.jobs.len(),
                manifest.failed().count(),
                manifest.files.len(),
                cfg.output_dir.display()
            );
            if manifest.all_ok() {
                EXIT_OK
            } else {
                EXIT_JOB_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_JOB_FAILED
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let name = cli.command.name();
    let spectrum = |counts, weyl, profile| {
        Pipeline::Spectrum(SpectrumOutputs {
            counts,
            weyl,
            profile,
            toy_check: false,
        })
    };
    match &cli.command {
        Command::Spectrum(a) => run_pipeline(a, spectrum(true, true, true), name),
        Command::Count(a) => run_pipeline(a, spectrum(true, false, false), name),
        Command::Weyl(a) => run_pipeline(a, spectrum(false, true, false), name),
        Command::Profile(a) => run_pipeline(a, spectrum(false, false, true), name),
        Command::ToyCheck(a) => run_pipeline(
            a,
            Pipeline::Spectrum(SpectrumOutputs {
                toy_check: true,
                ..SpectrumOutputs::NONE
            }),
            name,
        ),
        Command::Transport(a) => run_pipeline(a, Pipeline::Transport, name),
        Command::Classical(a) => run_pipeline(a, Pipeline::Classical, name),
        Command::Manifest { dir } => match jobs::verify_manifest(dir) {
            Ok(check) => {
                for (label, names) in [
                    ("missing", &check.missing),
                    ("unlisted", &check.unlisted),
                    ("duplicated", &check.duplicated),
                ] {
                    for n in names {
                        println!("{label}: {n}");
                    }
                }
                if check.consistent() {
                    println!("manifest consistent");
                    EXIT_OK
                } else {
                    EXIT_JOB_FAILED
                }
            }
            Err(e @ Error::Config(_)) | Err(e @ Error::Json(_)) | Err(e @ Error::Io(_)) => {
                eprintln!("error: {e}");
                EXIT_CONFIG
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_JOB_FAILED
            }
        },
    }
}
