//! `pdwols`: fit penalized dynamic WOLS models, estimate multi-stage
//! regimes, apply them to new patients, and run simulation studies.

mod error;
mod job;
mod manifest;
mod model;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use pdwols_sim::ScenarioConfig;

use error::{CliError, Result};
use job::{EstimatorArgs, Job};
use manifest::{sha256_file, RunManifest, MANIFEST_FILE};

#[derive(Parser)]
#[command(name = "pdwols", version, about = "Penalized dynamic WOLS for dynamic treatment regimes")]
struct Cli {
    /// Worker threads for replicates and CV folds
    #[arg(long, global = true, env = "PDWOLS_JOBS")]
    jobs: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one stage: penalized fit, selected λ and coefficient table
    Fit {
        /// Stage CSV with columns a, y and covariates
        #[arg(long)]
        data: PathBuf,
        /// Model specification (TOML)
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        estimator: EstimatorArgs,
        #[arg(long, short, default_value = "pdwols-out")]
        out: PathBuf,
    },
    /// Cross-validation error curve for one stage
    CvCurve {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        estimator: EstimatorArgs,
        #[arg(long, short, default_value = "pdwols-out")]
        out: PathBuf,
    },
    /// Estimate a multi-stage regime by backward recursion
    Dtr {
        /// One CSV per stage (stage 1 first), or a single long-format file with --long
        #[arg(long, num_args = 1.., required = true)]
        data: Vec<PathBuf>,
        /// Treat the single data file as long format (stage, id, a, y, covariates)
        #[arg(long)]
        long: bool,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        estimator: EstimatorArgs,
        #[arg(long, short, default_value = "pdwols-out")]
        out: PathBuf,
    },
    /// Apply a saved regime to new patients
    Decide {
        /// regime.json written by `dtr`
        #[arg(long)]
        regime: PathBuf,
        /// Covariate CSV (a treatment column, if present, is ignored)
        #[arg(long)]
        data: PathBuf,
        /// 1-based stage whose rule to apply
        #[arg(long, default_value_t = 1)]
        stage: usize,
        #[arg(long, short, default_value = "pdwols-out")]
        out: PathBuf,
    },
    /// Run a replicated simulation study
    Simulate {
        /// Scenario configuration (TOML, or JSON by extension)
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long, short, default_value = "pdwols-out")]
        out: PathBuf,
    },
    /// Re-run a manifest and check that every output is reproduced
    Replay {
        /// manifest.json from an earlier run
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, short, default_value = "pdwols-replay")]
        out: PathBuf,
    },
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(p).map_err(|e| CliError::parse(format!("{}: {e}", p.display())))
}

fn resolve(command: Command) -> Result<(Job, PathBuf)> {
    Ok(match command {
        Command::Fit { data, model, estimator, out } => {
            let estimator = EstimatorArgs { weights_file: estimator.weights_file.as_deref().map(absolute).transpose()?, ..estimator };
            estimator.validate()?;
            (Job::Fit { data: absolute(&data)?, model: absolute(&model)?, estimator }, out)
        }
        Command::CvCurve { data, model, estimator, out } => {
            let estimator = EstimatorArgs { weights_file: estimator.weights_file.as_deref().map(absolute).transpose()?, ..estimator };
            estimator.validate()?;
            (Job::CvCurve { data: absolute(&data)?, model: absolute(&model)?, estimator }, out)
        }
        Command::Dtr { data, long, model, estimator, out } => {
            estimator.validate()?;
            if estimator.weights_file.is_some() {
                return Err(CliError::config("weights-file: not supported by dtr"));
            }
            let data = data.iter().map(|p| absolute(p)).collect::<Result<_>>()?;
            (Job::Dtr { data, long, model: absolute(&model)?, estimator }, out)
        }
        Command::Decide { regime, data, stage, out } => {
            (Job::Decide { regime: absolute(&regime)?, data: absolute(&data)?, stage }, out)
        }
        Command::Simulate { config, out } => {
            let scenario = ScenarioConfig::load(&config)?;
            (Job::Simulate { config: absolute(&config)?, scenario }, out)
        }
        Command::Replay { .. } => unreachable!("handled separately"),
    })
}

fn run_job(job: Job, out: &Path, argv: Vec<String>) -> Result<RunManifest> {
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let mut inputs = std::collections::BTreeMap::new();
    for p in job.inputs() {
        inputs.insert(p.display().to_string(), sha256_file(&p)?);
    }
    let files = job.execute(out)?;
    let mut outputs = std::collections::BTreeMap::new();
    for f in files {
        let digest = sha256_file(&out.join(&f))?;
        outputs.insert(f, digest);
    }
    let manifest = RunManifest {
        command: job.name().to_string(),
        argv,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: job.seeds(),
        threads: rayon::current_num_threads(),
        job,
        inputs,
        outputs,
        started_unix,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
    };
    manifest.write(out)?;
    Ok(manifest)
}

fn replay(path: &Path, out: &Path, argv: Vec<String>) -> Result<()> {
    let old = RunManifest::load(path)?;
    let changed = old.changed_inputs()?;
    if !changed.is_empty() {
        return Err(CliError::config(format!("inputs changed since the recorded run: {}", changed.join(", "))));
    }
    let new = run_job(old.job.clone(), out, argv)?;
    let differing: Vec<&String> = old.outputs.iter().filter(|(k, v)| new.outputs.get(*k) != Some(v)).map(|(k, _)| k).collect();
    if !differing.is_empty() || new.outputs.len() != old.outputs.len() {
        return Err(CliError::numeric(format!("replay did not reproduce: {:?}", differing)));
    }
    println!("reproduced {} outputs in {}", new.outputs.len(), out.display());
    Ok(())
}

fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::config("jobs: must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("jobs: {e}")))?;
    }
    match cli.command {
        Command::Replay { manifest, out } => replay(&manifest, &out, argv),
        command => {
            let (job, out) = resolve(command)?;
            let m = run_job(job, &out, argv)?;
            println!("wrote {} files and {MANIFEST_FILE} to {}", m.outputs.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let argv = std::env::args().collect();
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
