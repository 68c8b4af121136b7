//! `kme run <experiment> [flags]`: runs one experiment and writes a JSON
//! summary plus CSV tables.
//!
//! Exit codes: 0 success, 1 a checked invariant failed (or the numerics
//! broke down), 2 usage error, 3 I/O error.

mod error;
mod experiments;
mod output;
mod params;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use error::CliError;
use experiments::Outcome;
use params::*;

#[derive(Parser)]
#[command(name = "kme", version, about = "Kernel mean embedding contrastive-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run(Run),
}

#[derive(Args)]
struct Run {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    experiment: Experiment,
}

#[derive(Args)]
struct Common {
    /// Seed for every random stream in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for the JSON summary and CSV tables.
    #[arg(long, global = true, env = "KME_OUTPUT_DIR")]
    output: Option<PathBuf>,
    /// Worker threads for independent trials (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Experiment {
    /// KME with one point per item against CLIP plus a constant.
    Prop2(Prop2Params),
    /// Log-ratio integral estimate on random finite measures.
    Lemma8(Lemma8Params),
    /// Loss gap of perturbed exp-PMI tables.
    Thm3(Thm3Params),
    /// Finite-latent KME construction.
    Thm4(Thm4Params),
    /// Monte-Carlo discretization rate.
    Thm5(Thm5Params),
    /// Adversarial CLIP search on the two-mixture model.
    Thm6(Thm6Params),
    /// Two-point KME construction for the two-mixture model.
    Thm7(Thm7Params),
    /// Train one embedding table.
    Train(TrainParams),
    /// Point-set size sweep.
    Ablation(AblationParams),
    /// Top-k retrieval of a trained table against exp-PMI.
    Retrieval(RetrievalParams),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    experiment: Option<String>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    workers: Option<usize>,
    #[serde(default = "empty_table")]
    params: toml::Table,
}

fn empty_table() -> toml::Table {
    toml::Table::new()
}

fn read_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn file_params<P: for<'de> Deserialize<'de> + Default>(file: Option<&ConfigFile>) -> Result<P, CliError> {
    match file {
        None => Ok(P::default()),
        Some(f) => f
            .params
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config params: {e}"))),
    }
}

impl Experiment {
    fn name(&self) -> &'static str {
        match self {
            Experiment::Prop2(_) => "prop2",
            Experiment::Lemma8(_) => "lemma8",
            Experiment::Thm3(_) => "thm3",
            Experiment::Thm4(_) => "thm4",
            Experiment::Thm5(_) => "thm5",
            Experiment::Thm6(_) => "thm6",
            Experiment::Thm7(_) => "thm7",
            Experiment::Train(_) => "train",
            Experiment::Ablation(_) => "ablation",
            Experiment::Retrieval(_) => "retrieval",
        }
    }

    /// Layers the config file under the flags and runs the experiment.
    fn run(self, file: Option<&ConfigFile>, seed: u64) -> Result<(serde_json::Value, Outcome), CliError> {
        macro_rules! dispatch {
            ($p:ident, $f:path) => {{
                let p = $p.overlay(file_params(file)?);
                let out = $f(&p, seed)?;
                Ok((p.to_json(), out))
            }};
        }
        match self {
            Experiment::Prop2(p) => dispatch!(p, experiments::prop2),
            Experiment::Lemma8(p) => dispatch!(p, experiments::lemma8),
            Experiment::Thm3(p) => dispatch!(p, experiments::thm3),
            Experiment::Thm4(p) => dispatch!(p, experiments::thm4),
            Experiment::Thm5(p) => dispatch!(p, experiments::thm5),
            Experiment::Thm6(p) => dispatch!(p, experiments::thm6),
            Experiment::Thm7(p) => dispatch!(p, experiments::thm7),
            Experiment::Train(p) => dispatch!(p, experiments::run_train),
            Experiment::Ablation(p) => dispatch!(p, experiments::ablation),
            Experiment::Retrieval(p) => dispatch!(p, experiments::retrieval),
        }
    }
}

fn configure_workers(workers: Option<usize>) -> Result<(), CliError> {
    let Some(n) = workers else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Usage("--workers must be positive".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("worker pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    eprintln!("note: built without the parallel feature; --workers {n} ignored");
    Ok(())
}

fn run(cmd: Run) -> Result<bool, CliError> {
    let started = Instant::now();
    let Run { common, experiment } = cmd;
    let file = common.config.as_deref().map(read_config).transpose()?;
    let name = experiment.name();
    if let Some(declared) = file.as_ref().and_then(|f| f.experiment.as_deref()) {
        if declared != name {
            return Err(CliError::Usage(format!("config is for experiment {declared:?}, not {name:?}")));
        }
    }
    let seed = common.seed.or(file.as_ref().and_then(|f| f.seed)).unwrap_or(0);
    let output = common
        .output
        .or(file.as_ref().and_then(|f| f.output.clone()))
        .unwrap_or_else(|| PathBuf::from("results"));
    configure_workers(common.workers.or(file.as_ref().and_then(|f| f.workers)))?;

    let (params, outcome) = experiment.run(file.as_ref(), seed)?;
    let holds = if outcome.checks.is_empty() {
        None
    } else {
        Some(outcome.checks.iter().all(|c| c.1))
    };
    let summary = serde_json::json!({
        "experiment": name,
        "params": params,
        "seed": seed,
        "results": outcome.results,
        "checks": outcome.checks.iter().map(|(n, h)| serde_json::json!({ "invariant": n, "holds": h })).collect::<Vec<_>>(),
        "holds": holds,
        "wall_time": started.elapsed().as_secs_f64(),
    });
    for path in output::write_all(&output, name, &summary, &outcome.tables)? {
        println!("{}", path.display());
    }
    for (invariant, ok) in &outcome.checks {
        if !ok {
            eprintln!("assertion failed: {invariant}");
        }
    }
    Ok(holds.unwrap_or(true))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(cmd) => match run(cmd) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => {
                eprintln!("{e}");
                e.exit_code()
            }
        },
    }
}
