//! `faultlens` — fault classifier + attribution pipeline over process time
//! series.
//!
//! Stages are separate subcommands sharing one output directory; `repro`
//! chains them all. Config comes from a TOML experiment file (`--config`);
//! without one, the built-in simulator experiment runs. Flags override the
//! config for quick iteration. Log verbosity via `RUST_LOG` (env_logger).
//!
//! On failure the exit code is nonzero and the last stderr line is a JSON
//! object (`{"error": ..., "prerequisite": ...}`) for machine consumption.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use faultlens::pipeline::{
    self, cmd_analyze, cmd_attribute, cmd_ingest, cmd_report, cmd_repro, cmd_simulate, cmd_train,
    ExperimentConfig, PipelineError,
};

#[derive(Parser)]
#[command(
    name = "faultlens",
    version,
    about = "LSTM fault classification on process time series, explained with integrated gradients and Shapley values"
)]
struct Cli {
    /// Experiment config (TOML). Defaults to the built-in simulator
    /// experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for all pipeline artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override analysis.top_k.
    #[arg(long, global = true)]
    k: Option<usize>,

    /// Override attribution methods, e.g. `ig,shap`.
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<String>>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled dataset from the built-in controlled process.
    Simulate,
    /// Ingest TEP-style CSV files into a dataset.
    Ingest,
    /// Train the LSTM classifier on the dataset.
    Train,
    /// Attribute post-fault windows with the configured methods.
    Attribute,
    /// Aggregate, normalize, compare and localize attributions.
    Analyze,
    /// Emit the SVG/CSV report bundle.
    Report,
    /// Run the whole chain and print a per-fault summary table.
    Repro,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default_simulator(42),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(k) = cli.k {
        cfg.analysis.top_k = k;
    }
    if let Some(methods) = &cli.methods {
        cfg.attribution.methods = methods.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    match cli.command {
        Command::Simulate => {
            let dir = cmd_simulate(&cfg, out)?;
            println!("dataset written to {}", dir.display());
        }
        Command::Ingest => {
            let dir = cmd_ingest(&cfg, out)?;
            println!("dataset written to {}", dir.display());
        }
        Command::Train => {
            let summary = cmd_train(&cfg, out)?;
            println!(
                "model written to {} (holdout accuracy {:.3} on {} windows)",
                pipeline::model_path(out).display(),
                summary.accuracy,
                summary.num_holdout_windows
            );
        }
        Command::Attribute => {
            let summary = cmd_attribute(&cfg, out)?;
            println!(
                "{} attribution maps written for {} classes ({})",
                summary.num_maps,
                summary.classes.len(),
                summary.methods.join("+"),
            );
        }
        Command::Analyze => {
            let results = cmd_analyze(&cfg, out)?;
            for class in &results.classes {
                let overlap = class
                    .agreement
                    .as_ref()
                    .map(|a| format!("{:.2}", a.top_k_overlap))
                    .unwrap_or_else(|| "-".into());
                println!("{}: ig/shap top-{} overlap {}", class.fault_class, results.top_k, overlap);
            }
        }
        Command::Report => {
            let summary = cmd_report(&cfg, out)?;
            for f in &summary.files {
                println!("wrote {f}");
            }
        }
        Command::Repro => {
            let summary = cmd_repro(&cfg, out)?;
            print!("{}", summary.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let machine = match &err {
                PipelineError::MissingArtifact { path, produced_by } => serde_json::json!({
                    "error": err.to_string(),
                    "missing": path.display().to_string(),
                    "prerequisite": produced_by,
                }),
                other => serde_json::json!({ "error": other.to_string() }),
            };
            eprintln!("{machine}");
            ExitCode::FAILURE
        }
    }
}
