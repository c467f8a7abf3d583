//! Command-line driver for the symflow pipeline.
//!
//! Every stage reads an [`ExperimentConfig`] (a JSON file given with
//! `--config`, or the defaults) and writes a run directory under `--out`.

pub mod config;
pub mod rundir;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ExperimentConfig, Recipe};
pub use rundir::{CliError, CliResult, Layout};

#[derive(Debug, Parser)]
#[command(name = "symflow", version, about = "Learn oracle-preserving symmetry generators in latent space")]
pub struct Cli {
    /// Experiment configuration (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root; each stage writes a subdirectory.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Reseeds the data split and every stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Subsample MNIST to 2000 training and 500 test images.
    #[arg(long, global = true)]
    pub desk: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-pixel max and mean maps of the training images.
    Pixstats,
    /// Train the autoencoder and export latents.
    TrainAe,
    /// Train the latent classifier (requires train-ae).
    TrainClassifier,
    /// Train symmetry generators against the oracle.
    FindGenerators,
    /// Fit structure constants to the generators' brackets.
    Closure,
    /// Integrate streamlines and decode filmstrips.
    Flow,
    /// Run a preset experiment end to end.
    Recipe {
        /// recipe-2v2d, recipe-2v3d or recipe-16v10d
        name: String,
    },
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text)
                .map_err(|e| CliError::input(format!("invalid config {}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if cli.desk {
        cfg.desk();
    }
    if let Some(s) = cli.seed {
        cfg.reseed(s);
    }
    Ok(cfg)
}

/// Runs one command and returns the summary it wrote.
pub fn execute(cli: &Cli) -> CliResult<serde_json::Value> {
    let layout = Layout::new(&cli.out);
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Pixstats => stages::pixstats(&cfg, &layout),
        Command::TrainAe => stages::train_ae(&cfg, &layout),
        Command::TrainClassifier => stages::train_classifier_stage(&cfg, &layout),
        Command::FindGenerators => stages::find_generators(&cfg, &layout, Layout::GENERATORS),
        Command::Closure => stages::closure(&cfg, &layout),
        Command::Flow => stages::flow(&cfg, &layout),
        Command::Recipe { name } => {
            let recipe = Recipe::from_name(name).ok_or_else(|| {
                let known: Vec<_> = Recipe::ALL.iter().map(|r| r.name()).collect();
                CliError::input(format!("unknown recipe {name:?} (known: {})", known.join(", ")))
            })?;
            stages::recipe(recipe, &cfg, cli.desk, cli.seed, &layout)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { rundir::EXIT_INPUT } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("json value serializes"));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
