//! Command-line pipeline: seed sampling, prompt building, generation,
//! assessment, scoring, reporting, threshold ablation and mitigation
//! comparison over one run configuration.

pub mod commands;
pub mod config;
pub mod error;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fairlens_core::scoring::Variant;

use crate::config::{LoadedConfig, Overrides};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fairlens", version, about = "Metamorphic bias evaluation for image-editing models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Age threshold in years.
    #[arg(long)]
    pub thresholds_age: Option<f64>,
    /// Skin-gray threshold in gray levels.
    #[arg(long)]
    pub thresholds_race: Option<f64>,
    /// `ori` or `miti`.
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub rng_seed: Option<u64>,
    /// Concurrent generations or assessments.
    #[arg(long)]
    pub concurrency: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a balanced seed set from the corpus index.
    SampleSeeds(Common),
    /// Filter the lexicon and render the prompt list.
    BuildPrompts(Common),
    /// Edit every seed with every prompt (resumable).
    Generate(Common),
    /// Assess gender, age and skin gray of seeds and generated images.
    Assess(Common),
    /// Compute pair, word and model bias scores.
    Score(Common),
    /// Write tables, figures and the exclusion audit.
    Report(Common),
    /// Rescore at a grid of thresholds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [15.0, 25.0, 35.0])]
        ages: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [10.0, 20.0, 30.0])]
        races: Vec<f64>,
    },
    /// Compare original and mitigated runs of the same config.
    MitigateCompare(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::SampleSeeds(c)
            | Command::BuildPrompts(c)
            | Command::Generate(c)
            | Command::Assess(c)
            | Command::Score(c)
            | Command::Report(c)
            | Command::MitigateCompare(c) => c,
            Command::Ablate { common, .. } => common,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::SampleSeeds(_) => "sample-seeds",
            Command::BuildPrompts(_) => "build-prompts",
            Command::Generate(_) => "generate",
            Command::Assess(_) => "assess",
            Command::Score(_) => "score",
            Command::Report(_) => "report",
            Command::Ablate { .. } => "ablate",
            Command::MitigateCompare(_) => "mitigate-compare",
        }
    }
}

/// Runs one subcommand and returns its JSON summary.
pub fn execute(command: &Command) -> Result<serde_json::Value, CliError> {
    let c = command.common();
    let overrides = Overrides {
        thresholds_age: c.thresholds_age,
        thresholds_race: c.thresholds_race,
        variant: c.variant,
        rng_seed: c.rng_seed,
        concurrency: c.concurrency,
    };
    let cfg = LoadedConfig::load(&c.config, &overrides)?;
    tracing::info!(command = command.name(), run_id = %cfg.run_id(), "start");
    let detail = match command {
        Command::SampleSeeds(_) => commands::sample_seeds(&cfg)?,
        Command::BuildPrompts(_) => commands::build_prompts(&cfg)?,
        Command::Generate(_) => commands::generate(&cfg)?,
        Command::Assess(_) => commands::assess(&cfg)?,
        Command::Score(_) => commands::score(&cfg)?,
        Command::Report(_) => commands::report(&cfg)?,
        Command::Ablate { ages, races, .. } => commands::ablate(&cfg, ages, races)?,
        Command::MitigateCompare(_) => commands::mitigate_compare(&cfg)?,
    };
    Ok(serde_json::json!({
        "command": command.name(),
        "run_id": cfg.run_id(),
        "config_hash": cfg.config_hash(),
        "detail": detail,
    }))
}
