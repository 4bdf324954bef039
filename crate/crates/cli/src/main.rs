//! `xsdp`: annotation projection, parser training and evaluation from the
//! command line.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{PipelineConfig, CONFIG_ENV};

#[derive(Parser, Debug)]
#[command(name = "xsdp", version, about = "Cross-lingual semantic dependency parsing pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Global {
    /// TOML pipeline configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Seed overriding every seed of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Where to write the run manifest (default: next to the first output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Intersects forward and backward word alignments.
    Intersect(commands::IntersectArgs),
    /// Projects source semantic graphs onto target sentences.
    Project(commands::ProjectArgs),
    /// Draws equally many sentences below and above a density threshold.
    Sample(commands::SampleArgs),
    /// Splits off a held-out part of a corpus.
    Split(commands::SplitArgs),
    /// Generates a synthetic parallel corpus with gold annotation.
    Synth(commands::SynthArgs),
    /// Trains a parser, optionally with the syntactic auxiliary task.
    Train(commands::TrainArgs),
    /// Parses sentences with a trained model.
    Parse(commands::ParseArgs),
    /// Labeled and unlabeled precision, recall and F1 against gold graphs.
    Score(commands::ScoreArgs),
    /// Dependency-length, syntactic head-match and label-contribution analyses.
    Analyze(commands::AnalyzeArgs),
    /// Finite-difference check of the parser gradients.
    Gradcheck(commands::GradcheckArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = PipelineConfig::load(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        cfg.set_seed(seed);
    }
    commands::dispatch(cli.command, cfg, cli.global.manifest.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_line_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
