//! Command-line front end: ingest datasets, evaluate critics, run editing
//! loops and render reports. Every command is callable as a library
//! function so tests can drive it without spawning a process.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use critedit::prompt::{CriticMode, EditorStrategy};
use thiserror::Error;

pub use commands::{critic_eval, edit, ingest, report, IngestOptions, ReportOptions, ReportOutput};
pub use config::{BackendSpec, Overrides, RunConfig, ScorerSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Schema(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}

impl From<critedit::data::DataError> for CliError {
    fn from(e: critedit::data::DataError) -> Self {
        CliError::Schema(e.to_string())
    }
}

/// How a command that ran to the end went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some sessions or critic calls failed; their ids are in the reports.
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "critedit", version, about = "Critic/editor post-editing of summaries for factual consistency")]
pub struct Cli {
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceKind {
    Frank,
    Defacto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriticModeArg {
    Scale,
    Binary,
}

impl From<CriticModeArg> for CriticMode {
    fn from(m: CriticModeArg) -> Self {
        match m {
            CriticModeArg::Scale => CriticMode::Scale5,
            CriticModeArg::Binary => CriticMode::Binary,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a raw dataset into JSONL.
    Ingest {
        #[arg(long, value_enum)]
        kind: SourceKind,
        #[arg(long)]
        input: PathBuf,
        /// XSum hallucination-span annotations (CSV) to attach to FRANK records.
        #[arg(long)]
        spans: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        subsample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score every pair with the critic and correlate with human judgments.
    CriticEval(RunArgs),
    /// Run the critic/editor loop over the edit pool and report.
    Edit(RunArgs),
    /// Re-render every report from a run directory.
    Report {
        #[arg(long, visible_alias = "out")]
        run_dir: PathBuf,
        /// Extra `id,metric,score` CSV files.
        #[arg(long = "scores-file")]
        scores_files: Vec<PathBuf>,
        /// A second run directory, for the per-error-type comparison.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<EditorStrategy>,
    #[arg(long, value_enum)]
    pub critic_mode: Option<CriticModeArg>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long = "scores-file")]
    pub scores_files: Vec<PathBuf>,
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_strategy(s: &str) -> Result<EditorStrategy, String> {
    s.parse()
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut config = RunConfig::load(&self.config)?;
        config.apply(&Overrides {
            strategy: self.strategy,
            critic_mode: self.critic_mode.map(Into::into),
            max_rounds: self.max_rounds,
            parallelism: self.parallelism,
            out: self.out.clone(),
            scores_files: self.scores_files.clone(),
            subsample: self.subsample,
            seed: self.seed,
        });
        Ok(config)
    }
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Ingest { kind, input, spans, out, subsample, seed } => {
            let n = ingest(&IngestOptions { kind, input, spans, out, subsample, seed })?;
            println!("wrote {n} records");
            Ok(Outcome::Success)
        }
        Command::CriticEval(args) => critic_eval(&args.load()?),
        Command::Edit(args) => edit(&args.load()?),
        Command::Report { run_dir, scores_files, compare } => {
            report(&ReportOptions { run_dir, scores_files, compare })?;
            Ok(Outcome::Success)
        }
    }
}
