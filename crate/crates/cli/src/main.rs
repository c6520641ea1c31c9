//! `opsum`: run summarization pipelines over a review corpus, rephrase the
//! summaries into claims and evaluate them.

mod agree;
mod commands;
mod dryrun;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "opsum",
    version,
    about = "Opinion-summarization pipelines and their evaluation"
)]
pub struct Cli {
    /// Persistent call cache shared by all commands.
    #[arg(long, global = true, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Overrides the configured sampling seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print the backend calls that would be issued, without issuing them.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Maximum number of concurrent backend calls.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// space, fewsum or jsonl
    #[arg(long, default_value = "space")]
    pub format: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus statistics: reviews per entity, sentences per review, words per sentence.
    Stats {
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Also write the statistics as JSON to this file.
        #[arg(long, value_name = "PATH")]
        json: Option<PathBuf>,
    },
    /// Run the configured pipeline for every selected (entity, aspect).
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Restrict to these entity ids (repeatable).
        #[arg(long = "entity", value_name = "ID")]
        entities: Vec<String>,
        /// Restrict to these aspects (repeatable).
        #[arg(long = "aspect", value_name = "NAME")]
        aspects: Vec<String>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Split-and-rephrase the summaries of run directories into claims.jsonl.
    Rephrase {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Run directories, or roots containing them.
        #[arg(required = true, value_name = "RUN_DIR")]
        runs: Vec<PathBuf>,
    },
    /// Evaluate rephrased runs and write reports under <out>/eval/<chain>/.
    Eval {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Run directories, or roots containing them.
        #[arg(long, required = true, value_name = "DIR")]
        runs: Vec<PathBuf>,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Comma-separated subset of metrics.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
        /// Support threshold.
        #[arg(long)]
        tau: Option<f64>,
        /// Semantic-genericity threshold.
        #[arg(long)]
        genericity_tau: Option<f64>,
    },
    /// Rater agreement (Fleiss kappa) and Spearman correlations from a ratings CSV.
    Agree {
        #[arg(long, value_name = "PATH")]
        ratings: PathBuf,
        /// Also write the results as JSON to this file.
        #[arg(long, value_name = "PATH")]
        json: Option<PathBuf>,
    },
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Fail {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const EXIT_PARTIAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

pub trait OrExit<T> {
    /// Usage or configuration problem: exit code 2.
    fn usage(self) -> Result<T, Fail>;
    /// Failure while doing the work: exit code 1.
    fn failed(self) -> Result<T, Fail>;
}

/// Joins the cause chain, skipping causes already quoted by their parent.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn usage(self) -> Result<T, Fail> {
        self.map_err(|e| Fail {
            code: EXIT_USAGE,
            error: e.into(),
        })
    }

    fn failed(self) -> Result<T, Fail> {
        self.map_err(|e| Fail {
            code: EXIT_PARTIAL,
            error: e.into(),
        })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", error_chain(&f.error));
            ExitCode::from(f.code)
        }
    }
}
