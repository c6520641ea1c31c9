//! Opinion summarization over large review collections with multi-stage
//! prompt pipelines, and entailment-based evaluation of the summaries.
//!
//! Stages talk to completion, entailment and extraction services through the
//! traits in [`backends`]; the mocks there make every pipeline and metric
//! reproducible offline.

// Errors carry request hashes and stage context by value.
#![allow(clippy::result_large_err)]

pub mod backends;
pub mod config;
pub mod corpus;
pub mod exec;
pub mod layout;
pub mod metrics;
pub mod pipeline;
pub mod rephrase;
pub mod report;
pub mod textkit;

pub use backends::{BackendError, CallCache, Completer, Entailer, RetryPolicy, ScoreConvention};
pub use config::{ConfigError, RunConfig};
pub use corpus::{
    load_corpus, AspectSpec, CorpusFormat, CorpusStats, EntityKind, EntityReviews, Review,
    ReviewCorpus,
};
pub use exec::Workers;
pub use pipeline::{run_pipeline, PipelineConfig, PipelineEnv, PipelineRun, StageSpec, Summary};
pub use rephrase::{split_and_rephrase, AtomicClaim, RephraseSettings};
pub use report::{evaluate, EvalItem, EvalSettings, MetricReport};
