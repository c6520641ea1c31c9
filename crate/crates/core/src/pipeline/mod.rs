//! Composable summarization pipelines.
//!
//! A pipeline is a chain of stages `S_1..S_m`; stage `i` consumes the
//! concatenated sentences produced by stage `i - 1`, with `S_0` being the
//! review sentences of one entity. Stages are topic clustering, chunked
//! summarization, rating stratification, extractive filtering and a final
//! summarization round.

mod prompts;
mod run;
mod stages;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, TaskKind};

pub use prompts::{
    keyword_prompt, preamble, summarize_directive, summarize_prompt, summary_target, topic_prompt,
    PromptBudget, TopicExample, KEYWORD_DIRECTIVE, TOPIC_INSTRUCTION,
};
pub use run::{run_pipeline, PipelineEnv, RunError};
pub use stages::{
    assign_topics, chunk_summarize, extract_filter, generate_keywords, lexical_relevance,
    normalize_topic_word, parse_keywords, stratify, stratify_summarize, summarize_final,
    ChunkOutcome, StageCtx, TopicClusters,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{context}: {source}")]
    Backend {
        context: String,
        #[source]
        source: BackendError,
    },
    #[error("extractor: {0}")]
    Extractor(String),
    #[error("prompt needs ~{needed} tokens but the budget is {max}")]
    OverBudget { needed: usize, max: usize },
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("{0} produced no sentences")]
    EmptyOutput(String),
    #[error("chunked summarization still has {remaining} sentences after {rounds} rounds")]
    NonTerminating { rounds: usize, remaining: usize },
    #[error("review `{0}` has no rating; stratification needs ratings")]
    MissingRating(String),
    #[error("aspect `{0}` has no keywords; enable keyword generation (generate_keywords = true) or supply keywords")]
    MissingKeywords(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractScorer {
    ExternalEndpoint,
    #[default]
    LexicalBaseline,
}

fn default_chunk_target() -> usize {
    30
}
fn default_repeat_threshold() -> usize {
    35
}
fn default_max_rounds() -> usize {
    6
}
fn default_extract_k() -> usize {
    35
}
fn default_keyword_sample() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", from = "RawStageSpec")]
pub enum StageSpec {
    TopicCluster,
    ChunkSummarize {
        #[serde(default = "default_chunk_target")]
        target: usize,
        #[serde(default = "default_repeat_threshold")]
        repeat_threshold: usize,
        #[serde(default = "default_max_rounds")]
        max_rounds: usize,
        /// Stop after exactly one round (the "First-" pipelines).
        #[serde(default)]
        first_round_only: bool,
    },
    StratifySummarize,
    ExtractFilter {
        #[serde(default = "default_extract_k")]
        k: usize,
        #[serde(default)]
        scorer: ExtractScorer,
        /// Ask the completion backend for keywords when the aspect has none.
        #[serde(default)]
        generate_keywords: bool,
        #[serde(default = "default_keyword_sample")]
        keyword_sample_size: usize,
    },
    SummarizeFinal,
}

// Unit variants of an internally tagged enum ignore extra keys, so stages
// are parsed through brace variants that reject them.
#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawStageSpec {
    TopicCluster {},
    ChunkSummarize {
        #[serde(default = "default_chunk_target")]
        target: usize,
        #[serde(default = "default_repeat_threshold")]
        repeat_threshold: usize,
        #[serde(default = "default_max_rounds")]
        max_rounds: usize,
        #[serde(default)]
        first_round_only: bool,
    },
    StratifySummarize {},
    ExtractFilter {
        #[serde(default = "default_extract_k")]
        k: usize,
        #[serde(default)]
        scorer: ExtractScorer,
        #[serde(default)]
        generate_keywords: bool,
        #[serde(default = "default_keyword_sample")]
        keyword_sample_size: usize,
    },
    SummarizeFinal {},
}

impl From<RawStageSpec> for StageSpec {
    fn from(raw: RawStageSpec) -> Self {
        match raw {
            RawStageSpec::TopicCluster {} => StageSpec::TopicCluster,
            RawStageSpec::ChunkSummarize {
                target,
                repeat_threshold,
                max_rounds,
                first_round_only,
            } => StageSpec::ChunkSummarize {
                target,
                repeat_threshold,
                max_rounds,
                first_round_only,
            },
            RawStageSpec::StratifySummarize {} => StageSpec::StratifySummarize,
            RawStageSpec::ExtractFilter {
                k,
                scorer,
                generate_keywords,
                keyword_sample_size,
            } => StageSpec::ExtractFilter {
                k,
                scorer,
                generate_keywords,
                keyword_sample_size,
            },
            RawStageSpec::SummarizeFinal {} => StageSpec::SummarizeFinal,
        }
    }
}

impl StageSpec {
    pub fn name(&self) -> &'static str {
        match self {
            StageSpec::TopicCluster => "topic_cluster",
            StageSpec::ChunkSummarize { .. } => "chunk_summarize",
            StageSpec::StratifySummarize => "stratify_summarize",
            StageSpec::ExtractFilter { .. } => "extract_filter",
            StageSpec::SummarizeFinal => "summarize_final",
        }
    }

    pub fn chunk(first_round_only: bool) -> Self {
        StageSpec::ChunkSummarize {
            target: default_chunk_target(),
            repeat_threshold: default_repeat_threshold(),
            max_rounds: default_max_rounds(),
            first_round_only,
        }
    }

    pub fn extract(k: usize) -> Self {
        StageSpec::ExtractFilter {
            k,
            scorer: ExtractScorer::default(),
            generate_keywords: true,
            keyword_sample_size: default_keyword_sample(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        match self {
            StageSpec::ChunkSummarize {
                target,
                repeat_threshold,
                max_rounds,
                ..
            } => {
                if *target == 0 {
                    return Err(PipelineError::Config("chunk target must be >= 1".into()));
                }
                if *repeat_threshold == 0 || *max_rounds == 0 {
                    return Err(PipelineError::Config(
                        "repeat_threshold and max_rounds must be >= 1".into(),
                    ));
                }
            }
            StageSpec::ExtractFilter {
                k,
                keyword_sample_size,
                ..
            } if *k == 0 || *keyword_sample_size == 0 => {
                return Err(PipelineError::Config(
                    "extract k and keyword_sample_size must be >= 1".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }
}

pub const REGISTERED_CHAINS: &[&str] = &[
    "G",
    "CG",
    "QG",
    "Q",
    "TCG",
    "TQG",
    "RG",
    "First-TCG",
    "First-RG",
    "First-CG",
];

/// Stage lists of the named pipelines. "Q-style" is accepted for "Q".
pub fn registered_chain(name: &str) -> Option<Vec<StageSpec>> {
    use StageSpec::*;
    let stages = match name {
        "G" => vec![SummarizeFinal],
        "CG" => vec![StageSpec::chunk(false), SummarizeFinal],
        "QG" => vec![StageSpec::extract(35), SummarizeFinal],
        "Q" | "Q-style" => vec![StageSpec::extract(3)],
        "TCG" => vec![TopicCluster, StageSpec::chunk(false), SummarizeFinal],
        "TQG" => vec![TopicCluster, StageSpec::extract(35), SummarizeFinal],
        "RG" => vec![StratifySummarize, SummarizeFinal],
        "First-TCG" => vec![TopicCluster, StageSpec::chunk(true)],
        "First-RG" => vec![StratifySummarize],
        "First-CG" => vec![StageSpec::chunk(true)],
        _ => return None,
    };
    Some(stages)
}

/// Settings shared by every stage of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSettings {
    pub model_id: String,
    pub temperature: f64,
    pub budget: PromptBudget,
    /// Candidate aspects for topic clustering, in tie-break order.
    pub aspects: Vec<crate::corpus::AspectSpec>,
    pub topic_examples: Vec<TopicExample>,
    pub seed: u64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            model_id: "text-davinci-002".into(),
            temperature: 0.0,
            budget: PromptBudget::default(),
            aspects: Vec::new(),
            topic_examples: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub name: String,
    pub stages: Vec<StageSpec>,
    pub settings: PipelineSettings,
}

impl PipelineConfig {
    pub fn registered(name: &str, settings: PipelineSettings) -> Result<Self, PipelineError> {
        let stages = registered_chain(name).ok_or_else(|| {
            PipelineError::Config(format!(
                "unknown chain `{name}`; registered chains: {}",
                REGISTERED_CHAINS.join(", ")
            ))
        })?;
        Ok(Self {
            name: name.to_string(),
            stages,
            settings,
        })
    }

    pub fn custom(
        name: &str,
        stages: Vec<StageSpec>,
        settings: PipelineSettings,
    ) -> Result<Self, PipelineError> {
        if stages.is_empty() {
            return Err(PipelineError::Config(
                "a pipeline needs at least one stage".into(),
            ));
        }
        Ok(Self {
            name: name.to_string(),
            stages,
            settings,
        })
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for (i, s) in self.stages.iter().enumerate() {
            s.validate()?;
            if matches!(s, StageSpec::StratifySummarize) && i != 0 {
                return Err(PipelineError::Config(
                    "stratify_summarize works on reviews and must be the first stage".into(),
                ));
            }
        }
        if self.stages.contains(&StageSpec::TopicCluster) && self.settings.topic_examples.is_empty()
        {
            return Err(PipelineError::Config(
                "topic_cluster needs few-shot topic_examples in the configuration".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub entity_id: String,
    pub aspect: String,
    pub sentences: Vec<String>,
    pub pipeline: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk<'a> {
    pub sentences: &'a [String],
    pub chunk_index: usize,
}

/// Order-preserving concatenation.
pub fn combine<S: Clone>(groups: &[Vec<S>]) -> Vec<S> {
    groups.iter().flatten().cloned().collect()
}

/// Splits `sentences` into `ceil(l / target)` contiguous chunks whose sizes
/// differ by at most one; the first `l mod c` chunks take the extra sentence.
pub fn chunk(sentences: &[String], target: usize) -> Vec<Chunk<'_>> {
    let sizes = chunk_sizes(sentences.len(), target);
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for (chunk_index, size) in sizes.into_iter().enumerate() {
        out.push(Chunk {
            sentences: &sentences[start..start + size],
            chunk_index,
        });
        start += size;
    }
    out
}

pub fn chunk_sizes(len: usize, target: usize) -> Vec<usize> {
    assert!(target >= 1, "chunk target must be >= 1");
    if len == 0 {
        return Vec::new();
    }
    let c = len.div_ceil(target);
    let (base, extra) = (len / c, len % c);
    (0..c).map(|i| base + usize::from(i < extra)).collect()
}

/// One backend call or notable event within a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub stage: usize,
    pub stage_kind: String,
    pub event: ProvenanceEvent,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub item: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProvenanceEvent {
    Call,
    Truncate,
    Note,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub entity_id: String,
    pub aspect: crate::corpus::AspectSpec,
    pub chain: String,
    pub stages: Vec<StageSpec>,
    /// `S_0..S_m`; `S_0` is the review sentences.
    pub intermediates: Vec<Vec<String>>,
    pub final_summary: Summary,
    pub provenance: Vec<ProvenanceRecord>,
}

impl PipelineRun {
    pub fn stage_outputs(&self) -> BTreeMap<usize, &[String]> {
        self.intermediates
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.as_slice()))
            .collect()
    }
}
