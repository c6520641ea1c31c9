//! TOML run configuration: pipeline, backends, rephrasing and evaluation.
//!
//! ```toml
//! chain = "TCG"
//! lexicon = "lexicon.txt"        # relative to this file
//!
//! [pipeline]
//! seed = 7
//! [[pipeline.aspects]]
//! name = "rooms"
//! [[pipeline.topic_examples]]
//! sentence = "The bed was comfy."
//! topic = "bed"
//!
//! [backends.completion]
//! kind = "http"
//! url_env = "OPSUM_COMPLETION_URL"
//! [backends.entailment]
//! kind = "token_overlap"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::mock::{
    ExactMatchEntailment, LeadExtractor, MockBehavior, MockCompletion, TokenOverlapEntailment,
};
use crate::backends::{
    CompletionBackend, EntailmentBackend, ExtractorBackend, HttpCompletion, HttpEntailment,
    HttpExtractor, RetryPolicy, ScoreConvention,
};
use crate::corpus::AspectSpec;
use crate::pipeline::{PipelineConfig, PipelineError, PipelineSettings, StageSpec};
use crate::rephrase::RephraseSettings;
use crate::report::EvalSettings;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    /// Substring of the prompt.
    pub contains: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockEntry {
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompletionConfig {
    Mock {
        /// Fallback for prompts no table entry or rule covers; extractive when omitted.
        #[serde(default = "extractive")]
        behavior: MockBehavior,
        #[serde(default)]
        table: Vec<MockEntry>,
        #[serde(default)]
        rules: Vec<MockRule>,
    },
    Http {
        url_env: String,
        #[serde(default)]
        token_env: Option<String>,
    },
}

fn extractive() -> MockBehavior {
    MockBehavior::Extractive
}

impl Default for CompletionConfig {
    fn default() -> Self {
        CompletionConfig::Mock {
            behavior: MockBehavior::Extractive,
            table: Vec::new(),
            rules: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EntailmentConfig {
    ExactMatch,
    TokenOverlap,
    Http {
        url_env: String,
        #[serde(default)]
        token_env: Option<String>,
        convention: ScoreConvention,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtractorConfig {
    Lead,
    Http {
        url_env: String,
        #[serde(default)]
        token_env: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub completion: CompletionConfig,
    pub entailment: Option<EntailmentConfig>,
    pub extractor: Option<ExtractorConfig>,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// A registered chain name, or the label of a custom `stages` list.
    pub chain: String,
    pub stages: Vec<StageSpec>,
    pub lexicon: Option<PathBuf>,
    pub pipeline: PipelineSettings,
    /// Aspects to summarize; defaults to `pipeline.aspects`, or the none
    /// aspect when that is empty too.
    pub run_aspects: Vec<String>,
    pub backends: BackendsConfig,
    pub rephrase: RephraseSettings,
    pub eval: EvalSettings,
}

fn env_var(name: &str) -> Result<String, ConfigError> {
    std::env::var(name).map_err(|_| ConfigError::MissingEnv(name.to_string()))
}

fn token(name: &Option<String>) -> Result<Option<String>, ConfigError> {
    name.as_deref().map(env_var).transpose()
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            source: Box::new(e),
        })?;
        cfg.pipeline.aspects = cfg
            .pipeline
            .aspects
            .iter()
            .map(|a| {
                AspectSpec::new(
                    &a.name,
                    &a.keywords.iter().map(String::as_str).collect::<Vec<_>>(),
                )
            })
            .collect();
        if let (Some(lex), Some(dir)) = (&cfg.lexicon, path.parent()) {
            if lex.is_relative() {
                cfg.lexicon = Some(dir.join(lex));
            }
        }
        cfg.pipeline_config()?.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig, ConfigError> {
        if self.chain.trim().is_empty() {
            return Err(ConfigError::Invalid(
                "`chain` must name a registered chain or label custom `stages`".into(),
            ));
        }
        let cfg = if self.stages.is_empty() {
            PipelineConfig::registered(&self.chain, self.pipeline.clone())?
        } else {
            PipelineConfig::custom(&self.chain, self.stages.clone(), self.pipeline.clone())?
        };
        Ok(cfg)
    }

    /// Aspect specs to run, in configuration order.
    pub fn aspects(&self) -> Vec<AspectSpec> {
        if self.run_aspects.is_empty() {
            if self.pipeline.aspects.is_empty() {
                return vec![AspectSpec::none()];
            }
            return self.pipeline.aspects.clone();
        }
        self.run_aspects
            .iter()
            .map(|name| {
                let name = name.trim().to_lowercase();
                self.pipeline
                    .aspects
                    .iter()
                    .find(|a| a.name == name)
                    .cloned()
                    .unwrap_or_else(|| AspectSpec::new(&name, &[]))
            })
            .collect()
    }

    pub fn completion_backend(&self) -> Result<Arc<dyn CompletionBackend>, ConfigError> {
        Ok(match &self.backends.completion {
            CompletionConfig::Mock {
                behavior,
                table,
                rules,
            } => {
                let mut m = MockCompletion::table(
                    table.iter().map(|e| (e.prompt.clone(), e.response.clone())),
                )
                .with_behavior(behavior.clone());
                for r in rules {
                    m = m.with_rule(r.contains.clone(), r.response.clone());
                }
                Arc::new(m)
            }
            CompletionConfig::Http { url_env, token_env } => {
                Arc::new(HttpCompletion::new(env_var(url_env)?, token(token_env)?))
            }
        })
    }

    pub fn entailment_backend(&self) -> Result<Option<Arc<dyn EntailmentBackend>>, ConfigError> {
        Ok(match &self.backends.entailment {
            None => None,
            Some(EntailmentConfig::ExactMatch) => Some(Arc::new(ExactMatchEntailment)),
            Some(EntailmentConfig::TokenOverlap) => Some(Arc::new(TokenOverlapEntailment::new())),
            Some(EntailmentConfig::Http {
                url_env,
                token_env,
                convention,
            }) => Some(Arc::new(HttpEntailment::new(
                env_var(url_env)?,
                token(token_env)?,
                *convention,
            ))),
        })
    }

    pub fn extractor_backend(&self) -> Result<Option<Arc<dyn ExtractorBackend>>, ConfigError> {
        Ok(match &self.backends.extractor {
            None => None,
            Some(ExtractorConfig::Lead) => Some(Arc::new(LeadExtractor)),
            Some(ExtractorConfig::Http { url_env, token_env }) => Some(Arc::new(
                HttpExtractor::new(env_var(url_env)?, token(token_env)?),
            )),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(text, Path::new("/cfg/run.toml"))
    }

    #[test]
    fn full_config_parses() {
        let cfg = parse(
            r#"
            chain = "TCG"
            lexicon = "lex.txt"
            run_aspects = ["Rooms"]
            [pipeline]
            seed = 9
            [pipeline.budget]
            max_prompt_tokens = 2000
            [[pipeline.aspects]]
            name = "Rooms"
            keywords = ["Bed"]
            [[pipeline.topic_examples]]
            sentence = "The bed was soft."
            topic = "bed"
            [backends.completion]
            kind = "mock"
            behavior = { kind = "constant", value = "Fine." }
            rules = [{ contains = "pool", response = "Cold." }]
            [backends.entailment]
            kind = "http"
            url_env = "X_URL"
            convention = "probability"
            [backends.retry]
            attempts = 5
            initial_backoff_ms = 10
            [rephrase]
            blocklist = ["^guests said"]
            [eval]
            support_tau = 0.8
            metrics = ["top_score", "rouge"]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.lexicon.as_deref(), Some(Path::new("/cfg/lex.txt")));
        assert_eq!(cfg.pipeline.aspects[0], AspectSpec::new("rooms", &["bed"]));
        assert_eq!(cfg.aspects()[0].keywords, vec!["bed"]);
        assert_eq!(cfg.pipeline.budget.max_prompt_tokens, 2000);
        assert_eq!(cfg.pipeline.budget.token_multiplier, 1.35);
        assert_eq!(cfg.backends.retry.attempts, 5);
        assert_eq!(cfg.eval.support_tau, 0.8);
        assert_eq!(cfg.eval.genericity_tau, 0.5);
        assert_eq!(cfg.pipeline_config().unwrap().stages.len(), 3);
        assert!(cfg.completion_backend().is_ok());
    }

    #[test]
    fn defaults_and_errors() {
        let cfg = parse("chain = \"G\"").unwrap();
        assert_eq!(cfg.aspects(), vec![AspectSpec::none()]);
        assert!(cfg.entailment_backend().unwrap().is_none());
        assert!(matches!(
            parse("chain = \"XYZ\""),
            Err(ConfigError::Pipeline(_))
        ));
        assert!(matches!(
            parse("chain = \"G\"\nbogus = 1"),
            Err(ConfigError::Parse { .. })
        ));
        assert!(parse("").is_err());
        // topic clustering without few-shot examples is rejected at load
        assert!(parse("chain = \"TCG\"").is_err());
    }

    #[test]
    fn custom_stage_list() {
        let cfg = parse(
            r#"
            chain = "mine"
            [[stages]]
            kind = "extract_filter"
            k = 5
            generate_keywords = true
            [[stages]]
            kind = "summarize_final"
            "#,
        )
        .unwrap();
        let p = cfg.pipeline_config().unwrap();
        assert_eq!(p.name, "mine");
        assert_eq!(p.stages[1], StageSpec::SummarizeFinal);
    }

    #[test]
    fn http_backends_need_env() {
        let cfg = parse(
            r#"
            chain = "G"
            [backends.completion]
            kind = "http"
            url_env = "OPSUM_TEST_SURELY_UNSET_URL"
            "#,
        )
        .unwrap();
        assert!(matches!(
            cfg.completion_backend(),
            Err(ConfigError::MissingEnv(_))
        ));
    }
}
