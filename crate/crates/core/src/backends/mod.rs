//! Clients for completion, entailment and extraction services, plus the call
//! cache, retry policy, deterministic mocks and the embedding lexicon.

mod cache;
mod http;
mod lexicon;
pub mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use cache::{cache_key, content_hash, CallCache};
pub use http::{HttpCompletion, HttpEntailment, HttpExtractor};
pub use lexicon::{load_lexicon, nearest_aspect, parse_lexicon, EmbeddingLexicon, LexiconError};

/// What a prompt is for, plus the input lines it carries. Never sent over
/// the wire and not part of the cache key; mocks use it to answer without
/// parsing prompt text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTask {
    pub kind: TaskKind,
    pub payload: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Topic,
    Summarize,
    Keywords,
    Rephrase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub model_id: String,
    pub task: Option<PromptTask>,
}

impl CompletionRequest {
    /// The JSON body of the completion endpoint; also the cache payload.
    pub fn wire_body(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model_id,
            "prompt": self.prompt,
            "max_tokens": self.max_output_tokens,
            "temperature": self.temperature,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentRecord {
    pub premise: String,
    pub hypothesis: String,
    pub score: f64,
}

/// How an entailment service reports its result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreConvention {
    /// Already in [-1, 1].
    #[default]
    Signed,
    /// A probability in [0, 1], mapped by `2x - 1`.
    Probability,
    /// Separate entailment and contradiction probabilities, mapped to `e - c`.
    EntailContradict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RawScore {
    Scalar(f64),
    Pair { entail: f64, contradict: f64 },
}

impl ScoreConvention {
    pub fn to_signed(self, raw: RawScore) -> Result<f64, String> {
        let v = match (self, raw) {
            (ScoreConvention::Signed, RawScore::Scalar(x)) => x,
            (ScoreConvention::Probability, RawScore::Scalar(x)) => 2.0 * x - 1.0,
            (ScoreConvention::EntailContradict, RawScore::Pair { entail, contradict }) => {
                entail - contradict
            }
            (conv, raw) => return Err(format!("score {raw:?} does not fit convention {conv:?}")),
        };
        if !v.is_finite() {
            return Err(format!("non-finite entailment score {v}"));
        }
        Ok(v.clamp(-1.0, 1.0))
    }
}

/// Failure of a single backend attempt.
#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum CallError {
    /// Worth retrying: connection problems, timeouts, 5xx.
    #[error("transport: {0}")]
    Transport(String),
    #[error("context window exceeded: {0}")]
    ContextOverflow(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("request {hash}: failed after {attempts} attempt(s): {message}")]
    Transport {
        hash: String,
        attempts: u32,
        message: String,
    },
    #[error("request {hash}: prompt must be truncated: {message}")]
    ContextOverflow { hash: String, message: String },
    #[error("request {hash}: {message}")]
    Invalid { hash: String, message: String },
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
    #[error("backend configuration: {0}")]
    Config(String),
}

pub trait CompletionBackend: Send + Sync {
    /// Stable identifier, part of every cache key.
    fn id(&self) -> String;
    fn complete(&self, req: &CompletionRequest) -> Result<String, CallError>;
}

pub trait EntailmentBackend: Send + Sync {
    fn id(&self) -> String;
    fn convention(&self) -> ScoreConvention;
    fn raw_score(&self, premise: &str, hypothesis: &str) -> Result<RawScore, CallError>;
}

/// External extractive model: returns indices of the selected sentences.
pub trait ExtractorBackend: Send + Sync {
    fn id(&self) -> String;
    fn extract(
        &self,
        sentences: &[String],
        aspect: &str,
        keywords: &[String],
        k: usize,
    ) -> Result<Vec<usize>, CallError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff_ms: 1000,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            initial_backoff_ms: 0,
        }
    }

    fn run<T>(
        &self,
        hash: impl Fn() -> String,
        mut call: impl FnMut() -> Result<T, CallError>,
    ) -> Result<T, BackendError> {
        let attempts = self.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 && self.initial_backoff_ms > 0 {
                let delay = self
                    .initial_backoff_ms
                    .saturating_mul(1u64 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match call() {
                Ok(v) => return Ok(v),
                Err(CallError::Transport(m)) => {
                    log::warn!("request {}: attempt {} failed: {m}", hash(), attempt + 1);
                    last = m;
                }
                Err(CallError::ContextOverflow(message)) => {
                    return Err(BackendError::ContextOverflow {
                        hash: hash(),
                        message,
                    })
                }
                Err(CallError::Invalid(message)) => {
                    return Err(BackendError::Invalid {
                        hash: hash(),
                        message,
                    })
                }
            }
        }
        Err(BackendError::Transport {
            hash: hash(),
            attempts,
            message: last,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub cache_key: String,
}

/// A completion backend behind the call cache and retry policy.
#[derive(Clone)]
pub struct Completer {
    backend: Arc<dyn CompletionBackend>,
    cache: Option<Arc<CallCache>>,
    retry: RetryPolicy,
    replay_sampled: bool,
    calls: Arc<AtomicUsize>,
}

impl Completer {
    pub fn new(backend: Arc<dyn CompletionBackend>) -> Self {
        Self {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            replay_sampled: false,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn with_cache(mut self, cache: Arc<CallCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Also replay cached responses of temperature > 0 requests.
    pub fn replay_sampled(mut self, yes: bool) -> Self {
        self.replay_sampled = yes;
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    /// Requests that actually reached the backend.
    pub fn backend_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn key_for(&self, req: &CompletionRequest) -> String {
        cache_key("completion", &self.backend.id(), &req.wire_body())
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<Completion, BackendError> {
        let key = self.key_for(req);
        let call = || {
            self.retry.run(
                || key.clone(),
                || {
                    self.calls.fetch_add(1, Ordering::SeqCst);
                    self.backend.complete(req)
                },
            )
        };
        let text = match &self.cache {
            Some(cache) => {
                let replay = req.temperature == 0.0 || self.replay_sampled;
                cache.get_or_try_insert(&key, replay, call)?.0
            }
            None => call()?,
        };
        Ok(Completion {
            text,
            cache_key: key,
        })
    }
}

/// An entailment backend behind the cache, retry policy and score mapping.
#[derive(Clone)]
pub struct Entailer {
    backend: Arc<dyn EntailmentBackend>,
    cache: Option<Arc<CallCache>>,
    retry: RetryPolicy,
    calls: Arc<AtomicUsize>,
}

impl Entailer {
    pub fn new(backend: Arc<dyn EntailmentBackend>) -> Self {
        Self {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn with_cache(mut self, cache: Arc<CallCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn backend_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Signed score e(premise, hypothesis) in [-1, 1].
    pub fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, BackendError> {
        let key = || {
            cache_key(
                "entailment",
                &self.backend.id(),
                &serde_json::json!({"premise": premise, "hypothesis": hypothesis}),
            )
        };
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(BackendError::Invalid {
                hash: key(),
                message: "premise and hypothesis must be non-empty".into(),
            });
        }
        let call = || -> Result<f64, BackendError> {
            let raw = self.retry.run(key, || {
                self.calls.fetch_add(1, Ordering::SeqCst);
                self.backend.raw_score(premise, hypothesis)
            })?;
            self.backend
                .convention()
                .to_signed(raw)
                .map_err(|message| BackendError::Invalid {
                    hash: key(),
                    message,
                })
        };
        let Some(cache) = &self.cache else {
            return call();
        };
        let key = key();
        let text = cache
            .get_or_try_insert(&key, true, || {
                call().map(|v| serde_json::to_string(&v).expect("finite float serializes"))
            })?
            .0;
        text.trim()
            .parse::<f64>()
            .map_err(|e| BackendError::Invalid {
                hash: key,
                message: format!("corrupt cached score `{text}`: {e}"),
            })
    }

    pub fn entail(
        &self,
        premise: &str,
        hypothesis: &str,
    ) -> Result<EntailmentRecord, BackendError> {
        Ok(EntailmentRecord {
            premise: premise.to_string(),
            hypothesis: hypothesis.to_string(),
            score: self.score(premise, hypothesis)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::mock::{ExactMatchEntailment, FnCompletion, MockCompletion};
    use super::*;

    fn req(prompt: &str, temperature: f64) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            max_output_tokens: 16,
            temperature,
            model_id: "m".into(),
            task: None,
        }
    }

    #[test]
    fn table_mock_echoes_entry() {
        let mock = MockCompletion::table([("p", "out")]);
        let c = Completer::new(Arc::new(mock));
        assert_eq!(c.complete(&req("p", 0.0)).unwrap().text, "out");
    }

    #[test]
    fn repeated_request_served_from_cache() {
        let c = Completer::new(Arc::new(MockCompletion::table([("p", "out")])))
            .with_cache(Arc::new(CallCache::in_memory()));
        let a = c.complete(&req("p", 0.0)).unwrap();
        let b = c.complete(&req("p", 0.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(c.backend_calls(), 1);
    }

    #[test]
    fn sampled_requests_not_replayed_unless_opted_in() {
        let cache = Arc::new(CallCache::in_memory());
        let c = Completer::new(Arc::new(MockCompletion::table([("p", "out")])))
            .with_cache(cache.clone());
        c.complete(&req("p", 0.7)).unwrap();
        c.complete(&req("p", 0.7)).unwrap();
        assert_eq!(c.backend_calls(), 2);
        assert_eq!(cache.len(), 1);

        let c = c.replay_sampled(true);
        c.complete(&req("p", 0.7)).unwrap();
        assert_eq!(c.backend_calls(), 2);
    }

    #[test]
    fn transport_failure_retries_then_reports_hash() {
        let c = Completer::new(Arc::new(FnCompletion::new("down", |_| {
            Err(CallError::Transport("connection refused".into()))
        })))
        .with_retry(RetryPolicy::immediate(4));
        let r = req("p", 0.0);
        let key = c.key_for(&r);
        match c.complete(&r) {
            Err(BackendError::Transport { hash, attempts, .. }) => {
                assert_eq!(hash, key);
                assert_eq!(attempts, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(c.backend_calls(), 4);
    }

    #[test]
    fn context_overflow_is_distinct_and_not_retried() {
        let c = Completer::new(Arc::new(FnCompletion::new("small", |_| {
            Err(CallError::ContextOverflow("too long".into()))
        })))
        .with_retry(RetryPolicy::immediate(3));
        assert!(matches!(
            c.complete(&req("p", 0.0)),
            Err(BackendError::ContextOverflow { .. })
        ));
        assert_eq!(c.backend_calls(), 1);
    }

    #[test]
    fn affine_probability_mapping() {
        assert_eq!(
            ScoreConvention::Probability
                .to_signed(RawScore::Scalar(0.875))
                .unwrap(),
            0.75
        );
        assert_eq!(
            ScoreConvention::EntailContradict
                .to_signed(RawScore::Pair {
                    entail: 0.9,
                    contradict: 0.1
                })
                .unwrap(),
            0.8
        );
        assert_eq!(
            ScoreConvention::Signed
                .to_signed(RawScore::Scalar(1.7))
                .unwrap(),
            1.0
        );
        assert!(ScoreConvention::Signed
            .to_signed(RawScore::Pair {
                entail: 1.0,
                contradict: 0.0
            })
            .is_err());
    }

    #[test]
    fn entail_exact_match_and_cache() {
        let e = Entailer::new(Arc::new(ExactMatchEntailment))
            .with_cache(Arc::new(CallCache::in_memory()));
        assert_eq!(e.entail("Nice pool.", " Nice pool. ").unwrap().score, 1.0);
        assert_eq!(e.score("Nice pool.", "Awful bar.").unwrap(), -1.0);
        e.score("Nice pool.", "Awful bar.").unwrap();
        assert_eq!(e.backend_calls(), 2);
        assert!(e.score("", "x").is_err());
    }
}
