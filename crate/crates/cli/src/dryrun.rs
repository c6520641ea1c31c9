//! Backends that record what would be sent instead of sending it.

use std::collections::BTreeSet;
use std::sync::Arc;

use parking_lot::Mutex;

use opsum_core::backends::mock::{MockBehavior, MockCompletion};
use opsum_core::backends::{
    cache_key, CallCache, CallError, CompletionBackend, CompletionRequest, EntailmentBackend,
    RawScore, ScoreConvention,
};

/// Answers from the cache when it can; otherwise records the request key
/// and answers with a placeholder so later stages can still be planned.
pub struct DryRunCompletion {
    inner: Arc<dyn CompletionBackend>,
    cache: Option<Arc<CallCache>>,
    placeholder: MockCompletion,
    planned: Mutex<BTreeSet<String>>,
}

impl DryRunCompletion {
    pub fn new(inner: Arc<dyn CompletionBackend>, cache: Option<Arc<CallCache>>) -> Self {
        Self {
            inner,
            cache,
            placeholder: MockCompletion::new(MockBehavior::Extractive),
            planned: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn planned_count(&self) -> usize {
        self.planned.lock().len()
    }

    pub fn is_planned(&self, key: &str) -> bool {
        self.planned.lock().contains(key)
    }
}

impl CompletionBackend for DryRunCompletion {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, CallError> {
        let key = cache_key("completion", &self.inner.id(), &req.wire_body());
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(hit);
        }
        self.planned.lock().insert(key);
        self.placeholder.complete(req)
    }
}

/// Counts entailment requests that are not cached yet.
pub struct DryRunEntailment {
    inner: Arc<dyn EntailmentBackend>,
    cache: Option<Arc<CallCache>>,
    planned: Mutex<BTreeSet<String>>,
}

impl DryRunEntailment {
    pub fn new(inner: Arc<dyn EntailmentBackend>, cache: Option<Arc<CallCache>>) -> Self {
        Self {
            inner,
            cache,
            planned: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn planned(&self) -> usize {
        self.planned.lock().len()
    }
}

impl EntailmentBackend for DryRunEntailment {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn convention(&self) -> ScoreConvention {
        ScoreConvention::Signed
    }

    fn raw_score(&self, premise: &str, hypothesis: &str) -> Result<RawScore, CallError> {
        let key = cache_key(
            "entailment",
            &self.inner.id(),
            &serde_json::json!({"premise": premise, "hypothesis": hypothesis}),
        );
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return hit
                .trim()
                .parse::<f64>()
                .map(RawScore::Scalar)
                .map_err(|e| CallError::Invalid(e.to_string()));
        }
        self.planned.lock().insert(key);
        Ok(RawScore::Scalar(0.0))
    }
}
