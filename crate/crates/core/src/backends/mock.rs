//! Deterministic in-process backends.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::{
    CallError, CompletionBackend, CompletionRequest, EntailmentBackend, ExtractorBackend, RawScore,
    ScoreConvention, TaskKind,
};
use crate::textkit::{content_stems, surface_tokens, Stopwords};

/// What the completion mock does for prompts that no table entry or rule covers.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum MockBehavior {
    #[default]
    Error,
    /// Answers from the task payload: the first input sentence for summaries,
    /// the first content word for topics, the sentence itself for rephrasing
    /// and the first distinct content words for keywords.
    Extractive,
    /// Returns every payload line joined by spaces.
    Echo,
    Constant(String),
}

/// Table- and rule-driven completion mock.
#[derive(Debug, Default)]
pub struct MockCompletion {
    table: BTreeMap<String, String>,
    rules: Vec<(String, String)>,
    behavior: MockBehavior,
    calls: AtomicUsize,
}

impl MockCompletion {
    pub fn new(behavior: MockBehavior) -> Self {
        Self {
            behavior,
            ..Self::default()
        }
    }

    pub fn table<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            table: entries
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
            ..Self::default()
        }
    }

    pub fn with_entry(mut self, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        self.table.insert(prompt.into(), response.into());
        self
    }

    /// Responds with `response` to any prompt containing `needle`; rules are
    /// tried in insertion order after the exact-match table.
    pub fn with_rule(mut self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push((needle.into(), response.into()));
        self
    }

    pub fn with_behavior(mut self, behavior: MockBehavior) -> Self {
        self.behavior = behavior;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn fallback(&self, req: &CompletionRequest) -> Result<String, CallError> {
        let task = || {
            req.task.as_ref().ok_or_else(|| {
                CallError::Invalid("mock: untagged prompt has no table entry".into())
            })
        };
        match &self.behavior {
            MockBehavior::Error => Err(CallError::Invalid(format!(
                "mock: no table entry for prompt ({} bytes)",
                req.prompt.len()
            ))),
            MockBehavior::Constant(s) => Ok(s.clone()),
            MockBehavior::Echo => Ok(task()?.payload.join(" ")),
            MockBehavior::Extractive => {
                let task = task()?;
                let first = task.payload.first().cloned().unwrap_or_default();
                Ok(match task.kind {
                    TaskKind::Summarize | TaskKind::Rephrase => first,
                    TaskKind::Topic => first_content_words(&[first], 1)
                        .pop()
                        .unwrap_or_else(|| "none".into()),
                    TaskKind::Keywords => first_content_words(&task.payload, 8).join(", "),
                })
            }
        }
    }
}

fn first_content_words(lines: &[String], limit: usize) -> Vec<String> {
    let stop = Stopwords::english();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for line in lines {
        for w in surface_tokens(line) {
            if out.len() == limit {
                return out;
            }
            if !stop.contains(&w) && w.chars().all(char::is_alphabetic) && seen.insert(w.clone()) {
                out.push(w);
            }
        }
    }
    out
}

impl CompletionBackend for MockCompletion {
    fn id(&self) -> String {
        "mock-completion".into()
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, CallError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(v) = self.table.get(&req.prompt) {
            return Ok(v.clone());
        }
        if let Some((_, v)) = self
            .rules
            .iter()
            .find(|(n, _)| req.prompt.contains(n.as_str()))
        {
            return Ok(v.clone());
        }
        self.fallback(req)
    }
}

type CompletionFn = dyn Fn(&CompletionRequest) -> Result<String, CallError> + Send + Sync;

/// Completion mock backed by a closure.
pub struct FnCompletion {
    name: String,
    f: Box<CompletionFn>,
}

impl FnCompletion {
    pub fn new<F>(name: &str, f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<String, CallError> + Send + Sync + 'static,
    {
        Self {
            name: name.to_string(),
            f: Box::new(f),
        }
    }
}

impl CompletionBackend for FnCompletion {
    fn id(&self) -> String {
        format!("fn-completion:{}", self.name)
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, CallError> {
        (self.f)(req)
    }
}

/// 1.0 iff the trimmed strings are equal, else -1.0.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchEntailment;

impl EntailmentBackend for ExactMatchEntailment {
    fn id(&self) -> String {
        "mock-entailment:exact-match".into()
    }

    fn convention(&self) -> ScoreConvention {
        ScoreConvention::Signed
    }

    fn raw_score(&self, premise: &str, hypothesis: &str) -> Result<RawScore, CallError> {
        Ok(RawScore::Scalar(if premise.trim() == hypothesis.trim() {
            1.0
        } else {
            -1.0
        }))
    }
}

/// Jaccard similarity of content-stem sets, mapped to `2j - 1`. Two texts
/// without content tokens score -1.
#[derive(Debug, Default)]
pub struct TokenOverlapEntailment {
    memo: RwLock<HashMap<String, Arc<BTreeSet<String>>>>,
}

impl TokenOverlapEntailment {
    pub fn new() -> Self {
        Self::default()
    }

    fn stems(&self, text: &str) -> Arc<BTreeSet<String>> {
        if let Some(s) = self.memo.read().get(text) {
            return s.clone();
        }
        let set: Arc<BTreeSet<String>> = Arc::new(content_stems(text).into_iter().collect());
        self.memo.write().insert(text.to_string(), set.clone());
        set
    }

    pub fn jaccard(&self, a: &str, b: &str) -> f64 {
        let (a, b) = (self.stems(a), self.stems(b));
        let inter = a.intersection(&b).count();
        let union = a.len() + b.len() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

impl EntailmentBackend for TokenOverlapEntailment {
    fn id(&self) -> String {
        "mock-entailment:token-overlap".into()
    }

    fn convention(&self) -> ScoreConvention {
        ScoreConvention::Signed
    }

    fn raw_score(&self, premise: &str, hypothesis: &str) -> Result<RawScore, CallError> {
        Ok(RawScore::Scalar(
            2.0 * self.jaccard(premise, hypothesis) - 1.0,
        ))
    }
}

/// Extractor mock: picks the first `k` sentences.
#[derive(Debug, Default)]
pub struct LeadExtractor;

impl ExtractorBackend for LeadExtractor {
    fn id(&self) -> String {
        "mock-extractor:lead".into()
    }

    fn extract(
        &self,
        sentences: &[String],
        _: &str,
        _: &[String],
        k: usize,
    ) -> Result<Vec<usize>, CallError> {
        Ok((0..sentences.len().min(k)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::PromptTask;

    fn tagged(kind: TaskKind, payload: &[&str]) -> CompletionRequest {
        CompletionRequest {
            prompt: format!("{kind:?} {}", payload.join("|")),
            max_output_tokens: 10,
            temperature: 0.0,
            model_id: "m".into(),
            task: Some(PromptTask {
                kind,
                payload: payload.iter().map(|s| s.to_string()).collect(),
            }),
        }
    }

    #[test]
    fn extractive_behavior_by_task() {
        let m = MockCompletion::new(MockBehavior::Extractive);
        assert_eq!(
            m.complete(&tagged(TaskKind::Summarize, &["A b.", "C d."]))
                .unwrap(),
            "A b."
        );
        assert_eq!(
            m.complete(&tagged(TaskKind::Topic, &["The Rooms were big"]))
                .unwrap(),
            "rooms"
        );
        assert_eq!(
            m.complete(&tagged(
                TaskKind::Keywords,
                &["Great sound, great battery", "Cheap price"]
            ))
            .unwrap(),
            "great, sound, battery, cheap, price"
        );
        assert_eq!(m.calls(), 3);
    }

    #[test]
    fn rules_and_errors() {
        let m = MockCompletion::default().with_rule("Topic", "food");
        assert_eq!(
            m.complete(&tagged(TaskKind::Topic, &["x"])).unwrap(),
            "food"
        );
        assert!(m.complete(&tagged(TaskKind::Summarize, &["x"])).is_err());
    }

    #[test]
    fn token_overlap_scores() {
        let t = TokenOverlapEntailment::new();
        assert_eq!(
            t.raw_score("clean rooms", "The rooms were clean").unwrap(),
            RawScore::Scalar(1.0)
        );
        assert_eq!(
            t.raw_score("clean rooms", "noisy bar").unwrap(),
            RawScore::Scalar(-1.0)
        );
        assert_eq!(
            t.raw_score("clean room", "clean bar").unwrap(),
            RawScore::Scalar(2.0 / 3.0 - 1.0)
        );
        assert_eq!(t.raw_score("the", "a").unwrap(), RawScore::Scalar(-1.0));
    }
}
