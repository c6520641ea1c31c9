//! Split-and-rephrase: turns each summary sentence into atomic,
//! attribution-free claims with one completion call per sentence.

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Completer, CompletionRequest, PromptTask, TaskKind};
use crate::exec::Workers;
use crate::pipeline::{PromptBudget, Summary};

pub const REPHRASE_INSTRUCTION: &str =
    "Split each sentence into short standalone statements of opinion. \
Do not attribute the statements to anyone; state each opinion directly.";

pub const ATTRIBUTION_REMINDER: &str =
    "Remember: never mention reviewers, guests or anyone else; state the opinion itself.";

/// Attribution prefixes rejected by default. Matched case-insensitively
/// against the trimmed claim.
pub const DEFAULT_BLOCKLIST: &[&str] = &[
    r"^(the|some|many|most|several|a few|few|all|other)?\s*(reviewers?|guests?|customers?|users?|people|visitors|travell?ers|buyers|owners)\s+(said|say|says|mentioned|mention|noted|note|reported|report|felt|feel|thought|think|found|find|agreed|agree|stated|commented|liked|like|loved|love|complained|praised|described|appreciated|enjoyed)\b",
    r"^(according to|as noted by|as mentioned by)\s+(the\s+)?(reviewers?|guests?|customers?|users?)",
    r"^(it was|it is)\s+(said|mentioned|noted|reported)\s+that\b",
];

#[derive(Debug, thiserror::Error)]
pub enum RephraseError {
    #[error("summary for {0} has no sentences")]
    EmptySummary(String),
    #[error("sentence {index}: {source}")]
    Backend {
        index: usize,
        #[source]
        source: BackendError,
    },
    #[error("invalid blocklist pattern `{pattern}`: {message}")]
    Blocklist { pattern: String, message: String },
    #[error("sentence {index}: prompt needs ~{needed} tokens but the budget is {max}")]
    OverBudget {
        index: usize,
        needed: usize,
        max: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RephraseExample {
    pub sentence: String,
    pub claims: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RephraseSettings {
    pub instruction: String,
    pub examples: Vec<RephraseExample>,
    /// Regular expressions; a claim matching any of them is re-prompted once.
    pub blocklist: Vec<String>,
    pub model_id: String,
    pub temperature: f64,
    pub budget: PromptBudget,
}

impl Default for RephraseSettings {
    fn default() -> Self {
        Self {
            instruction: REPHRASE_INSTRUCTION.into(),
            examples: Vec::new(),
            blocklist: DEFAULT_BLOCKLIST.iter().map(|s| s.to_string()).collect(),
            model_id: "text-davinci-002".into(),
            temperature: 0.0,
            budget: PromptBudget::default(),
        }
    }
}

/// Compiled attribution patterns.
#[derive(Debug, Clone)]
pub struct Blocklist {
    patterns: Vec<Regex>,
}

impl Blocklist {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self, RephraseError> {
        let patterns = patterns
            .iter()
            .map(|p| {
                RegexBuilder::new(p.as_ref())
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| RephraseError::Blocklist {
                        pattern: p.as_ref().to_string(),
                        message: e.to_string(),
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { patterns })
    }

    pub fn is_attributed(&self, claim: &str) -> bool {
        let norm = claim.trim().to_lowercase();
        self.patterns.iter().any(|p| p.is_match(&norm))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SummaryRef {
    pub entity_id: String,
    pub aspect: String,
    pub pipeline: String,
}

impl SummaryRef {
    pub fn of(summary: &Summary) -> Self {
        Self {
            entity_id: summary.entity_id.clone(),
            aspect: summary.aspect.clone(),
            pipeline: summary.pipeline.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimFlag {
    /// Still matched the blocklist after the retry.
    AttributionRetained,
    /// The backend returned nothing; the sentence was kept as is.
    PassedThrough,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicClaim {
    pub text: String,
    pub source_sentence_index: usize,
    pub summary_ref: SummaryRef,
    pub flags: Vec<ClaimFlag>,
}

/// One line of a claims JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub entity_id: String,
    pub aspect: String,
    pub pipeline: String,
    pub sentence_index: usize,
    pub claim: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<ClaimFlag>,
}

impl From<&AtomicClaim> for ClaimRecord {
    fn from(c: &AtomicClaim) -> Self {
        Self {
            entity_id: c.summary_ref.entity_id.clone(),
            aspect: c.summary_ref.aspect.clone(),
            pipeline: c.summary_ref.pipeline.clone(),
            sentence_index: c.source_sentence_index,
            claim: c.text.clone(),
            flags: c.flags.clone(),
        }
    }
}

impl From<ClaimRecord> for AtomicClaim {
    fn from(r: ClaimRecord) -> Self {
        Self {
            text: r.claim,
            source_sentence_index: r.sentence_index,
            summary_ref: SummaryRef {
                entity_id: r.entity_id,
                aspect: r.aspect,
                pipeline: r.pipeline,
            },
            flags: r.flags,
        }
    }
}

pub fn claims_to_jsonl(claims: &[AtomicClaim]) -> String {
    claims
        .iter()
        .map(|c| serde_json::to_string(&ClaimRecord::from(c)).expect("claim serializes") + "\n")
        .collect()
}

pub fn claims_from_jsonl(text: &str) -> Result<Vec<AtomicClaim>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<ClaimRecord>(l).map(AtomicClaim::from))
        .collect()
}

pub fn rephrase_prompt(settings: &RephraseSettings, sentence: &str, remind: bool) -> String {
    let mut p = settings.instruction.clone();
    p.push_str("\n\n");
    for ex in &settings.examples {
        p.push_str(&format!("Sentence: {}\nStatements:\n", ex.sentence));
        for c in &ex.claims {
            p.push_str(&format!("- {c}\n"));
        }
        p.push('\n');
    }
    if remind {
        p.push_str(ATTRIBUTION_REMINDER);
        p.push_str("\n\n");
    }
    p.push_str(&format!("Sentence: {sentence}\nStatements:"));
    p
}

/// Splits a response into claims on newlines and bullet markers.
pub fn parse_claims(response: &str) -> Vec<String> {
    response
        .split(['\n', '•'])
        .map(strip_marker)
        .filter(|c| !c.is_empty())
        .map(str::to_string)
        .collect()
}

fn strip_marker(line: &str) -> &str {
    let line = line.trim();
    let line = line.trim_start_matches(['-', '*', '–']).trim_start();
    // "1." or "2)" numbering
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix(['.', ')']) {
            return r.trim();
        }
    }
    line
}

/// Rephrases every sentence of `summary`; claims come back ordered by
/// source sentence and every sentence yields at least one claim.
pub fn split_and_rephrase(
    summary: &Summary,
    completer: &Completer,
    settings: &RephraseSettings,
    workers: &Workers,
) -> Result<Vec<AtomicClaim>, RephraseError> {
    let summary_ref = SummaryRef::of(summary);
    if summary.sentences.is_empty() {
        return Err(RephraseError::EmptySummary(format!(
            "{}/{}/{}",
            summary_ref.pipeline, summary_ref.entity_id, summary_ref.aspect
        )));
    }
    let blocklist = Blocklist::new(&settings.blocklist)?;
    let per_sentence = workers.try_map(&summary.sentences, |index, sentence| {
        let ask = |remind: bool| -> Result<Vec<String>, RephraseError> {
            let prompt = rephrase_prompt(settings, sentence, remind);
            let needed = settings.budget.estimate(&prompt);
            if needed > settings.budget.max_prompt_tokens {
                return Err(RephraseError::OverBudget {
                    index,
                    needed,
                    max: settings.budget.max_prompt_tokens,
                });
            }
            let req = CompletionRequest {
                prompt,
                max_output_tokens: settings.budget.max_output_tokens,
                temperature: settings.temperature,
                model_id: settings.model_id.clone(),
                task: Some(PromptTask {
                    kind: TaskKind::Rephrase,
                    payload: vec![sentence.clone()],
                }),
            };
            let out = completer
                .complete(&req)
                .map_err(|source| RephraseError::Backend { index, source })?;
            Ok(parse_claims(&out.text))
        };
        let mut texts = ask(false)?;
        let mut flags = Vec::new();
        if texts.is_empty() {
            texts = vec![sentence.clone()];
            flags.push(ClaimFlag::PassedThrough);
        } else if texts.iter().any(|t| blocklist.is_attributed(t)) {
            let retry = ask(true)?;
            if !retry.is_empty() {
                texts = retry;
            }
            if texts.iter().any(|t| blocklist.is_attributed(t)) {
                log::warn!(
                    "sentence {index} of {summary_ref:?} still carries attribution after a retry"
                );
                flags.push(ClaimFlag::AttributionRetained);
            }
        }
        Ok(texts
            .into_iter()
            .map(|text| {
                let flags = if flags.contains(&ClaimFlag::AttributionRetained)
                    && !blocklist.is_attributed(&text)
                {
                    Vec::new()
                } else {
                    flags.clone()
                };
                AtomicClaim {
                    text,
                    source_sentence_index: index,
                    summary_ref: summary_ref.clone(),
                    flags,
                }
            })
            .collect::<Vec<_>>())
    })?;
    Ok(per_sentence.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{FnCompletion, MockBehavior, MockCompletion};
    use std::sync::Arc;

    fn summary(sents: &[&str]) -> Summary {
        Summary {
            entity_id: "h1".into(),
            aspect: "service".into(),
            sentences: sents.iter().map(|s| s.to_string()).collect(),
            pipeline: "TCG".into(),
        }
    }

    fn texts(c: &[AtomicClaim]) -> Vec<&str> {
        c.iter().map(|c| c.text.as_str()).collect()
    }

    #[test]
    fn compound_sentence_splits_in_two() {
        let mock = MockCompletion::new(MockBehavior::Extractive).with_rule(
            "Sentence: Most reviewers liked the service, but a few found it slow.\nStatements:",
            "- The service was good.\n- The service was slow.",
        );
        let c = Completer::new(Arc::new(mock));
        let s = summary(&[
            "Most reviewers liked the service, but a few found it slow.",
            "The rooms were clean.",
        ]);
        let claims =
            split_and_rephrase(&s, &c, &RephraseSettings::default(), &Workers::new(2)).unwrap();
        assert_eq!(
            texts(&claims),
            [
                "The service was good.",
                "The service was slow.",
                "The rooms were clean."
            ]
        );
        assert_eq!(
            claims
                .iter()
                .map(|c| c.source_sentence_index)
                .collect::<Vec<_>>(),
            [0, 0, 1]
        );
        assert!(claims.iter().all(|c| c.flags.is_empty()));
    }

    #[test]
    fn identity_mock_is_identity() {
        let c = Completer::new(Arc::new(MockCompletion::new(MockBehavior::Extractive)));
        let s = summary(&["The rooms were clean.", "Staff was rude."]);
        let claims =
            split_and_rephrase(&s, &c, &RephraseSettings::default(), &Workers::sequential())
                .unwrap();
        assert_eq!(texts(&claims), s.sentences);
    }

    #[test]
    fn attribution_triggers_one_retry() {
        let backend = FnCompletion::new("attr", |req: &CompletionRequest| {
            Ok(if req.prompt.contains(ATTRIBUTION_REMINDER) {
                "The pool was cold.".into()
            } else {
                "The guests said the pool was cold".into()
            })
        });
        let c = Completer::new(Arc::new(backend));
        let claims = split_and_rephrase(
            &summary(&["x"]),
            &c,
            &RephraseSettings::default(),
            &Workers::sequential(),
        )
        .unwrap();
        assert_eq!(texts(&claims), ["The pool was cold."]);
        assert_eq!(c.backend_calls(), 2);
        assert!(claims[0].flags.is_empty());
    }

    #[test]
    fn stubborn_attribution_is_kept_and_flagged() {
        let c = Completer::new(Arc::new(MockCompletion::new(MockBehavior::Constant(
            "Reviewers said the bar was loud.\nThe bar closes early.".into(),
        ))));
        let claims = split_and_rephrase(
            &summary(&["x"]),
            &c,
            &RephraseSettings::default(),
            &Workers::sequential(),
        )
        .unwrap();
        assert_eq!(c.backend_calls(), 2);
        assert_eq!(claims[0].flags, vec![ClaimFlag::AttributionRetained]);
        assert!(claims[1].flags.is_empty());
    }

    #[test]
    fn empty_response_passes_sentence_through() {
        let c = Completer::new(Arc::new(MockCompletion::new(MockBehavior::Constant(
            "  \n- \n".into(),
        ))));
        let claims = split_and_rephrase(
            &summary(&["Quiet at night."]),
            &c,
            &RephraseSettings::default(),
            &Workers::sequential(),
        )
        .unwrap();
        assert_eq!(texts(&claims), ["Quiet at night."]);
        assert_eq!(claims[0].flags, vec![ClaimFlag::PassedThrough]);
        assert!(split_and_rephrase(
            &summary(&[]),
            &c,
            &RephraseSettings::default(),
            &Workers::sequential()
        )
        .is_err());
    }

    #[test]
    fn bullet_parsing() {
        assert_eq!(
            parse_claims("- a\n* b\n1. c\n2) d\n• e • f"),
            ["a", "b", "c", "d", "e", "f"]
        );
        assert_eq!(parse_claims("A single claim."), ["A single claim."]);
        assert_eq!(parse_claims("3 rooms were dirty."), ["3 rooms were dirty."]);
    }

    #[test]
    fn blocklist_matching() {
        let b = Blocklist::new(DEFAULT_BLOCKLIST).unwrap();
        assert!(b.is_attributed("The guests said the pool was cold"));
        assert!(b.is_attributed("  the REVIEWERS mentioned noise"));
        assert!(b.is_attributed("According to the reviewers, it was fine."));
        assert!(!b.is_attributed("The pool was cold."));
        assert!(!b.is_attributed("Guest rooms were small."));
        assert!(Blocklist::new(&["("]).is_err());
    }

    #[test]
    fn prompt_layout() {
        let settings = RephraseSettings {
            examples: vec![RephraseExample {
                sentence: "S1".into(),
                claims: vec!["A.".into(), "B.".into()],
            }],
            ..RephraseSettings::default()
        };
        let p = rephrase_prompt(&settings, "S2", false);
        assert!(p.starts_with(REPHRASE_INSTRUCTION));
        assert!(p.contains("Sentence: S1\nStatements:\n- A.\n- B.\n\n"));
        assert!(p.ends_with("Sentence: S2\nStatements:"));
        assert!(rephrase_prompt(&settings, "S2", true).contains(ATTRIBUTION_REMINDER));
    }

    #[test]
    fn jsonl_round_trip() {
        let c = Completer::new(Arc::new(MockCompletion::new(MockBehavior::Extractive)));
        let claims = split_and_rephrase(
            &summary(&["A.", "B."]),
            &c,
            &RephraseSettings::default(),
            &Workers::sequential(),
        )
        .unwrap();
        let text = claims_to_jsonl(&claims);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(
            first,
            serde_json::json!({"entity_id": "h1", "aspect": "service", "pipeline": "TCG", "sentence_index": 0, "claim": "A."})
        );
        assert_eq!(claims_from_jsonl(&text).unwrap(), claims);
    }
}
