//! Prompt construction and the token-budget estimate.

use serde::{Deserialize, Serialize};

use crate::corpus::{AspectSpec, EntityKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptBudget {
    /// Upper bound on the estimated prompt size, in service tokens.
    pub max_prompt_tokens: usize,
    /// Service tokens per whitespace-separated word.
    pub token_multiplier: f64,
    pub max_output_tokens: u32,
}

impl Default for PromptBudget {
    fn default() -> Self {
        Self {
            max_prompt_tokens: 3800,
            token_multiplier: 1.35,
            max_output_tokens: 256,
        }
    }
}

impl PromptBudget {
    pub fn estimate(&self, text: &str) -> usize {
        (text.split_whitespace().count() as f64 * self.token_multiplier).ceil() as usize
    }

    pub fn fits(&self, text: &str) -> bool {
        self.estimate(text) <= self.max_prompt_tokens
    }

    /// Longest prefix of `sentences` whose rendered prompt fits. Returns the
    /// kept count, or `None` if not even an empty body fits.
    pub fn fit_prefix<F>(&self, sentences: &[String], render: F) -> Option<usize>
    where
        F: Fn(&[String]) -> String,
    {
        if self.fits(&render(sentences)) {
            return Some(sentences.len());
        }
        if !self.fits(&render(&[])) {
            return None;
        }
        // The estimate is monotone in the number of body sentences.
        let (mut lo, mut hi) = (0usize, sentences.len());
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.fits(&render(&sentences[..mid])) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicExample {
    pub sentence: String,
    pub topic: String,
}

pub const TOPIC_INSTRUCTION: &str = "Describe the topic of each sentence in one word";
pub const KEYWORD_DIRECTIVE: &str =
    "Output up to eight comma-separated keywords that capture these reviews most saliently:";

pub fn topic_prompt(examples: &[TopicExample], sentence: &str) -> String {
    let mut p = String::from(TOPIC_INSTRUCTION);
    p.push_str("\n\n");
    for ex in examples {
        p.push_str(&format!(
            "Sentence: {}\nTopic: {}\n\n",
            ex.sentence, ex.topic
        ));
    }
    p.push_str(&format!("Sentence: {sentence}\nTopic:"));
    p
}

/// Who the summarized lines come from: raw reviews, or earlier summaries.
pub fn source_noun(summarized_upstream: bool) -> &'static str {
    if summarized_upstream {
        "accounts"
    } else {
        "reviewers"
    }
}

pub fn preamble(kind: EntityKind, summarized_upstream: bool) -> String {
    let noun = kind.prompt_noun();
    if summarized_upstream {
        format!("Here are some accounts of what some reviewers said about the {noun}")
    } else {
        format!("Here's what some reviewers said about a {noun}:")
    }
}

/// The aspect name, or the capitalized entity noun ("Product") when
/// summarizing without an aspect.
pub fn summary_target(kind: EntityKind, aspect: &AspectSpec) -> String {
    if aspect.is_none_aspect {
        let noun = kind.prompt_noun();
        let mut c = noun.chars();
        c.next()
            .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
            .unwrap_or_default()
    } else {
        aspect.name.clone()
    }
}

pub fn summarize_directive(
    kind: EntityKind,
    aspect: &AspectSpec,
    summarized_upstream: bool,
) -> String {
    format!(
        "Summarize what the {} said of the {}:",
        source_noun(summarized_upstream),
        summary_target(kind, aspect)
    )
}

pub fn summarize_prompt(
    kind: EntityKind,
    aspect: &AspectSpec,
    summarized_upstream: bool,
    sentences: &[String],
) -> String {
    let mut p = preamble(kind, summarized_upstream);
    p.push_str("\n\n");
    for s in sentences {
        p.push_str(s);
        p.push('\n');
    }
    p.push('\n');
    p.push_str(&summarize_directive(kind, aspect, summarized_upstream));
    p
}

pub fn keyword_prompt(reviews: &[String]) -> String {
    let mut p = String::new();
    for r in reviews {
        p.push_str(r);
        p.push('\n');
    }
    p.push('\n');
    p.push_str(KEYWORD_DIRECTIVE);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hotel_directives() {
        let rooms = AspectSpec::new("rooms", &[]);
        assert_eq!(
            summarize_directive(EntityKind::Hotel, &rooms, false),
            "Summarize what the reviewers said of the rooms:"
        );
        assert_eq!(
            summarize_directive(EntityKind::Hotel, &rooms, true),
            "Summarize what the accounts said of the rooms:"
        );
        assert_eq!(
            preamble(EntityKind::Hotel, false),
            "Here's what some reviewers said about a hotel:"
        );
        assert_eq!(
            preamble(EntityKind::Hotel, true),
            "Here are some accounts of what some reviewers said about the hotel"
        );
    }

    #[test]
    fn product_directives() {
        let none = AspectSpec::none();
        assert_eq!(
            summarize_directive(EntityKind::Product, &none, false),
            "Summarize what the reviewers said of the Product:"
        );
        assert_eq!(
            preamble(EntityKind::Business, false),
            "Here's what some reviewers said about a product:"
        );
    }

    #[test]
    fn prompt_layout() {
        let p = summarize_prompt(
            EntityKind::Hotel,
            &AspectSpec::new("food", &[]),
            false,
            &["A.".to_string(), "B.".to_string()],
        );
        assert_eq!(
            p,
            "Here's what some reviewers said about a hotel:\n\nA.\nB.\n\nSummarize what the reviewers said of the food:"
        );
        let t = topic_prompt(
            &[TopicExample {
                sentence: "Bed was soft.".into(),
                topic: "bed".into(),
            }],
            "Coffee was cold.",
        );
        assert_eq!(
            t,
            "Describe the topic of each sentence in one word\n\nSentence: Bed was soft.\nTopic: bed\n\nSentence: Coffee was cold.\nTopic:"
        );
    }

    #[test]
    fn budget_prefix() {
        let b = PromptBudget {
            max_prompt_tokens: 10,
            token_multiplier: 1.0,
            max_output_tokens: 1,
        };
        let sents: Vec<String> = (0..10).map(|i| format!("w{i} x")).collect();
        let render = |s: &[String]| format!("head {}", s.join(" "));
        // 1 + 2n <= 10 -> n = 4
        assert_eq!(b.fit_prefix(&sents, render), Some(4));
        assert_eq!(b.fit_prefix(&sents[..2], render), Some(2));
        let tight = PromptBudget {
            max_prompt_tokens: 0,
            ..b
        };
        assert_eq!(tight.fit_prefix(&sents, render), None);
        assert_eq!(PromptBudget::default().estimate("one two three"), 5);
    }
}
