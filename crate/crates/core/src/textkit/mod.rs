//! Deterministic text processing: sentence splitting, tokenization,
//! stopword marking, Porter stemming and n-gram multisets.

mod porter;
mod split;
mod stopwords;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use porter::stem;
pub use split::{split_sentences, SentenceSplitter, DEFAULT_ABBREVIATIONS};
pub use stopwords::{Stopwords, ENGLISH_STOPWORDS};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TextError {
    #[error("n-gram order must be at least 1, got {0}")]
    InvalidOrder(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub stem: String,
    pub is_stopword: bool,
}

/// Lowercased alphanumeric runs; everything else is a separator, so pure
/// punctuation never yields a token.
pub fn surface_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Tokenizer<'a> {
    stopwords: &'a Stopwords,
}

impl Default for Tokenizer<'static> {
    fn default() -> Self {
        Self {
            stopwords: Stopwords::english(),
        }
    }
}

impl<'a> Tokenizer<'a> {
    pub fn new(stopwords: &'a Stopwords) -> Self {
        Self { stopwords }
    }

    pub fn tokenize(&self, sentence: &str) -> Vec<Token> {
        surface_tokens(sentence)
            .into_iter()
            .map(|surface| Token {
                stem: stem(&surface),
                is_stopword: self.stopwords.contains(&surface),
                surface,
            })
            .collect()
    }

    /// Stems of the non-stopword tokens, in order, with repetition.
    pub fn content_stems(&self, sentence: &str) -> Vec<String> {
        self.tokenize(sentence)
            .into_iter()
            .filter(|t| !t.is_stopword)
            .map(|t| t.stem)
            .collect()
    }
}

pub fn tokenize(sentence: &str) -> Vec<Token> {
    Tokenizer::default().tokenize(sentence)
}

pub fn content_stems(sentence: &str) -> Vec<String> {
    Tokenizer::default().content_stems(sentence)
}

/// Multiset of consecutive n-grams over surface tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NgramMultiset {
    pub n: usize,
    pub counts: BTreeMap<Vec<String>, usize>,
}

impl NgramMultiset {
    pub fn from_tokens(tokens: &[String], n: usize) -> Result<Self, TextError> {
        if n == 0 {
            return Err(TextError::InvalidOrder(n));
        }
        let mut counts = BTreeMap::new();
        for window in tokens.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
        Ok(Self { n, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn contains(&self, gram: &[String]) -> bool {
        self.counts.contains_key(gram)
    }
}

pub fn ngrams(sentence: &str, n: usize) -> Result<NgramMultiset, TextError> {
    NgramMultiset::from_tokens(&surface_tokens(sentence), n)
}
