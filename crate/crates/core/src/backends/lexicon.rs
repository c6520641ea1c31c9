//! Word-vector lexicon (textual GloVe layout) and nearest-aspect lookup.

use std::collections::HashMap;
use std::path::Path;

use crate::corpus::AspectSpec;

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("failed to read lexicon {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("lexicon is empty")]
    Empty,
    #[error("aspect(s) missing from lexicon: {0}")]
    MissingAspects(String),
}

/// Unit-normalized word vectors, keyed by lowercase word.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingLexicon {
    pub dimension: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingLexicon {
    /// Builds a lexicon from raw vectors, normalizing each one.
    pub fn from_vectors<I, S>(entries: I) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut text = String::new();
        for (w, v) in entries {
            text.push_str(w.as_ref());
            for x in v {
                text.push(' ');
                text.push_str(&format!("{x:?}"));
            }
            text.push('\n');
        }
        parse_lexicon(&text)
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Every aspect name must have a vector before topic clustering can run.
    pub fn check_aspects(&self, aspects: &[AspectSpec]) -> Result<(), LexiconError> {
        let missing: Vec<_> = aspects
            .iter()
            .filter(|a| !a.is_none_aspect && self.get(&a.name).is_none())
            .map(|a| a.name.as_str())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(LexiconError::MissingAspects(missing.join(", ")))
        }
    }
}

pub fn load_lexicon(path: &Path) -> Result<EmbeddingLexicon, LexiconError> {
    let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_lexicon(&text)
}

pub fn parse_lexicon(text: &str) -> Result<EmbeddingLexicon, LexiconError> {
    let mut dimension = None;
    let mut vectors = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut parts = raw.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(|p| {
                p.parse::<f64>().map_err(|e| LexiconError::Line {
                    line,
                    message: format!("bad number `{p}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err(LexiconError::Line {
                line,
                message: "word has no vector".into(),
            });
        }
        match dimension {
            None => dimension = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(LexiconError::Line {
                    line,
                    message: format!("dimension {} differs from {d}", values.len()),
                })
            }
            _ => {}
        }
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(LexiconError::Line {
                line,
                message: "vector cannot be normalized".into(),
            });
        }
        vectors
            .entry(word.to_lowercase())
            .or_insert_with(|| values.iter().map(|x| x / norm).collect());
    }
    let dimension = dimension.ok_or(LexiconError::Empty)?;
    Ok(EmbeddingLexicon { dimension, vectors })
}

pub(crate) fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The aspect whose vector is closest (L2) to `word`'s; earlier aspects win
/// ties. `None` when the word, or every aspect, lacks a vector.
pub fn nearest_aspect<'a>(
    word: &str,
    aspects: &'a [AspectSpec],
    lexicon: &EmbeddingLexicon,
) -> Option<&'a AspectSpec> {
    let v = lexicon.get(word)?;
    let mut best: Option<(&AspectSpec, f64)> = None;
    for aspect in aspects {
        let Some(a) = lexicon.get(&aspect.name) else {
            continue;
        };
        let d = l2_distance(v, a);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((aspect, d));
        }
    }
    best.map(|(a, _)| a)
}
