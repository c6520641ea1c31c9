//! Surface metrics: lexical genericity, complexity, abstractiveness, ROUGE.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{Aggregate, MetricError};
use crate::corpus::EntityReviews;
use crate::pipeline::Summary;
use crate::textkit::{content_stems, stem, surface_tokens};

pub const CONTRAST_WORDS: [&str; 7] = [
    "while", "but", "though", "although", "other", "others", "however",
];
pub const DEFAULT_NGRAM_ORDERS: [usize; 3] = [3, 4, 5];

/// `ln(D / df(w))` over the given documents, keyed by content stem.
pub fn idf_table(documents: &[String]) -> BTreeMap<String, f64> {
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for d in documents {
        for w in content_stems(d).into_iter().collect::<BTreeSet<_>>() {
            *df.entry(w).or_default() += 1;
        }
    }
    let total = documents.len() as f64;
    df.into_iter()
        .map(|(w, n)| (w, (total / n as f64).ln()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalGenericity {
    /// Number of documents (summary sentences) the IDF was computed over.
    pub documents: usize,
    /// Mean IDF per summary; `None` for summaries without content tokens.
    pub per_summary: Vec<Option<f64>>,
    pub per_pipeline: BTreeMap<String, Aggregate>,
}

/// Average IDF of each summary's content tokens, where the documents are
/// all sentences of all given summaries.
pub fn lexical_genericity(summaries: &[Summary]) -> Result<LexicalGenericity, MetricError> {
    if summaries.is_empty() {
        return Err(MetricError::Empty("summaries"));
    }
    let documents: Vec<String> = summaries
        .iter()
        .flat_map(|s| s.sentences.iter().cloned())
        .collect();
    let idf = idf_table(&documents);
    let per_summary: Vec<Option<f64>> = summaries
        .iter()
        .map(|s| {
            let stems: Vec<String> = s.sentences.iter().flat_map(|x| content_stems(x)).collect();
            if stems.is_empty() {
                log::warn!(
                    "summary {}/{}/{} has no content tokens; excluded from lexical genericity",
                    s.pipeline,
                    s.entity_id,
                    s.aspect
                );
                return None;
            }
            Some(stems.iter().map(|w| idf[w]).sum::<f64>() / stems.len() as f64)
        })
        .collect();
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (s, v) in summaries.iter().zip(&per_summary) {
        if let Some(v) = v {
            grouped.entry(s.pipeline.clone()).or_default().push(*v);
        }
    }
    let per_pipeline = grouped
        .into_iter()
        .filter_map(|(p, v)| Aggregate::of(&v).map(|a| (p, a)))
        .collect();
    Ok(LexicalGenericity {
        documents: documents.len(),
        per_summary,
        per_pipeline,
    })
}

pub fn is_contrasting(sentence: &str) -> bool {
    surface_tokens(sentence)
        .iter()
        .any(|w| CONTRAST_WORDS.contains(&w.as_str()))
}

/// Percentage of contrasting sentences; `None` without sentences.
pub fn complexity_pct<'a, I>(sentences: I) -> Option<f64>
where
    I: IntoIterator<Item = &'a str>,
{
    let (mut hits, mut total) = (0usize, 0usize);
    for s in sentences {
        total += 1;
        hits += usize::from(is_contrasting(s));
    }
    (total > 0).then(|| 100.0 * hits as f64 / total as f64)
}

/// Percentage of summary n-gram occurrences whose n-gram never occurs in
/// the review sentences. N-grams do not cross sentence boundaries.
/// `None` when no summary sentence has `n` tokens.
pub fn novel_ngram_pct(summary: &[String], reviews: &[String], n: usize) -> Option<f64> {
    assert!(n >= 1, "n-gram order must be >= 1");
    let seen: HashSet<Vec<String>> = reviews
        .iter()
        .flat_map(|r| {
            let t = surface_tokens(r);
            t.windows(n).map(<[String]>::to_vec).collect::<Vec<_>>()
        })
        .collect();
    let (mut novel, mut total) = (0usize, 0usize);
    for s in summary {
        for w in surface_tokens(s).windows(n) {
            total += 1;
            novel += usize::from(!seen.contains(w));
        }
    }
    (total > 0).then(|| 100.0 * novel as f64 / total as f64)
}

pub fn abstractiveness(
    summary: &Summary,
    reviews: &EntityReviews,
    orders: &[usize],
) -> BTreeMap<usize, Option<f64>> {
    let review_sentences = reviews.sentences();
    orders
        .iter()
        .map(|&n| (n, novel_ngram_pct(&summary.sentences, &review_sentences, n)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeVariant {
    Rouge1F1,
    RougeLF1,
}

/// Lowercased, Porter-stemmed tokens; stopwords are kept.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    surface_tokens(text).iter().map(|w| stem(w)).collect()
}

fn f1(overlap: usize, hyp: usize, reference: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp as f64;
    let r = overlap as f64 / reference as f64;
    2.0 * p * r / (p + r)
}

fn unigram_f1(hyp: &[String], reference: &[String]) -> f64 {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in reference {
        *counts.entry(w).or_default() += 1;
    }
    let mut overlap = 0;
    for w in hyp {
        if let Some(c) = counts.get_mut(w.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    f1(overlap, hyp.len(), reference.len())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Best score over the non-empty references; `None` if there are none.
pub fn rouge(summary: &str, references: &[String], variant: RougeVariant) -> Option<f64> {
    let hyp = rouge_tokens(summary);
    references
        .iter()
        .map(|r| rouge_tokens(r))
        .filter(|r| !r.is_empty())
        .map(|r| match variant {
            RougeVariant::Rouge1F1 => unigram_f1(&hyp, &r),
            RougeVariant::RougeLF1 => f1(lcs_len(&hyp, &r), hyp.len(), r.len()),
        })
        .fold(None, |best: Option<f64>, v| {
            Some(best.map_or(v, |b| b.max(v)))
        })
}

pub fn rouge1_f1(summary: &str, references: &[String]) -> Option<f64> {
    rouge(summary, references, RougeVariant::Rouge1F1)
}

#[allow(non_snake_case)]
pub fn rougeL_f1(summary: &str, references: &[String]) -> Option<f64> {
    rouge(summary, references, RougeVariant::RougeLF1)
}
