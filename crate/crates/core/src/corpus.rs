//! Review data model, ingestion and dataset statistics.
//!
//! Three on-disk layouts are accepted. `generic_jsonl` is the interchange
//! format; the SPACE- and FewSum-shaped JSON files are normalized into the
//! same in-memory [`ReviewCorpus`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::textkit::split_sentences;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record {index}: {message}")]
    Record { index: usize, message: String },
    #[error("corpus is empty")]
    Empty,
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("unknown corpus format `{0}` (expected space_json, fewsum_json or generic_jsonl)")]
    UnknownFormat(String),
}

fn record_err(index: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Record {
        index,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub index_in_review: usize,
    pub review_id: String,
    pub rating: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub review_id: String,
    pub entity_id: String,
    pub rating: Option<u8>,
    pub sentences: Vec<Sentence>,
}

impl Review {
    /// Builds a review from already-split sentence texts; blank ones are dropped.
    pub fn from_sentences<I, S>(
        entity_id: &str,
        review_id: &str,
        rating: Option<u8>,
        sentences: I,
    ) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let sentences = sentences
            .into_iter()
            .map(|s| s.as_ref().trim().to_string())
            .filter(|s| !s.is_empty())
            .enumerate()
            .map(|(i, text)| Sentence {
                text,
                index_in_review: i,
                review_id: review_id.to_string(),
                rating,
            })
            .collect();
        Self {
            review_id: review_id.to_string(),
            entity_id: entity_id.to_string(),
            rating,
            sentences,
        }
    }

    pub fn from_text(entity_id: &str, review_id: &str, rating: Option<u8>, text: &str) -> Self {
        Self::from_sentences(entity_id, review_id, rating, split_sentences(text))
    }

    pub fn sentence_texts(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().map(|s| s.text.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Hotel,
    Product,
    Business,
}

impl EntityKind {
    /// The noun used in summarization prompts. Businesses are presented as
    /// products, like the rest of the aspect-agnostic data.
    pub fn prompt_noun(self) -> &'static str {
        match self {
            EntityKind::Hotel => "hotel",
            EntityKind::Product | EntityKind::Business => "product",
        }
    }
}

impl FromStr for EntityKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "hotel" => Ok(Self::Hotel),
            "product" => Ok(Self::Product),
            "business" => Ok(Self::Business),
            other => Err(format!("unknown entity kind `{other}`")),
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EntityKind::Hotel => "hotel",
            EntityKind::Product => "product",
            EntityKind::Business => "business",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityReviews {
    pub entity_id: String,
    pub entity_kind: EntityKind,
    pub reviews: Vec<Review>,
}

impl EntityReviews {
    /// All review sentences in review order: `combine` applied to the reviews.
    pub fn sentences(&self) -> Vec<String> {
        self.reviews
            .iter()
            .flat_map(|r| r.sentence_texts().map(str::to_string))
            .collect()
    }
}

/// The name used for the aspect-agnostic case.
pub const NONE_ASPECT: &str = "none";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AspectSpec {
    pub name: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub is_none_aspect: bool,
}

impl AspectSpec {
    pub fn new(name: &str, keywords: &[&str]) -> Self {
        let name = name.trim().to_lowercase();
        Self {
            is_none_aspect: name == NONE_ASPECT,
            name,
            keywords: keywords.iter().map(|k| k.trim().to_lowercase()).collect(),
        }
    }

    pub fn none() -> Self {
        Self::new(NONE_ASPECT, &[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub avg_reviews_per_entity: f64,
    pub avg_sentences_per_review: f64,
    pub avg_words_per_sentence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    SpaceJson,
    FewsumJson,
    GenericJsonl,
}

impl FromStr for CorpusFormat {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "space_json" | "space" => Ok(Self::SpaceJson),
            "fewsum_json" | "fewsum" => Ok(Self::FewsumJson),
            "generic_jsonl" | "jsonl" => Ok(Self::GenericJsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// Gold summaries for one (entity, aspect) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub entity_id: String,
    pub aspect: String,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReviewCorpus {
    pub entities: Vec<EntityReviews>,
    /// Keyed by (entity_id, aspect).
    pub references: BTreeMap<(String, String), Vec<String>>,
}

impl ReviewCorpus {
    pub fn entity(&self, entity_id: &str) -> Result<&EntityReviews, CorpusError> {
        self.entities
            .iter()
            .find(|e| e.entity_id == entity_id)
            .ok_or_else(|| CorpusError::UnknownEntity(entity_id.to_string()))
    }

    pub fn references(&self, entity_id: &str, aspect: &str) -> Option<&[String]> {
        self.references
            .get(&(entity_id.to_string(), aspect.to_string()))
            .map(Vec::as_slice)
    }

    pub fn reference_sets(&self) -> impl Iterator<Item = ReferenceSet> + '_ {
        self.references.iter().map(|((e, a), r)| ReferenceSet {
            entity_id: e.clone(),
            aspect: a.clone(),
            references: r.clone(),
        })
    }

    /// Serializes to the interchange format, references last.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entities {
            for r in &e.reviews {
                let text = r.sentence_texts().collect::<Vec<_>>().join(" ");
                let rec = serde_json::json!({
                    "entity_id": e.entity_id,
                    "entity_kind": e.entity_kind,
                    "review_id": r.review_id,
                    "rating": r.rating,
                    "text": text,
                });
                out.push_str(&rec.to_string());
                out.push('\n');
            }
        }
        for set in self.reference_sets() {
            out.push_str(&serde_json::to_string(&set).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

pub fn select_entity<'a>(
    corpus: &'a ReviewCorpus,
    entity_id: &str,
) -> Result<&'a EntityReviews, CorpusError> {
    corpus.entity(entity_id)
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<ReviewCorpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text, format)
}

pub fn parse_corpus(text: &str, format: CorpusFormat) -> Result<ReviewCorpus, CorpusError> {
    let mut builder = Builder::default();
    match format {
        CorpusFormat::GenericJsonl => parse_jsonl(text, &mut builder)?,
        CorpusFormat::SpaceJson => parse_space(text, &mut builder)?,
        CorpusFormat::FewsumJson => parse_fewsum(text, &mut builder)?,
    }
    builder.finish()
}

#[derive(Default)]
struct Builder {
    entities: BTreeMap<String, (EntityKind, BTreeMap<String, Review>)>,
    references: BTreeMap<(String, String), Vec<String>>,
}

impl Builder {
    fn add_review(
        &mut self,
        index: usize,
        kind: EntityKind,
        review: Review,
    ) -> Result<(), CorpusError> {
        if review.sentences.is_empty() {
            return Err(record_err(index, "review has no sentences"));
        }
        let entry = self
            .entities
            .entry(review.entity_id.clone())
            .or_insert_with(|| (kind, BTreeMap::new()));
        if entry.0 != kind {
            return Err(record_err(
                index,
                format!(
                    "entity `{}` declared as both {} and {}",
                    review.entity_id, entry.0, kind
                ),
            ));
        }
        if entry.1.contains_key(&review.review_id) {
            return Err(record_err(
                index,
                format!(
                    "duplicate review_id `{}` for entity `{}`",
                    review.review_id, review.entity_id
                ),
            ));
        }
        entry.1.insert(review.review_id.clone(), review);
        Ok(())
    }

    fn add_references(
        &mut self,
        index: usize,
        entity_id: &str,
        aspect: &str,
        refs: Vec<String>,
    ) -> Result<(), CorpusError> {
        let key = (entity_id.to_string(), aspect.trim().to_lowercase());
        if self.references.contains_key(&key) {
            return Err(record_err(
                index,
                format!("duplicate references for ({entity_id}, {aspect})"),
            ));
        }
        self.references.insert(key, refs);
        Ok(())
    }

    fn finish(self) -> Result<ReviewCorpus, CorpusError> {
        if self.entities.is_empty() {
            return Err(CorpusError::Empty);
        }
        let entities = self
            .entities
            .into_iter()
            .map(|(entity_id, (entity_kind, reviews))| EntityReviews {
                entity_id,
                entity_kind,
                reviews: reviews.into_values().collect(),
            })
            .collect();
        Ok(ReviewCorpus {
            entities,
            references: self.references,
        })
    }
}

fn check_rating(index: usize, rating: Option<i64>) -> Result<Option<u8>, CorpusError> {
    match rating {
        None => Ok(None),
        Some(r) if (1..=5).contains(&r) => Ok(Some(r as u8)),
        Some(r) => Err(record_err(index, format!("rating {r} outside 1..5"))),
    }
}

fn parse_kind(
    index: usize,
    raw: Option<&str>,
    default: EntityKind,
) -> Result<EntityKind, CorpusError> {
    match raw {
        None => Ok(default),
        Some(s) => s.parse().map_err(|m: String| record_err(index, m)),
    }
}

fn require_str<'a>(
    index: usize,
    obj: &'a serde_json::Map<String, serde_json::Value>,
    field: &str,
) -> Result<&'a str, CorpusError> {
    match obj.get(field) {
        Some(serde_json::Value::String(s)) if !s.trim().is_empty() => Ok(s),
        Some(serde_json::Value::Number(_)) => Err(record_err(
            index,
            format!("field `{field}` must be a string"),
        )),
        _ => Err(record_err(index, format!("missing field `{field}`"))),
    }
}

fn id_field(
    index: usize,
    obj: &serde_json::Map<String, serde_json::Value>,
    field: &str,
) -> Result<String, CorpusError> {
    match obj.get(field) {
        Some(serde_json::Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
        _ => Err(record_err(index, format!("missing field `{field}`"))),
    }
}

fn opt_rating(
    index: usize,
    obj: &serde_json::Map<String, serde_json::Value>,
) -> Result<Option<u8>, CorpusError> {
    match obj.get("rating") {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(v) => {
            let r = v
                .as_i64()
                .or_else(|| v.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64))
                .ok_or_else(|| record_err(index, "rating must be an integer or null"))?;
            check_rating(index, Some(r))
        }
    }
}

fn string_list(
    index: usize,
    v: Option<&serde_json::Value>,
    field: &str,
) -> Result<Vec<String>, CorpusError> {
    let arr = v
        .and_then(|v| v.as_array())
        .ok_or_else(|| record_err(index, format!("field `{field}` must be a list of strings")))?;
    arr.iter()
        .map(|x| {
            x.as_str().map(str::to_string).ok_or_else(|| {
                record_err(index, format!("field `{field}` must be a list of strings"))
            })
        })
        .collect()
}

fn parse_jsonl(text: &str, b: &mut Builder) -> Result<(), CorpusError> {
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| record_err(index, format!("line {}: invalid JSON: {e}", index + 1)))?;
        let obj = value
            .as_object()
            .ok_or_else(|| record_err(index, "record is not a JSON object"))?;
        let entity_id = id_field(index, obj, "entity_id")?;
        if obj.contains_key("references") {
            let aspect = require_str(index, obj, "aspect")?;
            let refs = string_list(index, obj.get("references"), "references")?;
            b.add_references(index, &entity_id, aspect, refs)?;
            continue;
        }
        let kind = parse_kind(
            index,
            obj.get("entity_kind").and_then(|v| v.as_str()),
            EntityKind::Product,
        )?;
        let review_id = id_field(index, obj, "review_id")?;
        let rating = opt_rating(index, obj)?;
        let text = require_str(index, obj, "text")?;
        b.add_review(
            index,
            kind,
            Review::from_text(&entity_id, &review_id, rating, text),
        )?;
    }
    Ok(())
}

/// SPACE layout: a JSON array of hotels, each
/// `{"entity_id", "reviews": [{"review_id", "rating", "sentences": [..]}], "summaries": {aspect: [..]}}`.
fn parse_space(text: &str, b: &mut Builder) -> Result<(), CorpusError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| record_err(0, format!("invalid JSON: {e}")))?;
    let entities = value
        .as_array()
        .ok_or_else(|| record_err(0, "expected a JSON array of entities"))?;
    let mut seen = BTreeSet::new();
    for (index, ent) in entities.iter().enumerate() {
        let obj = ent
            .as_object()
            .ok_or_else(|| record_err(index, "entity is not a JSON object"))?;
        let entity_id = id_field(index, obj, "entity_id")?;
        if !seen.insert(entity_id.clone()) {
            return Err(record_err(index, format!("duplicate entity `{entity_id}`")));
        }
        let reviews = obj
            .get("reviews")
            .and_then(|v| v.as_array())
            .ok_or_else(|| record_err(index, "missing field `reviews`"))?;
        for (ri, rv) in reviews.iter().enumerate() {
            let robj = rv
                .as_object()
                .ok_or_else(|| record_err(index, format!("review {ri} is not an object")))?;
            let review_id = id_field(index, robj, "review_id")?;
            let rating = opt_rating(index, robj)?;
            let review = if robj.contains_key("sentences") {
                let sents = string_list(index, robj.get("sentences"), "sentences")?;
                Review::from_sentences(&entity_id, &review_id, rating, sents)
            } else {
                Review::from_text(
                    &entity_id,
                    &review_id,
                    rating,
                    require_str(index, robj, "text")?,
                )
            };
            b.add_review(index, EntityKind::Hotel, review)?;
        }
        if let Some(summaries) = obj.get("summaries") {
            let map = summaries
                .as_object()
                .ok_or_else(|| record_err(index, "`summaries` must map aspect to a list"))?;
            for (aspect, refs) in map {
                let refs = string_list(index, Some(refs), "summaries")?;
                b.add_references(index, &entity_id, aspect, refs)?;
            }
        }
    }
    Ok(())
}

/// FewSum layout: a JSON array of products, each
/// `{"entity_id", "entity_kind"?, "reviews": [str | {"review_id"?, "rating"?, "text"}], "summaries"?: [..]}`.
fn parse_fewsum(text: &str, b: &mut Builder) -> Result<(), CorpusError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| record_err(0, format!("invalid JSON: {e}")))?;
    let entities = value
        .as_array()
        .ok_or_else(|| record_err(0, "expected a JSON array of entities"))?;
    let mut seen = BTreeSet::new();
    for (index, ent) in entities.iter().enumerate() {
        let obj = ent
            .as_object()
            .ok_or_else(|| record_err(index, "entity is not a JSON object"))?;
        let entity_id = id_field(index, obj, "entity_id")?;
        if !seen.insert(entity_id.clone()) {
            return Err(record_err(index, format!("duplicate entity `{entity_id}`")));
        }
        let kind = parse_kind(
            index,
            obj.get("entity_kind").and_then(|v| v.as_str()),
            EntityKind::Product,
        )?;
        let reviews = obj
            .get("reviews")
            .and_then(|v| v.as_array())
            .ok_or_else(|| record_err(index, "missing field `reviews`"))?;
        for (ri, rv) in reviews.iter().enumerate() {
            let review = match rv {
                serde_json::Value::String(t) => {
                    Review::from_text(&entity_id, &format!("{ri:04}"), None, t)
                }
                serde_json::Value::Object(robj) => {
                    let review_id = match robj.get("review_id") {
                        Some(_) => id_field(index, robj, "review_id")?,
                        None => format!("{ri:04}"),
                    };
                    let rating = opt_rating(index, robj)?;
                    Review::from_text(
                        &entity_id,
                        &review_id,
                        rating,
                        require_str(index, robj, "text")?,
                    )
                }
                _ => {
                    return Err(record_err(
                        index,
                        format!("review {ri} is not a string or object"),
                    ))
                }
            };
            b.add_review(index, kind, review)?;
        }
        if let Some(refs) = obj.get("summaries") {
            let refs = string_list(index, Some(refs), "summaries")?;
            b.add_references(index, &entity_id, NONE_ASPECT, refs)?;
        }
    }
    Ok(())
}

/// Arithmetic means over entities, reviews and sentences. Words are
/// whitespace-separated tokens of the raw sentence text.
pub fn corpus_stats(corpus: &ReviewCorpus) -> Result<CorpusStats, CorpusError> {
    if corpus.entities.is_empty() {
        return Err(CorpusError::Empty);
    }
    let n_entities = corpus.entities.len();
    let n_reviews: usize = corpus.entities.iter().map(|e| e.reviews.len()).sum();
    let sentences = corpus
        .entities
        .iter()
        .flat_map(|e| e.reviews.iter())
        .flat_map(|r| r.sentences.iter());
    let (n_sentences, n_words) = sentences.fold((0usize, 0usize), |(s, w), sent| {
        (s + 1, w + sent.text.split_whitespace().count())
    });
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(CorpusStats {
        avg_reviews_per_entity: ratio(n_reviews, n_entities),
        avg_sentences_per_review: ratio(n_sentences, n_reviews),
        avg_words_per_sentence: ratio(n_words, n_sentences),
    })
}
