use std::collections::{BTreeMap, BTreeSet};

use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::prompts::{keyword_prompt, summarize_prompt, topic_prompt};
use super::{
    chunk, ExtractScorer, PipelineError, PipelineSettings, ProvenanceEvent, ProvenanceRecord,
};
use crate::backends::{
    content_hash, nearest_aspect, CompletionRequest, EmbeddingLexicon, ExtractorBackend,
    PromptTask, TaskKind,
};
use crate::corpus::{AspectSpec, EntityKind, Review};
use crate::pipeline::run::PipelineEnv;
use crate::textkit::{content_stems, split_sentences};

type SortKey = (usize, usize, usize, usize);

/// Collects provenance from concurrent calls; sorted by (stage, round, item,
/// seq) on read so the log never depends on completion order.
#[derive(Debug, Default)]
pub(crate) struct Recorder {
    records: Mutex<Vec<(SortKey, ProvenanceRecord)>>,
}

impl Recorder {
    fn push(&self, key: SortKey, rec: ProvenanceRecord) {
        self.records.lock().push((key, rec));
    }

    pub(crate) fn sorted(&self) -> Vec<ProvenanceRecord> {
        let mut v = self.records.lock().clone();
        v.sort_by_key(|a| a.0);
        v.into_iter().map(|(_, r)| r).collect()
    }
}

/// Everything a stage needs: backends, settings and where to log calls.
pub struct StageCtx<'a> {
    pub env: &'a PipelineEnv,
    pub settings: &'a PipelineSettings,
    pub entity_kind: EntityKind,
    pub stage: usize,
    pub stage_kind: &'static str,
    pub(crate) recorder: &'a Recorder,
}

impl<'a> StageCtx<'a> {
    fn record(&self, key: SortKey, event: ProvenanceEvent, detail: String) {
        self.recorder.push(
            key,
            ProvenanceRecord {
                stage: self.stage,
                stage_kind: self.stage_kind.to_string(),
                event,
                round: Some(key.1),
                item: Some(key.2),
                task: None,
                input_hash: None,
                cache_key: None,
                prompt_tokens: None,
                prompt: None,
                detail: Some(detail),
            },
        );
    }

    /// Free-form note, ordered after the stage's calls.
    pub(crate) fn note(&self, detail: String) {
        self.recorder.push(
            (self.stage, usize::MAX, 0, 0),
            ProvenanceRecord {
                stage: self.stage,
                stage_kind: self.stage_kind.to_string(),
                event: ProvenanceEvent::Note,
                round: None,
                item: None,
                task: None,
                input_hash: None,
                cache_key: None,
                prompt_tokens: None,
                prompt: None,
                detail: Some(detail),
            },
        );
    }

    fn ask(
        &self,
        round: usize,
        item: usize,
        seq: usize,
        task: TaskKind,
        payload: Vec<String>,
        prompt: String,
    ) -> Result<String, PipelineError> {
        let budget = &self.settings.budget;
        let tokens = budget.estimate(&prompt);
        if tokens > budget.max_prompt_tokens {
            return Err(PipelineError::OverBudget {
                needed: tokens,
                max: budget.max_prompt_tokens,
            });
        }
        let req = CompletionRequest {
            prompt,
            max_output_tokens: budget.max_output_tokens,
            temperature: self.settings.temperature,
            model_id: self.settings.model_id.clone(),
            task: Some(PromptTask {
                kind: task,
                payload,
            }),
        };
        let out = self
            .env
            .completer
            .complete(&req)
            .map_err(|source| PipelineError::Backend {
                context: format!("{} round {round} item {item}", self.stage_kind),
                source,
            })?;
        self.recorder.push(
            (self.stage, round, item, seq),
            ProvenanceRecord {
                stage: self.stage,
                stage_kind: self.stage_kind.to_string(),
                event: ProvenanceEvent::Call,
                round: Some(round),
                item: Some(item),
                task: Some(task),
                input_hash: Some(content_hash(&req.prompt)),
                cache_key: Some(out.cache_key),
                prompt_tokens: Some(tokens),
                prompt: Some(req.prompt),
                detail: None,
            },
        );
        Ok(out.text)
    }

    /// Summarizes `sentences` in one call, truncating to the longest prefix
    /// that fits the prompt budget.
    fn summarize_once(
        &self,
        round: usize,
        item: usize,
        aspect: &AspectSpec,
        summarized_upstream: bool,
        sentences: &[String],
    ) -> Result<Vec<String>, PipelineError> {
        let render =
            |s: &[String]| summarize_prompt(self.entity_kind, aspect, summarized_upstream, s);
        let keep = self
            .settings
            .budget
            .fit_prefix(sentences, render)
            .ok_or_else(|| PipelineError::OverBudget {
                needed: self.settings.budget.estimate(&render(&[])),
                max: self.settings.budget.max_prompt_tokens,
            })?;
        if keep == 0 && !sentences.is_empty() {
            return Err(PipelineError::OverBudget {
                needed: self.settings.budget.estimate(&render(&sentences[..1])),
                max: self.settings.budget.max_prompt_tokens,
            });
        }
        if keep < sentences.len() {
            self.record(
                (self.stage, round, item, 0),
                ProvenanceEvent::Truncate,
                format!(
                    "kept {keep} of {} sentences to fit the prompt budget",
                    sentences.len()
                ),
            );
        }
        let body = &sentences[..keep];
        let text = self.ask(
            round,
            item,
            1,
            TaskKind::Summarize,
            body.to_vec(),
            render(body),
        )?;
        Ok(split_sentences(&text))
    }
}

/// First whitespace token, stripped of non-alphabetic edge characters, lowercased.
pub fn normalize_topic_word(response: &str) -> Option<String> {
    let first = response.split_whitespace().next()?;
    let word = first
        .trim_matches(|c: char| !c.is_alphabetic())
        .to_lowercase();
    (!word.is_empty()).then_some(word)
}

/// Sentences grouped by nearest aspect, in input order, plus sentences whose
/// topic word has no vector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TopicClusters {
    pub clusters: Vec<(String, Vec<String>)>,
    pub unassigned: Vec<String>,
}

impl TopicClusters {
    pub fn get(&self, aspect: &str) -> &[String] {
        self.clusters
            .iter()
            .find(|(a, _)| a == aspect)
            .map_or(&[], |(_, s)| s.as_slice())
    }

    pub fn total(&self) -> usize {
        self.unassigned.len() + self.clusters.iter().map(|(_, s)| s.len()).sum::<usize>()
    }
}

pub fn assign_topics(
    sentences: &[String],
    aspects: &[AspectSpec],
    lexicon: &EmbeddingLexicon,
    ctx: &StageCtx<'_>,
) -> Result<TopicClusters, PipelineError> {
    let candidates: Vec<AspectSpec> = aspects
        .iter()
        .filter(|a| !a.is_none_aspect)
        .cloned()
        .collect();
    if candidates.is_empty() {
        return Err(PipelineError::Config(
            "topic clustering needs at least one aspect".into(),
        ));
    }
    lexicon
        .check_aspects(&candidates)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let examples = &ctx.settings.topic_examples;
    let topics = ctx.env.workers.try_map(sentences, |i, s| {
        let prompt = topic_prompt(examples, s);
        let resp = ctx.ask(0, i, 0, TaskKind::Topic, vec![s.clone()], prompt)?;
        Ok::<_, PipelineError>(
            normalize_topic_word(&resp)
                .and_then(|w| nearest_aspect(&w, &candidates, lexicon))
                .map(|a| a.name.clone()),
        )
    })?;
    let mut clusters: Vec<(String, Vec<String>)> = candidates
        .iter()
        .map(|a| (a.name.clone(), Vec::new()))
        .collect();
    let mut unassigned = Vec::new();
    for (s, topic) in sentences.iter().zip(topics) {
        match topic {
            Some(name) => {
                let slot = clusters
                    .iter_mut()
                    .find(|(a, _)| *a == name)
                    .expect("candidate aspect");
                slot.1.push(s.clone());
            }
            None => unassigned.push(s.clone()),
        }
    }
    Ok(TopicClusters {
        clusters,
        unassigned,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkOutcome {
    pub sentences: Vec<String>,
    pub rounds: usize,
}

/// Repeatedly chunks and summarizes until fewer than `repeat_threshold`
/// sentences remain (or exactly once with `first_round_only`).
#[allow(clippy::too_many_arguments)]
pub fn chunk_summarize(
    sentences: &[String],
    aspect: &AspectSpec,
    ctx: &StageCtx<'_>,
    target: usize,
    repeat_threshold: usize,
    max_rounds: usize,
    first_round_only: bool,
    summarized_upstream: bool,
) -> Result<ChunkOutcome, PipelineError> {
    let mut current = sentences.to_vec();
    let mut upstream = summarized_upstream;
    let mut rounds = 0;
    loop {
        let done = if first_round_only {
            rounds == 1
        } else {
            current.len() < repeat_threshold
        };
        if done {
            break;
        }
        if rounds == max_rounds {
            return Err(PipelineError::NonTerminating {
                rounds,
                remaining: current.len(),
            });
        }
        let chunks = chunk(&current, target);
        let outputs = ctx.env.workers.try_map(&chunks, |i, c| {
            ctx.summarize_once(rounds, i, aspect, upstream, c.sentences)
        })?;
        current = outputs.into_iter().flatten().collect();
        rounds += 1;
        upstream = true;
        if current.is_empty() {
            return Err(PipelineError::EmptyOutput(format!("chunk round {rounds}")));
        }
    }
    Ok(ChunkOutcome {
        sentences: current,
        rounds,
    })
}

/// Review sentences grouped by rating, ascending, each in review order.
pub fn stratify(reviews: &[Review]) -> Result<BTreeMap<u8, Vec<String>>, PipelineError> {
    let mut strata: BTreeMap<u8, Vec<String>> = BTreeMap::new();
    for r in reviews {
        let rating = r
            .rating
            .ok_or_else(|| PipelineError::MissingRating(r.review_id.clone()))?;
        strata
            .entry(rating)
            .or_default()
            .extend(r.sentence_texts().map(str::to_string));
    }
    Ok(strata)
}

/// Summarizes each rating stratum separately; clusters too long for the
/// prompt are truncated to the longest prefix that fits.
pub fn stratify_summarize(
    reviews: &[Review],
    aspect: &AspectSpec,
    ctx: &StageCtx<'_>,
) -> Result<Vec<String>, PipelineError> {
    let strata: Vec<(u8, Vec<String>)> = stratify(reviews)?.into_iter().collect();
    let outputs = ctx.env.workers.try_map(&strata, |i, (_, sents)| {
        ctx.summarize_once(0, i, aspect, false, sents)
    })?;
    Ok(outputs.into_iter().flatten().collect())
}

/// Distinct content stems shared between `sentence` and the query stems.
pub fn lexical_relevance(sentence: &str, query: &BTreeSet<String>) -> usize {
    content_stems(sentence)
        .into_iter()
        .collect::<BTreeSet<_>>()
        .intersection(query)
        .count()
}

/// Keeps at most `k` sentences, preserving their original order.
pub fn extract_filter(
    sentences: &[String],
    aspect: &AspectSpec,
    keywords: &[String],
    k: usize,
    scorer: ExtractScorer,
    extractor: Option<&dyn ExtractorBackend>,
) -> Result<Vec<String>, PipelineError> {
    if k == 0 {
        return Err(PipelineError::Config("extract k must be >= 1".into()));
    }
    let mut picked: Vec<usize> = match scorer {
        ExtractScorer::ExternalEndpoint => {
            let ex = extractor.ok_or_else(|| {
                PipelineError::Config(
                    "extract_filter uses an external endpoint but none is configured".into(),
                )
            })?;
            let mut idx = ex
                .extract(sentences, &aspect.name, keywords, k)
                .map_err(|e| PipelineError::Extractor(e.to_string()))?;
            idx.retain(|&i| i < sentences.len());
            let mut seen = BTreeSet::new();
            idx.retain(|i| seen.insert(*i));
            idx.truncate(k);
            idx
        }
        ExtractScorer::LexicalBaseline => {
            let mut query: BTreeSet<String> =
                keywords.iter().flat_map(|kw| content_stems(kw)).collect();
            if !aspect.is_none_aspect {
                query.extend(content_stems(&aspect.name));
            }
            if query.is_empty() {
                return Err(PipelineError::MissingKeywords(aspect.name.clone()));
            }
            let mut scored: Vec<(usize, usize)> = sentences
                .iter()
                .enumerate()
                .map(|(i, s)| (lexical_relevance(s, &query), i))
                .collect();
            scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            scored.into_iter().take(k).map(|(_, i)| i).collect()
        }
    };
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| sentences[i].clone()).collect())
}

/// Splits on commas, trims, lowercases, drops empties, keeps at most eight.
pub fn parse_keywords(response: &str) -> Vec<String> {
    response
        .split(',')
        .map(|k| k.trim().trim_end_matches('.').trim().to_lowercase())
        .filter(|k| !k.is_empty())
        .take(8)
        .collect()
}

/// Samples `min(sample_size, n)` reviews with a seeded generator and asks
/// for salient keywords.
pub fn generate_keywords(
    reviews: &[Review],
    ctx: &StageCtx<'_>,
    sample_size: usize,
    seed: u64,
) -> Result<Vec<String>, PipelineError> {
    if reviews.is_empty() {
        return Err(PipelineError::Config(
            "keyword generation needs at least one review".into(),
        ));
    }
    let picked = sample_indices(reviews.len(), sample_size, seed);
    let texts: Vec<String> = picked
        .iter()
        .map(|&i| reviews[i].sentence_texts().collect::<Vec<_>>().join(" "))
        .collect();
    let prompt = keyword_prompt(&texts);
    let resp = ctx.ask(0, 0, 0, TaskKind::Keywords, texts, prompt)?;
    Ok(parse_keywords(&resp))
}

pub(crate) fn sample_indices(n: usize, sample_size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, sample_size.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

pub fn summarize_final(
    sentences: &[String],
    aspect: &AspectSpec,
    ctx: &StageCtx<'_>,
    summarized_upstream: bool,
) -> Result<Vec<String>, PipelineError> {
    if sentences.is_empty() {
        return Err(PipelineError::EmptyOutput("summarize_final input".into()));
    }
    let out = ctx.summarize_once(0, 0, aspect, summarized_upstream, sentences)?;
    if out.is_empty() {
        return Err(PipelineError::EmptyOutput("summarize_final".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{mock::LeadExtractor, Completer};
    use std::sync::Arc;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn topic_word_normalization() {
        assert_eq!(
            normalize_topic_word("Cleanliness!").as_deref(),
            Some("cleanliness")
        );
        assert_eq!(
            normalize_topic_word("  \"Food\" and drinks").as_deref(),
            Some("food")
        );
        assert_eq!(normalize_topic_word("..."), None);
        assert_eq!(normalize_topic_word(""), None);
    }

    #[test]
    fn keyword_parsing_caps_at_eight() {
        assert_eq!(
            parse_keywords("sound, battery, price"),
            s(&["sound", "battery", "price"])
        );
        let ten = (1..=10)
            .map(|i| format!("k{i}"))
            .collect::<Vec<_>>()
            .join(", ");
        let got = parse_keywords(&ten);
        assert_eq!(got.len(), 8);
        assert_eq!(got[7], "k8");
        assert_eq!(parse_keywords(" Sound ,, Bass."), s(&["sound", "bass"]));
    }

    #[test]
    fn sampling_is_seeded() {
        assert_eq!(sample_indices(20, 5, 7), sample_indices(20, 5, 7));
        assert_eq!(sample_indices(3, 5, 7), vec![0, 1, 2]);
        assert_eq!(sample_indices(20, 5, 7).len(), 5);
    }

    #[test]
    fn lexical_extract_ranking() {
        let food = AspectSpec::new("food", &["food", "breakfast"]);
        let sents = s(&["Nice lobby", "The breakfast was cold"]);
        let out = extract_filter(
            &sents,
            &food,
            &food.keywords,
            1,
            ExtractScorer::LexicalBaseline,
            None,
        )
        .unwrap();
        assert_eq!(out, s(&["The breakfast was cold"]));
        // k larger than input keeps everything in order
        let out = extract_filter(
            &sents,
            &food,
            &food.keywords,
            35,
            ExtractScorer::LexicalBaseline,
            None,
        )
        .unwrap();
        assert_eq!(out, sents);
    }

    #[test]
    fn lexical_extract_ties_prefer_earlier() {
        let a = AspectSpec::new("rooms", &[]);
        let sents = s(&["bar", "rooms big", "rooms small", "rooms"]);
        let out = extract_filter(&sents, &a, &[], 2, ExtractScorer::LexicalBaseline, None).unwrap();
        assert_eq!(out, s(&["rooms big", "rooms small"]));
    }

    #[test]
    fn lexical_extract_needs_keywords_for_none_aspect() {
        let err = extract_filter(
            &s(&["x"]),
            &AspectSpec::none(),
            &[],
            3,
            ExtractScorer::LexicalBaseline,
            None,
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::MissingKeywords(_)));
        assert!(err.to_string().contains("generate_keywords"));
    }

    #[test]
    fn external_extractor() {
        let sents = s(&["a", "b", "c", "d"]);
        let out = extract_filter(
            &sents,
            &AspectSpec::none(),
            &[],
            2,
            ExtractScorer::ExternalEndpoint,
            Some(&LeadExtractor),
        )
        .unwrap();
        assert_eq!(out, s(&["a", "b"]));
        assert!(extract_filter(
            &sents,
            &AspectSpec::none(),
            &[],
            2,
            ExtractScorer::ExternalEndpoint,
            None
        )
        .is_err());
    }

    #[test]
    fn stratify_groups_by_rating() {
        let reviews = vec![
            Review::from_sentences("e", "1", Some(5), ["Great.", "Loved it."]),
            Review::from_sentences("e", "2", Some(5), ["Fine."]),
            Review::from_sentences("e", "3", Some(1), ["Awful."]),
        ];
        let st = stratify(&reviews).unwrap();
        assert_eq!(st.len(), 2);
        assert_eq!(st[&5], s(&["Great.", "Loved it.", "Fine."]));
        assert_eq!(st[&1], s(&["Awful."]));
        let same = stratify(&reviews[..2]).unwrap();
        assert_eq!(same.len(), 1);
        let unrated = vec![Review::from_sentences("e", "9", None, ["Meh."])];
        assert!(matches!(stratify(&unrated), Err(PipelineError::MissingRating(id)) if id == "9"));
    }

    #[test]
    fn recorder_sorts_by_slot() {
        let r = Recorder::default();
        let env = PipelineEnv::new(Completer::new(Arc::new(
            crate::backends::mock::MockCompletion::default(),
        )));
        let settings = PipelineSettings::default();
        let ctx = StageCtx {
            env: &env,
            settings: &settings,
            entity_kind: EntityKind::Hotel,
            stage: 0,
            stage_kind: "x",
            recorder: &r,
        };
        ctx.record((0, 0, 2, 0), ProvenanceEvent::Note, "b".into());
        ctx.record((0, 0, 1, 0), ProvenanceEvent::Note, "a".into());
        let v = r.sorted();
        assert_eq!(v[0].detail.as_deref(), Some("a"));
    }
}
