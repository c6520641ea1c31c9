use std::sync::Arc;

use super::stages::{
    assign_topics, chunk_summarize, extract_filter, generate_keywords, stratify_summarize,
    summarize_final, Recorder, StageCtx,
};
use super::{PipelineConfig, PipelineError, PipelineRun, ProvenanceRecord, StageSpec, Summary};
use crate::backends::{Completer, EmbeddingLexicon, ExtractorBackend};
use crate::corpus::{AspectSpec, EntityReviews};
use crate::exec::Workers;

/// Backends and worker pool shared by every stage.
#[derive(Clone)]
pub struct PipelineEnv {
    pub completer: Completer,
    pub extractor: Option<Arc<dyn ExtractorBackend>>,
    pub lexicon: Option<Arc<EmbeddingLexicon>>,
    pub workers: Workers,
}

impl PipelineEnv {
    pub fn new(completer: Completer) -> Self {
        Self {
            completer,
            extractor: None,
            lexicon: None,
            workers: Workers::sequential(),
        }
    }

    pub fn with_extractor(mut self, extractor: Arc<dyn ExtractorBackend>) -> Self {
        self.extractor = Some(extractor);
        self
    }

    pub fn with_lexicon(mut self, lexicon: Arc<EmbeddingLexicon>) -> Self {
        self.lexicon = Some(lexicon);
        self
    }

    pub fn with_workers(mut self, workers: Workers) -> Self {
        self.workers = workers;
        self
    }
}

/// A failed run: which stage failed and everything recorded before it.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage_index} ({stage_kind}): {source}")]
pub struct RunError {
    pub stage_index: usize,
    pub stage_kind: String,
    #[source]
    pub source: PipelineError,
    pub provenance: Vec<ProvenanceRecord>,
}

/// Runs every stage in order, feeding each the combined output of the
/// previous one. `intermediates[0]` holds the review sentences.
pub fn run_pipeline(
    config: &PipelineConfig,
    entity: &EntityReviews,
    aspect: &AspectSpec,
    env: &PipelineEnv,
) -> Result<PipelineRun, RunError> {
    let recorder = Recorder::default();
    let fail = |stage_index: usize, stage_kind: &str, source: PipelineError| RunError {
        stage_index,
        stage_kind: stage_kind.to_string(),
        source,
        provenance: recorder.sorted(),
    };
    config.validate().map_err(|e| fail(0, "config", e))?;

    let settings = &config.settings;
    let mut intermediates = vec![entity.sentences()];
    let mut summarized_upstream = false;

    for (i, spec) in config.stages.iter().enumerate() {
        let stage = i + 1;
        let ctx = StageCtx {
            env,
            settings,
            entity_kind: entity.entity_kind,
            stage,
            stage_kind: spec.name(),
            recorder: &recorder,
        };
        let input = intermediates.last().expect("S_0 present").clone();
        let out = run_stage(spec, &input, entity, aspect, &ctx, &mut summarized_upstream)
            .and_then(|out| {
                if out.is_empty() {
                    Err(PipelineError::EmptyOutput(spec.name().to_string()))
                } else {
                    Ok(out)
                }
            })
            .map_err(|e| fail(stage, spec.name(), e))?;
        intermediates.push(out);
    }

    let final_summary = Summary {
        entity_id: entity.entity_id.clone(),
        aspect: aspect.name.clone(),
        sentences: intermediates.last().cloned().unwrap_or_default(),
        pipeline: config.name.clone(),
    };
    Ok(PipelineRun {
        entity_id: entity.entity_id.clone(),
        aspect: aspect.clone(),
        chain: config.name.clone(),
        stages: config.stages.clone(),
        intermediates,
        final_summary,
        provenance: recorder.sorted(),
    })
}

fn run_stage(
    spec: &StageSpec,
    input: &[String],
    entity: &EntityReviews,
    aspect: &AspectSpec,
    ctx: &StageCtx<'_>,
    summarized_upstream: &mut bool,
) -> Result<Vec<String>, PipelineError> {
    match spec {
        StageSpec::TopicCluster => {
            if aspect.is_none_aspect {
                return Err(PipelineError::Config(
                    "topic clustering needs a named aspect".into(),
                ));
            }
            if !ctx.settings.aspects.iter().any(|a| a.name == aspect.name) {
                return Err(PipelineError::Config(format!(
                    "aspect `{}` is not among the configured topic-clustering aspects",
                    aspect.name
                )));
            }
            let lexicon = ctx.env.lexicon.as_deref().ok_or_else(|| {
                PipelineError::Config("topic clustering needs an embedding lexicon".into())
            })?;
            let clusters = assign_topics(input, &ctx.settings.aspects, lexicon, ctx)?;
            ctx.note(format!(
                "{} of {} sentences unassigned",
                clusters.unassigned.len(),
                clusters.total()
            ));
            Ok(clusters.get(&aspect.name).to_vec())
        }
        StageSpec::ChunkSummarize {
            target,
            repeat_threshold,
            max_rounds,
            first_round_only,
        } => {
            let outcome = chunk_summarize(
                input,
                aspect,
                ctx,
                *target,
                *repeat_threshold,
                *max_rounds,
                *first_round_only,
                *summarized_upstream,
            )?;
            if outcome.rounds > 0 {
                *summarized_upstream = true;
            }
            Ok(outcome.sentences)
        }
        StageSpec::StratifySummarize => stratify_summarize(&entity.reviews, aspect, ctx),
        StageSpec::ExtractFilter {
            k,
            scorer,
            generate_keywords: generate,
            keyword_sample_size,
        } => {
            let mut keywords = aspect.keywords.clone();
            if keywords.is_empty() && *generate {
                keywords = generate_keywords(
                    &entity.reviews,
                    ctx,
                    *keyword_sample_size,
                    ctx.settings.seed,
                )?;
                ctx.note(format!("generated keywords: {}", keywords.join(", ")));
            }
            extract_filter(
                input,
                aspect,
                &keywords,
                *k,
                *scorer,
                ctx.env.extractor.as_deref(),
            )
        }
        StageSpec::SummarizeFinal => summarize_final(input, aspect, ctx, *summarized_upstream),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{FnCompletion, MockBehavior, MockCompletion};
    use crate::backends::{CompletionRequest, TaskKind};
    use crate::corpus::{EntityKind, Review};
    use crate::pipeline::{PipelineSettings, ProvenanceEvent, TopicExample};

    fn entity(sentences_per_review: &[(Option<u8>, Vec<String>)]) -> EntityReviews {
        EntityReviews {
            entity_id: "h1".into(),
            entity_kind: EntityKind::Hotel,
            reviews: sentences_per_review
                .iter()
                .enumerate()
                .map(|(i, (r, s))| Review::from_sentences("h1", &format!("r{i}"), *r, s))
                .collect(),
        }
    }

    fn numbered(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("Sentence {i} is here.")).collect()
    }

    fn env(behavior: MockBehavior) -> PipelineEnv {
        PipelineEnv::new(Completer::new(Arc::new(MockCompletion::new(behavior))))
    }

    fn custom(stages: Vec<StageSpec>) -> PipelineConfig {
        PipelineConfig::custom("custom", stages, PipelineSettings::default()).unwrap()
    }

    #[test]
    fn chunk_round_with_lead_mock() {
        let e = entity(&[(Some(4), numbered(90))]);
        let run = run_pipeline(
            &custom(vec![StageSpec::chunk(false)]),
            &e,
            &AspectSpec::none(),
            &env(MockBehavior::Extractive),
        )
        .unwrap();
        assert_eq!(run.intermediates.len(), 2);
        assert_eq!(
            run.final_summary.sentences,
            vec![
                "Sentence 0 is here.",
                "Sentence 30 is here.",
                "Sentence 60 is here."
            ]
        );
        let calls = run
            .provenance
            .iter()
            .filter(|r| r.event == ProvenanceEvent::Call)
            .count();
        assert_eq!(calls, 3);
    }

    #[test]
    fn short_input_skips_chunking() {
        let e = entity(&[(None, numbered(10))]);
        let run = run_pipeline(
            &custom(vec![StageSpec::chunk(false)]),
            &e,
            &AspectSpec::none(),
            &env(MockBehavior::Error),
        )
        .unwrap();
        assert_eq!(run.intermediates[1], run.intermediates[0]);
        assert!(run.provenance.is_empty());
    }

    #[test]
    fn echo_mock_does_not_terminate() {
        let e = entity(&[(None, numbered(40))]);
        let err = run_pipeline(
            &custom(vec![StageSpec::chunk(false)]),
            &e,
            &AspectSpec::none(),
            &env(MockBehavior::Echo),
        )
        .unwrap_err();
        assert_eq!(err.stage_index, 1);
        assert!(matches!(
            err.source,
            PipelineError::NonTerminating {
                rounds: 6,
                remaining: 40
            }
        ));
        // six rounds of two chunks each were logged before giving up
        assert_eq!(err.provenance.len(), 12);
    }

    #[test]
    fn accounts_wording_after_chunking() {
        let e = entity(&[(None, numbered(40))]);
        let cfg = PipelineConfig::registered("CG", PipelineSettings::default()).unwrap();
        let run = run_pipeline(
            &cfg,
            &e,
            &AspectSpec::new("rooms", &[]),
            &env(MockBehavior::Extractive),
        )
        .unwrap();
        let prompts: Vec<&str> = run
            .provenance
            .iter()
            .filter_map(|r| r.prompt.as_deref())
            .collect();
        assert!(prompts[0].ends_with("Summarize what the reviewers said of the rooms:"));
        assert!(prompts[0].starts_with("Here's what some reviewers said about a hotel:"));
        let last = prompts.last().unwrap();
        assert!(last.ends_with("Summarize what the accounts said of the rooms:"));
        assert!(
            last.starts_with("Here are some accounts of what some reviewers said about the hotel")
        );
    }

    #[test]
    fn vanilla_chain_splits_response() {
        let e = entity(&[(Some(5), numbered(3))]);
        let cfg = PipelineConfig::registered("G", PipelineSettings::default()).unwrap();
        let env = env(MockBehavior::Constant(
            "Rooms were clean. Staff was rude.".into(),
        ));
        let run = run_pipeline(&cfg, &e, &AspectSpec::new("rooms", &[]), &env).unwrap();
        assert_eq!(
            run.final_summary.sentences,
            vec!["Rooms were clean.", "Staff was rude."]
        );
        assert_eq!(run.final_summary.pipeline, "G");
        let empty = env_const("");
        let err = run_pipeline(&cfg, &e, &AspectSpec::new("rooms", &[]), &empty).unwrap_err();
        assert!(matches!(err.source, PipelineError::EmptyOutput(_)));
    }

    fn env_const(s: &str) -> PipelineEnv {
        env(MockBehavior::Constant(s.into()))
    }

    #[test]
    fn stratified_cluster_is_truncated_to_budget() {
        // ten words per sentence, multiplier 1: 16 words of preamble and
        // directive leave room for exactly 100 sentences.
        let long: Vec<String> = (0..200)
            .map(|i| format!("Item {i} of this stay was mostly fine for us."))
            .collect();
        assert!(long.iter().all(|s| s.split_whitespace().count() == 10));
        let overhead = "Here's what some reviewers said about a hotel: Summarize what the reviewers said of the rooms:"
            .split_whitespace()
            .count();
        assert_eq!(overhead, 16);
        let mut settings = PipelineSettings::default();
        settings.budget.token_multiplier = 1.0;
        settings.budget.max_prompt_tokens = overhead + 100 * 10;
        let cfg =
            PipelineConfig::custom("R", vec![StageSpec::StratifySummarize], settings).unwrap();
        let e = entity(&[(Some(3), long.clone())]);
        let run = run_pipeline(
            &cfg,
            &e,
            &AspectSpec::new("rooms", &[]),
            &env(MockBehavior::Echo),
        )
        .unwrap();
        assert_eq!(run.intermediates[1], long[..100].to_vec());
        let trunc = run
            .provenance
            .iter()
            .find(|r| r.event == ProvenanceEvent::Truncate)
            .unwrap();
        assert!(trunc.detail.as_deref().unwrap().contains("kept 100 of 200"));
        for r in &run.provenance {
            assert!(r
                .prompt_tokens
                .is_none_or(|t| t <= cfg.settings.budget.max_prompt_tokens));
        }
    }

    #[test]
    fn stratify_requires_ratings() {
        let e = entity(&[(Some(3), numbered(2)), (None, numbered(2))]);
        let cfg = PipelineConfig::registered("RG", PipelineSettings::default()).unwrap();
        let err = run_pipeline(
            &cfg,
            &e,
            &AspectSpec::none(),
            &env(MockBehavior::Extractive),
        )
        .unwrap_err();
        assert!(matches!(err.source, PipelineError::MissingRating(_)));
    }

    fn topic_env() -> PipelineEnv {
        let backend = FnCompletion::new("topics", |req: &CompletionRequest| {
            let task = req.task.as_ref().unwrap();
            Ok(match task.kind {
                TaskKind::Topic if task.payload[0].contains("breakfast") => "Food.".to_string(),
                TaskKind::Topic if task.payload[0].contains("zzz") => "Qwerty".to_string(),
                TaskKind::Topic => "Rooms!".to_string(),
                _ => task.payload[0].clone(),
            })
        });
        let lexicon =
            EmbeddingLexicon::from_vectors([("rooms", vec![1.0, 0.0]), ("food", vec![0.0, 1.0])])
                .unwrap();
        PipelineEnv::new(Completer::new(Arc::new(backend)))
            .with_lexicon(Arc::new(lexicon))
            .with_workers(Workers::new(4))
    }

    fn topic_settings() -> PipelineSettings {
        PipelineSettings {
            aspects: vec![AspectSpec::new("rooms", &[]), AspectSpec::new("food", &[])],
            topic_examples: vec![TopicExample {
                sentence: "The bed was soft.".into(),
                topic: "bed".into(),
            }],
            ..PipelineSettings::default()
        }
    }

    #[test]
    fn tcg_runs_topic_chunk_and_final() {
        let mut sents = numbered(50);
        sents.push("The breakfast was cold.".into());
        sents.push("Noise zzz all night.".into());
        let e = entity(&[(Some(2), sents)]);
        let cfg = PipelineConfig::registered("TCG", topic_settings()).unwrap();
        let run = run_pipeline(&cfg, &e, &AspectSpec::new("rooms", &[]), &topic_env()).unwrap();
        assert_eq!(run.intermediates.len(), cfg.stages.len() + 1);
        assert_eq!(run.intermediates[1].len(), 50);
        assert_eq!(
            run.intermediates[2],
            vec!["Sentence 0 is here.", "Sentence 25 is here."]
        );
        assert_eq!(run.final_summary.sentences, vec!["Sentence 0 is here."]);
        let note = run
            .provenance
            .iter()
            .find(|r| r.event == ProvenanceEvent::Note)
            .unwrap();
        assert_eq!(note.detail.as_deref(), Some("1 of 52 sentences unassigned"));

        let food = run_pipeline(&cfg, &e, &AspectSpec::new("food", &[]), &topic_env()).unwrap();
        assert_eq!(food.intermediates[1], vec!["The breakfast was cold."]);
    }

    #[test]
    fn topic_clustering_needs_examples_and_lexicon() {
        let e = entity(&[(Some(2), numbered(3))]);
        let cfg = PipelineConfig::registered("TCG", PipelineSettings::default()).unwrap();
        assert!(run_pipeline(&cfg, &e, &AspectSpec::new("rooms", &[]), &topic_env()).is_err());
        let cfg = PipelineConfig::registered("TCG", topic_settings()).unwrap();
        let no_lex = env(MockBehavior::Extractive);
        let err = run_pipeline(&cfg, &e, &AspectSpec::new("rooms", &[]), &no_lex).unwrap_err();
        assert!(matches!(err.source, PipelineError::Config(_)));
    }

    #[test]
    fn qg_generates_keywords_then_extracts() {
        let mut sents = numbered(40);
        sents.insert(7, "The breakfast buffet was superb.".into());
        let e = entity(&[(Some(2), sents.clone())]);
        let settings = PipelineSettings {
            seed: 3,
            ..PipelineSettings::default()
        };
        let backend = FnCompletion::new("kw", |req: &CompletionRequest| {
            let task = req.task.as_ref().unwrap();
            Ok(match task.kind {
                TaskKind::Keywords => "breakfast, buffet".to_string(),
                _ => task.payload[0].clone(),
            })
        });
        let env = PipelineEnv::new(Completer::new(Arc::new(backend)));
        let cfg = PipelineConfig::custom("Q", vec![StageSpec::extract(3)], settings).unwrap();
        let run = run_pipeline(&cfg, &e, &AspectSpec::none(), &env).unwrap();
        // one sentence scores 2, the rest tie at 0 and the earliest win
        assert_eq!(
            run.final_summary.sentences,
            vec![
                "Sentence 0 is here.",
                "Sentence 1 is here.",
                "The breakfast buffet was superb."
            ]
        );
        assert!(run
            .provenance
            .iter()
            .any(|r| r.detail.as_deref() == Some("generated keywords: breakfast, buffet")));
    }

    #[test]
    fn mock_runs_are_byte_identical() {
        let mut sents = numbered(80);
        sents.push("The breakfast was cold.".into());
        let e = entity(&[(Some(2), sents)]);
        let cfg = PipelineConfig::registered("TCG", topic_settings()).unwrap();
        let a = serde_json::to_string(
            &run_pipeline(&cfg, &e, &AspectSpec::new("rooms", &[]), &topic_env()).unwrap(),
        )
        .unwrap();
        let b = serde_json::to_string(
            &run_pipeline(&cfg, &e, &AspectSpec::new("rooms", &[]), &topic_env()).unwrap(),
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
