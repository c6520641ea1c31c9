//! Evaluation of a set of summaries and the report files built from it.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backends::Entailer;
use crate::corpus::ReviewCorpus;
use crate::exec::Workers;
use crate::metrics::{
    complexity_pct, faithfulness_pct, lexical_genericity, mean_top_score, novel_ngram_pct, rouge,
    score_claims, semantic_genericity, Aggregate, GenericityReport, MetricError, RougeVariant,
    SupportHistogram, BIN_LABELS, DEFAULT_GENERICITY_TAU, DEFAULT_NGRAM_ORDERS,
    DEFAULT_SUPPORT_TAU,
};
use crate::pipeline::Summary;
use crate::rephrase::{AtomicClaim, SummaryRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    TopScore,
    Support,
    SemanticGenericity,
    LexicalGenericity,
    Complexity,
    Abstractiveness,
    Rouge,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::TopScore,
        Metric::Support,
        Metric::SemanticGenericity,
        Metric::LexicalGenericity,
        Metric::Complexity,
        Metric::Abstractiveness,
        Metric::Rouge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::TopScore => "top_score",
            Metric::Support => "support",
            Metric::SemanticGenericity => "semantic_genericity",
            Metric::LexicalGenericity => "lexical_genericity",
            Metric::Complexity => "complexity",
            Metric::Abstractiveness => "abstractiveness",
            Metric::Rouge => "rouge",
        }
    }

    pub fn needs_entailment(self) -> bool {
        matches!(
            self,
            Metric::TopScore | Metric::Support | Metric::SemanticGenericity
        )
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<&str> = Metric::ALL.iter().map(|m| m.name()).collect();
                format!("unknown metric `{s}`; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub metrics: Vec<Metric>,
    pub support_tau: f64,
    pub genericity_tau: f64,
    pub ngram_orders: Vec<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            metrics: Metric::ALL.to_vec(),
            support_tau: DEFAULT_SUPPORT_TAU,
            genericity_tau: DEFAULT_GENERICITY_TAU,
            ngram_orders: DEFAULT_NGRAM_ORDERS.to_vec(),
        }
    }
}

/// Thresholds and backends echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub metrics: Vec<Metric>,
    pub support_tau: f64,
    pub genericity_tau: f64,
    pub ngram_orders: Vec<usize>,
    pub support_comparison: String,
    pub genericity_pairs: String,
    pub idf: String,
    pub entailment_backend: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub pipeline: String,
    pub entity_id: String,
    pub aspect: String,
    pub sentences: usize,
    pub claims: usize,
    pub top_score: Option<f64>,
    pub support: Option<SupportHistogram>,
    pub faithfulness_pct: Option<f64>,
    pub lexical_idf: Option<f64>,
    pub complexity_pct: Option<f64>,
    pub novel_ngram_pct: BTreeMap<usize, Option<f64>>,
    pub rouge1_f1: Option<f64>,
    #[serde(rename = "rougeL_f1")]
    pub rouge_l_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetrics {
    pub pipeline: String,
    pub summaries: usize,
    pub claims: usize,
    pub top_score: Option<Aggregate>,
    /// Counts pooled over all claims of the pipeline.
    pub support_claim_weighted: Option<SupportHistogram>,
    /// Mean of per-summary bin percentages.
    pub support_summary_weighted: Option<[f64; 4]>,
    pub faithfulness_pct: Option<Aggregate>,
    pub semantic_genericity: Option<GenericityReport>,
    pub lexical_idf: Option<Aggregate>,
    /// Over all original sentences of the pipeline's summaries.
    pub complexity_pct: Option<Aggregate>,
    pub novel_ngram_pct: BTreeMap<usize, Option<Aggregate>>,
    pub rouge1_f1: Option<Aggregate>,
    #[serde(rename = "rougeL_f1")]
    pub rouge_l_f1: Option<Aggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: ReportConfig,
    pub summaries: Vec<SummaryMetrics>,
    pub pipelines: Vec<PipelineMetrics>,
}

/// A summary with its split-and-rephrased claims (possibly none).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub summary: Summary,
    pub claims: Vec<AtomicClaim>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{pipeline}/{entity_id}/{aspect}: {source}")]
    Metric {
        pipeline: String,
        entity_id: String,
        aspect: String,
        #[source]
        source: MetricError,
    },
    #[error("pipeline {0}: {1}")]
    Pipeline(String, #[source] MetricError),
    #[error("metrics {0:?} need an entailment backend")]
    NoEntailer(Vec<Metric>),
    #[error("entity `{0}` is not in the corpus")]
    UnknownEntity(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn tag(r: &SummaryRef, source: MetricError) -> ReportError {
    ReportError::Metric {
        pipeline: r.pipeline.clone(),
        entity_id: r.entity_id.clone(),
        aspect: r.aspect.clone(),
        source,
    }
}

/// Computes the selected metrics per summary and per pipeline. Items are
/// reported sorted by (pipeline, entity, aspect).
pub fn evaluate(
    items: &[EvalItem],
    corpus: &ReviewCorpus,
    entailer: Option<&Entailer>,
    workers: &Workers,
    settings: &EvalSettings,
) -> Result<MetricReport, ReportError> {
    let wants = |m: Metric| settings.metrics.contains(&m);
    let entailing: Vec<Metric> = settings
        .metrics
        .iter()
        .copied()
        .filter(|m| m.needs_entailment())
        .collect();
    if entailer.is_none() && !entailing.is_empty() {
        return Err(ReportError::NoEntailer(entailing));
    }
    let mut items: Vec<&EvalItem> = items.iter().collect();
    items.sort_by_key(|i| SummaryRef::of(&i.summary));

    let lexical = if wants(Metric::LexicalGenericity) && !items.is_empty() {
        let all: Vec<Summary> = items.iter().map(|i| i.summary.clone()).collect();
        Some(lexical_genericity(&all).map_err(|e| ReportError::Pipeline("*".into(), e))?)
    } else {
        None
    };

    let mut rows = Vec::with_capacity(items.len());
    for (idx, item) in items.iter().enumerate() {
        let s = &item.summary;
        let r = SummaryRef::of(s);
        let entity = corpus
            .entities
            .iter()
            .find(|e| e.entity_id == s.entity_id)
            .ok_or_else(|| ReportError::UnknownEntity(s.entity_id.clone()))?;
        let premises = entity.sentences();
        let mut row = SummaryMetrics {
            pipeline: s.pipeline.clone(),
            entity_id: s.entity_id.clone(),
            aspect: s.aspect.clone(),
            sentences: s.sentences.len(),
            claims: item.claims.len(),
            top_score: None,
            support: None,
            faithfulness_pct: None,
            lexical_idf: lexical.as_ref().and_then(|l| l.per_summary[idx]),
            complexity_pct: None,
            novel_ngram_pct: BTreeMap::new(),
            rouge1_f1: None,
            rouge_l_f1: None,
        };
        if (wants(Metric::TopScore) || wants(Metric::Support)) && !item.claims.is_empty() {
            let ent = entailer.expect("checked above");
            let scored = score_claims(&item.claims, &premises, ent, workers, settings.support_tau)
                .map_err(|e| tag(&r, e))?;
            if wants(Metric::TopScore) {
                row.top_score = mean_top_score(&scored);
            }
            if wants(Metric::Support) {
                let supports: Vec<usize> = scored.iter().map(|c| c.support_count).collect();
                row.support = Some(SupportHistogram::from_supports(
                    &supports,
                    settings.support_tau,
                ));
                row.faithfulness_pct = faithfulness_pct(&supports);
            }
        }
        if wants(Metric::Complexity) {
            row.complexity_pct = complexity_pct(s.sentences.iter().map(String::as_str));
        }
        if wants(Metric::Abstractiveness) {
            row.novel_ngram_pct = settings
                .ngram_orders
                .iter()
                .map(|&n| (n, novel_ngram_pct(&s.sentences, &premises, n)))
                .collect();
        }
        if wants(Metric::Rouge) {
            if let Some(refs) = corpus.references(&s.entity_id, &s.aspect) {
                let text = s.sentences.join(" ");
                row.rouge1_f1 = rouge(&text, refs, RougeVariant::Rouge1F1);
                row.rouge_l_f1 = rouge(&text, refs, RougeVariant::RougeLF1);
            }
        }
        rows.push(row);
    }

    let mut by_pipeline: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        by_pipeline
            .entry(row.pipeline.as_str())
            .or_default()
            .push(i);
    }
    let mut pipelines = Vec::new();
    for (name, idx) in by_pipeline {
        let pick = |f: &dyn Fn(&SummaryMetrics) -> Option<f64>| {
            Aggregate::of(&idx.iter().filter_map(|&i| f(&rows[i])).collect::<Vec<_>>())
        };
        let hists: Vec<SupportHistogram> = idx
            .iter()
            .filter_map(|&i| rows[i].support.clone())
            .collect();
        let semantic = if wants(Metric::SemanticGenericity) {
            let sets: Vec<Vec<String>> = idx
                .iter()
                .map(|&i| {
                    items[i]
                        .claims
                        .iter()
                        .map(|c| c.text.clone())
                        .collect::<Vec<_>>()
                })
                .filter(|c| !c.is_empty())
                .collect();
            if sets.len() >= 2 {
                let ent = entailer.expect("checked above");
                Some(
                    semantic_genericity(&sets, ent, workers, settings.genericity_tau)
                        .map_err(|e| ReportError::Pipeline(name.to_string(), e))?,
                )
            } else {
                log::warn!(
                    "pipeline {name}: semantic genericity needs at least 2 summaries with claims"
                );
                None
            }
        } else {
            None
        };
        let complexity = if wants(Metric::Complexity) {
            let sentences: Vec<&str> = idx
                .iter()
                .flat_map(|&i| items[i].summary.sentences.iter().map(String::as_str))
                .collect();
            complexity_pct(sentences.iter().copied()).map(|mean| Aggregate {
                mean,
                n: sentences.len(),
            })
        } else {
            None
        };
        pipelines.push(PipelineMetrics {
            pipeline: name.to_string(),
            summaries: idx.len(),
            claims: idx.iter().map(|&i| rows[i].claims).sum(),
            top_score: pick(&|r| r.top_score),
            support_claim_weighted: (!hists.is_empty())
                .then(|| SupportHistogram::pooled(&hists, settings.support_tau)),
            support_summary_weighted: SupportHistogram::summary_weighted(&hists),
            faithfulness_pct: pick(&|r| r.faithfulness_pct),
            semantic_genericity: semantic,
            lexical_idf: pick(&|r| r.lexical_idf),
            complexity_pct: complexity,
            novel_ngram_pct: if wants(Metric::Abstractiveness) {
                settings
                    .ngram_orders
                    .iter()
                    .map(|&n| (n, pick(&|r| r.novel_ngram_pct.get(&n).copied().flatten())))
                    .collect()
            } else {
                BTreeMap::new()
            },
            rouge1_f1: pick(&|r| r.rouge1_f1),
            rouge_l_f1: pick(&|r| r.rouge_l_f1),
        });
    }

    let mut metrics = settings.metrics.clone();
    metrics.sort();
    metrics.dedup();
    Ok(MetricReport {
        config: ReportConfig {
            metrics,
            support_tau: settings.support_tau,
            genericity_tau: settings.genericity_tau,
            ngram_orders: settings.ngram_orders.clone(),
            support_comparison: "score > tau".into(),
            genericity_pairs: "ordered pairs of distinct summaries within one pipeline".into(),
            idf: "ln(D / df), documents = sentences of all evaluated summaries".into(),
            entailment_backend: entailer.map(Entailer::backend_id),
        },
        summaries: rows,
        pipelines,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn agg(v: &Option<Aggregate>) -> String {
    cell(v.map(|a| a.mean))
}

impl MetricReport {
    /// The rows of one pipeline, with the shared configuration.
    pub fn for_pipeline(&self, pipeline: &str) -> MetricReport {
        MetricReport {
            config: self.config.clone(),
            summaries: self
                .summaries
                .iter()
                .filter(|s| s.pipeline == pipeline)
                .cloned()
                .collect(),
            pipelines: self
                .pipelines
                .iter()
                .filter(|p| p.pipeline == pipeline)
                .cloned()
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    fn ngram_orders(&self) -> &[usize] {
        if self.config.metrics.contains(&Metric::Abstractiveness) {
            &self.config.ngram_orders
        } else {
            &[]
        }
    }

    /// One row per summary, then one aggregate row per pipeline
    /// (`row_type = pipeline`, entity and aspect left blank).
    pub fn to_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "row_type",
            "pipeline",
            "entity_id",
            "aspect",
            "n",
            "claims",
            "top_score",
            "faithfulness_pct",
            "support_0",
            "support_1",
            "support_2-4",
            "support_5+",
            "semantic_g",
            "semantic_f_tau",
            "lexical_idf",
            "complexity_pct",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for n in self.ngram_orders() {
            header.push(format!("novel_{n}gram_pct"));
        }
        header.extend(["rouge1_f1".to_string(), "rougeL_f1".to_string()]);
        w.write_record(&header)?;
        for r in &self.summaries {
            let pct = |i: usize| cell(r.support.as_ref().map(|h| h.percentages[i]));
            let mut rec = vec![
                "summary".to_string(),
                r.pipeline.clone(),
                r.entity_id.clone(),
                r.aspect.clone(),
                "1".into(),
                r.claims.to_string(),
                cell(r.top_score),
                cell(r.faithfulness_pct),
                pct(0),
                pct(1),
                pct(2),
                pct(3),
                String::new(),
                String::new(),
                cell(r.lexical_idf),
                cell(r.complexity_pct),
            ];
            for n in self.ngram_orders() {
                rec.push(cell(r.novel_ngram_pct.get(n).copied().flatten()));
            }
            rec.extend([cell(r.rouge1_f1), cell(r.rouge_l_f1)]);
            w.write_record(&rec)?;
        }
        for p in &self.pipelines {
            let pct = |i: usize| cell(p.support_claim_weighted.as_ref().map(|h| h.percentages[i]));
            let mut rec = vec![
                "pipeline".to_string(),
                p.pipeline.clone(),
                String::new(),
                String::new(),
                p.summaries.to_string(),
                p.claims.to_string(),
                agg(&p.top_score),
                agg(&p.faithfulness_pct),
                pct(0),
                pct(1),
                pct(2),
                pct(3),
                cell(p.semantic_genericity.as_ref().map(|g| g.g)),
                cell(p.semantic_genericity.as_ref().map(|g| g.f_tau)),
                agg(&p.lexical_idf),
                agg(&p.complexity_pct),
            ];
            for n in self.ngram_orders() {
                rec.push(agg(&p.novel_ngram_pct.get(n).copied().flatten()));
            }
            rec.extend([agg(&p.rouge1_f1), agg(&p.rouge_l_f1)]);
            w.write_record(&rec)?;
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8"))
    }

    /// Support-bin percentages per pipeline, claim- and summary-weighted.
    pub fn histogram_csv(&self) -> Result<String, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["pipeline", "weighting", "claims", "tau"];
        header.extend(BIN_LABELS);
        w.write_record(&header)?;
        for p in &self.pipelines {
            if let Some(h) = &p.support_claim_weighted {
                let mut rec = vec![
                    p.pipeline.clone(),
                    "claim".into(),
                    h.claims().to_string(),
                    format!("{}", h.tau),
                ];
                rec.extend(h.percentages.iter().map(|v| format!("{v:.2}")));
                w.write_record(&rec)?;
            }
            if let Some(pcts) = &p.support_summary_weighted {
                let mut rec = vec![
                    p.pipeline.clone(),
                    "summary".into(),
                    p.claims.to_string(),
                    format!("{}", self.config.support_tau),
                ];
                rec.extend(pcts.iter().map(|v| format!("{v:.2}")));
                w.write_record(&rec)?;
            }
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::ExactMatchEntailment;
    use crate::corpus::{parse_corpus, CorpusFormat};
    use std::sync::Arc;

    fn corpus() -> ReviewCorpus {
        parse_corpus(
            r#"[{"entity_id": "h1", "reviews": [
                {"review_id": "a", "rating": 5, "sentences": ["The rooms were clean.", "Staff were kind."]},
                {"review_id": "b", "rating": 2, "sentences": ["The pool was cold.", "Staff were kind."]}],
              "summaries": {"rooms": ["The rooms were clean and the staff were kind."]}},
              {"entity_id": "h2", "reviews": [
                {"review_id": "c", "rating": 4, "sentences": ["Breakfast was great.", "Parking was free."]}]}]"#,
            CorpusFormat::SpaceJson,
        )
        .unwrap()
    }

    fn item(entity: &str, aspect: &str, pipeline: &str, sents: &[&str]) -> EvalItem {
        let summary = Summary {
            entity_id: entity.into(),
            aspect: aspect.into(),
            sentences: sents.iter().map(|s| s.to_string()).collect(),
            pipeline: pipeline.into(),
        };
        let r = SummaryRef::of(&summary);
        let claims = summary
            .sentences
            .iter()
            .enumerate()
            .map(|(i, s)| AtomicClaim {
                text: s.clone(),
                source_sentence_index: i,
                summary_ref: r.clone(),
                flags: vec![],
            })
            .collect();
        EvalItem { summary, claims }
    }

    #[test]
    fn verbatim_claims_score_one() {
        let ent = Entailer::new(Arc::new(ExactMatchEntailment));
        let items = vec![
            item(
                "h1",
                "rooms",
                "Q",
                &["The rooms were clean.", "Staff were kind."],
            ),
            item("h2", "rooms", "Q", &["Parking was free."]),
        ];
        let rep = evaluate(
            &items,
            &corpus(),
            Some(&ent),
            &Workers::new(2),
            &EvalSettings::default(),
        )
        .unwrap();
        let q = &rep.pipelines[0];
        assert_eq!(q.top_score.unwrap().mean, 1.0);
        assert_eq!(q.top_score.unwrap().n, 2);
        // "Staff were kind." has support 2 under exact match
        assert_eq!(
            rep.summaries[0].support.as_ref().unwrap().bins,
            [0, 1, 1, 0]
        );
        assert_eq!(rep.summaries[0].novel_ngram_pct[&3], Some(0.0));
        // 7 hypothesis tokens all matched among 9 reference tokens: P = 1, R = 7/9
        assert!((rep.summaries[0].rouge1_f1.unwrap() - 0.875).abs() < 1e-12);
        assert_eq!(rep.summaries[1].rouge1_f1, None);
        // disjoint claims across the two summaries
        let g = q.semantic_genericity.as_ref().unwrap();
        assert_eq!((g.g, g.pair_count), (-1.0, 2));
        assert_eq!(
            rep.config.entailment_backend.as_deref(),
            Some("mock-entailment:exact-match")
        );
    }

    #[test]
    fn csv_layouts() {
        let ent = Entailer::new(Arc::new(ExactMatchEntailment));
        let settings = EvalSettings {
            support_tau: 0.9,
            ..EvalSettings::default()
        };
        let rep = evaluate(
            &[item("h1", "rooms", "G", &["The rooms were clean."])],
            &corpus(),
            Some(&ent),
            &Workers::sequential(),
            &settings,
        )
        .unwrap();
        assert_eq!(rep.config.support_tau, 0.9);
        let hist = rep.histogram_csv().unwrap();
        let first = hist.lines().next().unwrap();
        assert_eq!(first, "pipeline,weighting,claims,tau,0,1,2-4,5+");
        assert!(hist.contains("G,claim,1,0.9,0.00,100.00,0.00,0.00"));
        let csv = rep.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().next().unwrap().contains("novel_3gram_pct"));
        assert!(csv.contains("\npipeline,G,,,1,"));
    }

    #[test]
    fn entailment_metrics_need_a_backend() {
        let items = vec![item("h1", "rooms", "G", &["x y z."])];
        let err = evaluate(
            &items,
            &corpus(),
            None,
            &Workers::sequential(),
            &EvalSettings::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ReportError::NoEntailer(_)));
        let surface = EvalSettings {
            metrics: vec![Metric::Complexity, Metric::Rouge],
            ..EvalSettings::default()
        };
        let rep = evaluate(&items, &corpus(), None, &Workers::sequential(), &surface).unwrap();
        assert_eq!(rep.summaries[0].top_score, None);
        assert_eq!(rep.summaries[0].complexity_pct, Some(0.0));
        assert!(rep.pipelines[0].novel_ngram_pct.is_empty());
    }

    #[test]
    fn metric_names_parse() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!("bleu".parse::<Metric>().is_err());
    }
}
