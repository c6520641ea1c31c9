//! Evaluation metrics. Entailment-based ones (support, top score,
//! semantic genericity) live here; surface metrics are in `text` and
//! agreement statistics in `stats`.

mod stats;
mod text;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Entailer};
use crate::exec::Workers;
use crate::rephrase::AtomicClaim;

pub use stats::{fleiss_kappa, mid_ranks, pearson, spearman};
pub use text::{
    abstractiveness, complexity_pct, idf_table, is_contrasting, lexical_genericity,
    novel_ngram_pct, rouge, rouge1_f1, rougeL_f1, rouge_tokens, LexicalGenericity, RougeVariant,
    CONTRAST_WORDS, DEFAULT_NGRAM_ORDERS,
};

pub const DEFAULT_SUPPORT_TAU: f64 = 0.75;
pub const DEFAULT_GENERICITY_TAU: f64 = 0.5;
pub const BIN_LABELS: [&str; 4] = ["0", "1", "2-4", "5+"];

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("entailment of claim {claim} against premise {premise}: {source}")]
    Backend {
        claim: usize,
        premise: usize,
        #[source]
        source: BackendError,
    },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("semantic genericity needs at least 2 summaries, got {0}")]
    TooFewSummaries(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Mean of a sample together with its size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub n: usize,
}

impl Aggregate {
    /// Unweighted mean; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        (!values.is_empty()).then(|| Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            n: values.len(),
        })
    }
}

/// `scores[c][p] = e(premises[p], hypotheses[c])`, computed concurrently
/// and assembled in input order.
pub fn entailment_matrix(
    hypotheses: &[String],
    premises: &[String],
    entailer: &Entailer,
    workers: &Workers,
) -> Result<Vec<Vec<f64>>, MetricError> {
    let m = premises.len();
    let cells: Vec<usize> = (0..hypotheses.len() * m).collect();
    let flat = workers.try_map(&cells, |_, &cell| {
        let (c, p) = (cell / m, cell % m);
        entailer
            .score(&premises[p], &hypotheses[c])
            .map_err(|source| MetricError::Backend {
                claim: c,
                premise: p,
                source,
            })
    })?;
    Ok(if m == 0 {
        vec![Vec::new(); hypotheses.len()]
    } else {
        flat.chunks(m).map(<[f64]>::to_vec).collect()
    })
}

/// Number of scores strictly above `tau`.
pub fn support_count(scores: &[f64], tau: f64) -> usize {
    scores.iter().filter(|&&s| s > tau).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimScore {
    pub claim: AtomicClaim,
    pub top_score: f64,
    pub support_count: usize,
    /// Index of the first review sentence reaching the top score.
    pub top_premise: usize,
    #[serde(skip)]
    pub scores: Vec<f64>,
}

impl ClaimScore {
    pub fn from_scores(
        claim: AtomicClaim,
        scores: Vec<f64>,
        tau: f64,
    ) -> Result<Self, MetricError> {
        let (top_premise, top_score) = scores
            .iter()
            .copied()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
                Some((_, b)) if b >= s => best,
                _ => Some((i, s)),
            })
            .ok_or(MetricError::Empty("review sentences"))?;
        Ok(Self {
            claim,
            top_score,
            support_count: support_count(&scores, tau),
            top_premise,
            scores,
        })
    }
}

/// Scores every claim against every review sentence.
pub fn score_claims(
    claims: &[AtomicClaim],
    premises: &[String],
    entailer: &Entailer,
    workers: &Workers,
    tau: f64,
) -> Result<Vec<ClaimScore>, MetricError> {
    if claims.is_empty() {
        return Err(MetricError::Empty("claims"));
    }
    if premises.is_empty() {
        return Err(MetricError::Empty("review sentences"));
    }
    let texts: Vec<String> = claims.iter().map(|c| c.text.clone()).collect();
    let matrix = entailment_matrix(&texts, premises, entailer, workers)?;
    claims
        .iter()
        .zip(matrix)
        .map(|(c, row)| ClaimScore::from_scores(c.clone(), row, tau))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopScore {
    pub claims: Vec<ClaimScore>,
    /// Mean top score over the summary's claims.
    pub mean: f64,
}

pub fn top_score(
    claims: &[AtomicClaim],
    premises: &[String],
    entailer: &Entailer,
    workers: &Workers,
) -> Result<TopScore, MetricError> {
    let claims = score_claims(claims, premises, entailer, workers, DEFAULT_SUPPORT_TAU)?;
    Ok(TopScore {
        mean: mean_top_score(&claims).expect("claims non-empty"),
        claims,
    })
}

pub fn mean_top_score(scores: &[ClaimScore]) -> Option<f64> {
    Aggregate::of(&scores.iter().map(|c| c.top_score).collect::<Vec<_>>()).map(|a| a.mean)
}

/// System score: unweighted mean of per-summary means.
pub fn system_mean(per_summary: &[f64]) -> Option<f64> {
    Aggregate::of(per_summary).map(|a| a.mean)
}

/// Support sizes binned as 0, 1, 2-4 and 5+.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportHistogram {
    pub tau: f64,
    pub bins: [usize; 4],
    pub percentages: [f64; 4],
}

pub fn bin_index(support: usize) -> usize {
    match support {
        0 => 0,
        1 => 1,
        2..=4 => 2,
        _ => 3,
    }
}

impl SupportHistogram {
    pub fn from_supports(supports: &[usize], tau: f64) -> Self {
        let mut bins = [0usize; 4];
        for &s in supports {
            bins[bin_index(s)] += 1;
        }
        Self::from_bins(bins, tau)
    }

    pub fn from_bins(bins: [usize; 4], tau: f64) -> Self {
        let total: usize = bins.iter().sum();
        let percentages = if total == 0 {
            [0.0; 4]
        } else {
            bins.map(|b| 100.0 * b as f64 / total as f64)
        };
        Self {
            tau,
            bins,
            percentages,
        }
    }

    pub fn claims(&self) -> usize {
        self.bins.iter().sum()
    }

    /// Claim-weighted: counts pooled across summaries.
    pub fn pooled(hists: &[SupportHistogram], tau: f64) -> Self {
        let mut bins = [0usize; 4];
        for h in hists {
            for (b, v) in bins.iter_mut().zip(h.bins) {
                *b += v;
            }
        }
        Self::from_bins(bins, tau)
    }

    /// Summary-weighted: mean of per-summary percentages, skipping summaries
    /// without claims.
    pub fn summary_weighted(hists: &[SupportHistogram]) -> Option<[f64; 4]> {
        let used: Vec<&SupportHistogram> = hists.iter().filter(|h| h.claims() > 0).collect();
        if used.is_empty() {
            return None;
        }
        let mut out = [0.0; 4];
        for h in &used {
            for (o, p) in out.iter_mut().zip(h.percentages) {
                *o += p;
            }
        }
        Some(out.map(|v| v / used.len() as f64))
    }
}

pub fn support_histogram(
    claims: &[AtomicClaim],
    premises: &[String],
    entailer: &Entailer,
    workers: &Workers,
    tau: f64,
) -> Result<SupportHistogram, MetricError> {
    let scored = score_claims(claims, premises, entailer, workers, tau)?;
    let supports: Vec<usize> = scored.iter().map(|c| c.support_count).collect();
    Ok(SupportHistogram::from_supports(&supports, tau))
}

/// Percentage of claims with at least three supports, from raw counts.
pub fn faithfulness_pct(supports: &[usize]) -> Option<f64> {
    (!supports.is_empty()).then(|| {
        100.0 * supports.iter().filter(|&&s| s >= 3).count() as f64 / supports.len() as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericityReport {
    /// Mean similarity over ordered pairs of distinct summaries.
    pub g: f64,
    /// Mean fraction of claims whose best match exceeds `tau`.
    pub f_tau: f64,
    pub tau: f64,
    pub pair_count: usize,
}

/// Similarity of `Z'` to `Z`: for each `z'`, the best score `e(z, z')`
/// over `z` in `Z`. Rows are indexed by `z'`.
fn best_matches(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Pairwise genericity within one system's summaries.
pub fn semantic_genericity(
    claim_sets: &[Vec<String>],
    entailer: &Entailer,
    workers: &Workers,
    tau: f64,
) -> Result<GenericityReport, MetricError> {
    if claim_sets.len() < 2 {
        return Err(MetricError::TooFewSummaries(claim_sets.len()));
    }
    if claim_sets.iter().any(Vec::is_empty) {
        return Err(MetricError::Empty("claim set"));
    }
    let offsets: Vec<usize> = claim_sets
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s.len();
            Some(o)
        })
        .collect();
    // one task per hypothesis z' (set j, claim b): scores against every
    // claim of every other set
    let rows: Vec<(usize, usize)> = claim_sets
        .iter()
        .enumerate()
        .flat_map(|(j, s)| (0..s.len()).map(move |b| (j, b)))
        .collect();
    let scored = workers.try_map(&rows, |_, &(j, b)| {
        let hyp = &claim_sets[j][b];
        let mut per_set: Vec<Vec<f64>> = Vec::with_capacity(claim_sets.len());
        for (i, set) in claim_sets.iter().enumerate() {
            if i == j {
                per_set.push(Vec::new());
                continue;
            }
            let row = set
                .iter()
                .enumerate()
                .map(|(a, z)| {
                    entailer
                        .score(z, hyp)
                        .map_err(|source| MetricError::Backend {
                            claim: offsets[j] + b,
                            premise: offsets[i] + a,
                            source,
                        })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            per_set.push(row);
        }
        Ok::<_, MetricError>(per_set)
    })?;
    let k = claim_sets.len();
    let (mut g_sum, mut f_sum, mut pairs) = (0.0, 0.0, 0usize);
    for j in 0..k {
        let hyp_rows = &scored[offsets[j]..offsets[j] + claim_sets[j].len()];
        for i in (0..k).filter(|&i| i != j) {
            let rows: Vec<Vec<f64>> = hyp_rows.iter().map(|r| r[i].clone()).collect();
            let best = best_matches(&rows);
            g_sum += best.iter().sum::<f64>() / best.len() as f64;
            f_sum += best.iter().filter(|&&v| v > tau).count() as f64 / best.len() as f64;
            pairs += 1;
        }
    }
    Ok(GenericityReport {
        g: g_sum / pairs as f64,
        f_tau: f_sum / pairs as f64,
        tau,
        pair_count: pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{ExactMatchEntailment, TokenOverlapEntailment};
    use crate::rephrase::SummaryRef;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn claim(t: &str) -> AtomicClaim {
        AtomicClaim {
            text: t.into(),
            source_sentence_index: 0,
            summary_ref: SummaryRef {
                entity_id: "e".into(),
                aspect: "a".into(),
                pipeline: "p".into(),
            },
            flags: Vec::new(),
        }
    }

    fn strs(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn exact() -> Entailer {
        Entailer::new(Arc::new(ExactMatchEntailment))
    }

    #[test]
    fn top_score_exact_match() {
        let premises = strs(&["The pool was cold.", "Staff were kind."]);
        let r = top_score(
            &[claim("Staff were kind."), claim("Parking was free.")],
            &premises,
            &exact(),
            &Workers::sequential(),
        )
        .unwrap();
        assert_eq!(r.claims[0].top_score, 1.0);
        assert_eq!(r.claims[0].top_premise, 1);
        assert_eq!(r.claims[1].top_score, -1.0);
        assert_eq!(r.mean, 0.0);
        assert!(top_score(&[], &premises, &exact(), &Workers::sequential()).is_err());
    }

    #[test]
    fn system_mean_is_per_summary_first() {
        // summary A: 1 claim at 0.8; summary B: 3 claims averaging 0.4
        let a = [0.8];
        let b = [0.2, 0.4, 0.6];
        let per_summary = [a.iter().sum::<f64>() / 1.0, b.iter().sum::<f64>() / 3.0];
        let sys = system_mean(&per_summary).unwrap();
        assert!((sys - 0.6).abs() < 1e-12);
        let pooled: f64 = (0.8 + 0.2 + 0.4 + 0.6) / 4.0;
        assert!((pooled - 0.5).abs() < 1e-12);
        assert!(system_mean(&[]).is_none());
    }

    #[test]
    fn histogram_bins() {
        assert_eq!(bin_index(0), 0);
        assert_eq!(bin_index(1), 1);
        assert_eq!(bin_index(2), 2);
        assert_eq!(bin_index(3), 2);
        assert_eq!(bin_index(4), 2);
        assert_eq!(bin_index(5), 3);
        let h = SupportHistogram::from_supports(&[0, 3, 6, 6], 0.75);
        assert_eq!(h.bins, [1, 0, 1, 2]);
        assert_eq!(h.percentages, [25.0, 0.0, 25.0, 50.0]);
    }

    #[test]
    fn six_supports_land_in_top_bin() {
        let premises = strs(&[
            "breakfast buffet great",
            "great breakfast buffet",
            "Breakfast buffet was great!",
            "the breakfast buffet, great",
            "buffet breakfast: great",
            "Great buffet breakfast.",
            "great breakfast buffet lobby",
            "lobby was dark",
        ]);
        let hyp = "The breakfast buffet was great.";
        let tok = TokenOverlapEntailment::new();
        // brute force: premises whose score exceeds 0.75
        let expected = premises
            .iter()
            .filter(|p| 2.0 * tok.jaccard(p, hyp) - 1.0 > 0.75)
            .count();
        assert_eq!(expected, 6);
        let ent = Entailer::new(Arc::new(TokenOverlapEntailment::new()));
        let h = support_histogram(&[claim(hyp)], &premises, &ent, &Workers::new(3), 0.75).unwrap();
        assert_eq!(h.bins, [0, 0, 0, 1]);
        let h = support_histogram(
            &[claim("Parking was free.")],
            &premises,
            &ent,
            &Workers::sequential(),
            0.75,
        )
        .unwrap();
        assert_eq!(h.bins, [1, 0, 0, 0]);
    }

    #[test]
    fn support_threshold_is_strict() {
        assert_eq!(support_count(&[0.75, 0.7500001, 1.0], 0.75), 2);
    }

    #[test]
    fn faithfulness_counts() {
        assert_eq!(faithfulness_pct(&[5, 5, 5]), Some(100.0));
        let v = faithfulness_pct(&[0, 2, 3]).unwrap();
        assert!((v - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(faithfulness_pct(&[]), None);
    }

    #[test]
    fn weighting_modes_differ() {
        let a = SupportHistogram::from_supports(&[0], 0.75);
        let b = SupportHistogram::from_supports(&[5, 5, 5], 0.75);
        let pooled = SupportHistogram::pooled(&[a.clone(), b.clone()], 0.75);
        assert_eq!(pooled.percentages, [25.0, 0.0, 0.0, 75.0]);
        assert_eq!(
            SupportHistogram::summary_weighted(&[a, b]).unwrap(),
            [50.0, 0.0, 0.0, 50.0]
        );
    }

    #[test]
    fn genericity_identical_and_disjoint() {
        let same = vec![strs(&["a b", "c d"]), strs(&["a b", "c d"])];
        let r = semantic_genericity(&same, &exact(), &Workers::sequential(), 0.5).unwrap();
        assert_eq!((r.g, r.f_tau, r.pair_count), (1.0, 1.0, 2));
        let disjoint = vec![strs(&["a b"]), strs(&["x y"])];
        let r = semantic_genericity(&disjoint, &exact(), &Workers::sequential(), 0.5).unwrap();
        assert_eq!((r.g, r.f_tau), (-1.0, 0.0));
        assert!(matches!(
            semantic_genericity(&same[..1], &exact(), &Workers::sequential(), 0.5),
            Err(MetricError::TooFewSummaries(1))
        ));
    }

    fn brute_genericity(
        sets: &[Vec<String>],
        tok: &TokenOverlapEntailment,
        tau: f64,
    ) -> (f64, f64, usize) {
        let e = |p: &str, h: &str| 2.0 * tok.jaccard(p, h) - 1.0;
        let (mut g, mut f, mut n) = (0.0, 0.0, 0);
        for (i, zi) in sets.iter().enumerate() {
            for (j, zj) in sets.iter().enumerate() {
                if i == j {
                    continue;
                }
                let mut sim = 0.0;
                let mut hits = 0.0;
                for zp in zj {
                    let mut best = f64::NEG_INFINITY;
                    for z in zi {
                        best = best.max(e(z, zp));
                    }
                    sim += best;
                    if best > tau {
                        hits += 1.0;
                    }
                }
                g += sim / zj.len() as f64;
                f += hits / zj.len() as f64;
                n += 1;
            }
        }
        (g / n as f64, f / n as f64, n)
    }

    #[test]
    fn three_summaries_give_six_pairs() {
        let sets = vec![
            strs(&["rooms clean", "staff kind"]),
            strs(&["rooms dirty"]),
            strs(&["staff kind helpful", "pool cold", "rooms clean big"]),
        ];
        let tok = TokenOverlapEntailment::new();
        let (g, f, n) = brute_genericity(&sets, &tok, 0.5);
        let ent = Entailer::new(Arc::new(TokenOverlapEntailment::new()));
        let r = semantic_genericity(&sets, &ent, &Workers::new(4), 0.5).unwrap();
        assert_eq!(r.pair_count, 6);
        assert_eq!(n, 6);
        assert!((r.g - g).abs() <= 1e-9);
        assert!((r.f_tau - f).abs() <= 1e-9);
    }

    const WORDS: &[&str] = &[
        "room", "clean", "staff", "kind", "pool", "cold", "bed", "soft", "view", "loud",
    ];

    fn sentence() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(WORDS), 1..5).prop_map(|w| w.join(" "))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn support_matches_double_loop_and_permutation(
            claims in prop::collection::vec(sentence(), 1..8),
            premises in prop::collection::vec(sentence(), 1..20),
            seed in any::<u64>(),
        ) {
            let tok = TokenOverlapEntailment::new();
            let ent = Entailer::new(Arc::new(TokenOverlapEntailment::new()));
            let cs: Vec<AtomicClaim> = claims.iter().map(|c| claim(c)).collect();
            let scored = score_claims(&cs, &premises, &ent, &Workers::new(2), 0.75).unwrap();
            for (c, s) in claims.iter().zip(&scored) {
                let mut n = 0;
                let mut top = f64::NEG_INFINITY;
                for p in &premises {
                    let v = 2.0 * tok.jaccard(p, c) - 1.0;
                    if v > 0.75 { n += 1; }
                    top = top.max(v);
                }
                prop_assert_eq!(s.support_count, n);
                prop_assert_eq!(s.top_score, top);
            }
            let mut shuffled = premises.clone();
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let again = score_claims(&cs, &shuffled, &ent, &Workers::sequential(), 0.75).unwrap();
            for (a, b) in scored.iter().zip(&again) {
                prop_assert_eq!(a.support_count, b.support_count);
                prop_assert_eq!(a.top_score, b.top_score);
            }
        }

        #[test]
        fn raising_tau_never_adds_support(
            sets in prop::collection::vec(prop::collection::vec(sentence(), 1..4), 2..5),
        ) {
            let ent = Entailer::new(Arc::new(TokenOverlapEntailment::new()));
            let premises: Vec<String> = sets.iter().flatten().cloned().collect();
            let cs: Vec<AtomicClaim> = sets[0].iter().map(|c| claim(c)).collect();
            let mut prev_support: Option<Vec<usize>> = None;
            let mut prev_f = f64::INFINITY;
            for tau in [0.5, 0.6, 0.75, 0.9] {
                let s: Vec<usize> = score_claims(&cs, &premises, &ent, &Workers::sequential(), tau)
                    .unwrap().iter().map(|c| c.support_count).collect();
                if let Some(p) = &prev_support {
                    prop_assert!(s.iter().zip(p).all(|(a, b)| a <= b));
                }
                prev_support = Some(s);
                let f = semantic_genericity(&sets, &ent, &Workers::sequential(), tau).unwrap().f_tau;
                prop_assert!(f <= prev_f);
                prev_f = f;
            }
        }
    }
}
