//! Ratings CSV: an `item` column, categorical `rater:<name>` columns and
//! numeric `score:<name>` columns.
//!
//! ```text
//! item,rater:a,rater:b,rater:c,score:human,score:faithfulness
//! s1,good,good,bad,4.0,62.5
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use opsum_core::metrics::{fleiss_kappa, spearman};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpearmanCell {
    pub x: String,
    pub y: String,
    pub rho: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agreement {
    pub items: usize,
    pub raters: usize,
    pub categories: Vec<String>,
    pub fleiss_kappa: Option<f64>,
    pub spearman: Vec<SpearmanCell>,
}

pub fn agreement_from_csv(path: &Path) -> Result<Agreement> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let rater_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("rater:").map(|n| (i, n.to_string())))
        .collect();
    let score_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("score:").map(|n| (i, n.to_string())))
        .collect();
    if rater_cols.is_empty() && score_cols.is_empty() {
        bail!("{}: no `rater:` or `score:` columns", path.display());
    }
    let mut labels: Vec<Vec<String>> = Vec::new();
    let mut scores: Vec<Vec<f64>> = vec![Vec::new(); score_cols.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{} record {}", path.display(), line + 1))?;
        let mut row = Vec::with_capacity(rater_cols.len());
        for (i, name) in &rater_cols {
            let v = rec.get(*i).unwrap_or("").trim();
            if v.is_empty() {
                bail!("record {}: rater `{name}` has no label", line + 1);
            }
            row.push(v.to_string());
        }
        labels.push(row);
        for (k, (i, name)) in score_cols.iter().enumerate() {
            let v = rec.get(*i).unwrap_or("").trim();
            let x: f64 = v.parse().with_context(|| {
                format!("record {}: score `{name}` is not a number: `{v}`", line + 1)
            })?;
            scores[k].push(x);
        }
    }
    let categories: Vec<String> = labels
        .iter()
        .flatten()
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let fleiss = if rater_cols.len() >= 2 && !labels.is_empty() {
        let index: BTreeMap<&str, usize> = categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let matrix: Vec<Vec<usize>> = labels
            .iter()
            .map(|row| {
                let mut counts = vec![0usize; categories.len()];
                for l in row {
                    counts[index[l.as_str()]] += 1;
                }
                counts
            })
            .collect();
        fleiss_kappa(&matrix)?
    } else {
        None
    };
    let mut cells = Vec::new();
    for a in 0..score_cols.len() {
        for b in a + 1..score_cols.len() {
            let rho = if scores[a].len() >= 2 {
                spearman(&scores[a], &scores[b])?
            } else {
                None
            };
            cells.push(SpearmanCell {
                x: score_cols[a].1.clone(),
                y: score_cols[b].1.clone(),
                rho,
                n: scores[a].len(),
            });
        }
    }
    Ok(Agreement {
        items: labels.len(),
        raters: rater_cols.len(),
        categories,
        fleiss_kappa: fleiss,
        spearman: cells,
    })
}
