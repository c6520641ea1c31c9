//! On-disk layout of runs and evaluation reports:
//!
//! ```text
//! runs/<chain>/<entity>__<aspect>/{meta.json, intermediates.jsonl, summary.txt, provenance.jsonl, claims.jsonl}
//! eval/<chain>/{report.json, report.csv, histogram.csv}
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::AspectSpec;
use crate::pipeline::{PipelineRun, StageSpec, Summary};
use crate::rephrase::{claims_from_jsonl, claims_to_jsonl, AtomicClaim};
use crate::report::{MetricReport, ReportError};

pub const META_FILE: &str = "meta.json";
pub const INTERMEDIATES_FILE: &str = "intermediates.jsonl";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const PROVENANCE_FILE: &str = "provenance.jsonl";
pub const CLAIMS_FILE: &str = "claims.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum LayoutError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Report(#[from] ReportError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> LayoutError + '_ {
    move |source| LayoutError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, contents: &str) -> Result<(), LayoutError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn read(path: &Path) -> Result<String, LayoutError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Keeps `[A-Za-z0-9._-]`, replaces everything else with `_`.
pub fn sanitize(component: &str) -> String {
    let s: String = component
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() || s.chars().all(|c| c == '.') {
        format!("_{s}")
    } else {
        s
    }
}

pub fn run_dir(out: &Path, chain: &str, entity_id: &str, aspect: &str) -> PathBuf {
    out.join("runs").join(sanitize(chain)).join(format!(
        "{}__{}",
        sanitize(entity_id),
        sanitize(aspect)
    ))
}

pub fn eval_dir(out: &Path, chain: &str) -> PathBuf {
    out.join("eval").join(sanitize(chain))
}

/// Identity of a run, so readers need not parse directory names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub entity_id: String,
    pub aspect: AspectSpec,
    pub pipeline: String,
    pub stages: Vec<StageSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntermediateRecord {
    pub index: usize,
    /// `reviews` for S_0, otherwise the producing stage kind.
    pub stage: String,
    pub sentences: Vec<String>,
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|i| serde_json::to_string(&i).expect("record serializes") + "\n")
        .collect()
}

/// Writes one run directory and returns its path.
pub fn write_run(out: &Path, run: &PipelineRun) -> Result<PathBuf, LayoutError> {
    let dir = run_dir(out, &run.chain, &run.entity_id, &run.aspect.name);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let meta = RunMeta {
        entity_id: run.entity_id.clone(),
        aspect: run.aspect.clone(),
        pipeline: run.chain.clone(),
        stages: run.stages.clone(),
    };
    write(
        &dir.join(META_FILE),
        &(serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n"),
    )?;
    let records = run
        .intermediates
        .iter()
        .enumerate()
        .map(|(index, s)| IntermediateRecord {
            index,
            stage: if index == 0 {
                "reviews".into()
            } else {
                run.stages[index - 1].name().into()
            },
            sentences: s.clone(),
        });
    write(&dir.join(INTERMEDIATES_FILE), &jsonl(records))?;
    write(&dir.join(PROVENANCE_FILE), &jsonl(&run.provenance))?;
    let summary: String = run
        .final_summary
        .sentences
        .iter()
        .map(|s| format!("{s}\n"))
        .collect();
    write(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(dir)
}

/// Run directories under `root` (or `root` itself), sorted by path.
pub fn find_run_dirs(root: &Path) -> Result<Vec<PathBuf>, LayoutError> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(META_FILE).is_file() {
            found.push(dir);
            continue;
        }
        let entries = fs::read_dir(&dir).map_err(io_err(&dir))?;
        for e in entries {
            let e = e.map_err(io_err(&dir))?;
            if e.file_type().map_err(io_err(&dir))?.is_dir() {
                stack.push(e.path());
            }
        }
    }
    found.sort();
    Ok(found)
}

pub fn read_meta(dir: &Path) -> Result<RunMeta, LayoutError> {
    let path = dir.join(META_FILE);
    serde_json::from_str(&read(&path)?).map_err(|e| LayoutError::Format {
        path,
        message: e.to_string(),
    })
}

pub fn read_summary(dir: &Path) -> Result<Summary, LayoutError> {
    let meta = read_meta(dir)?;
    let path = dir.join(SUMMARY_FILE);
    let sentences: Vec<String> = read(&path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if sentences.is_empty() {
        return Err(LayoutError::Format {
            path,
            message: "summary is empty".into(),
        });
    }
    Ok(Summary {
        entity_id: meta.entity_id,
        aspect: meta.aspect.name,
        sentences,
        pipeline: meta.pipeline,
    })
}

pub fn write_claims(dir: &Path, claims: &[AtomicClaim]) -> Result<(), LayoutError> {
    write(&dir.join(CLAIMS_FILE), &claims_to_jsonl(claims))
}

/// Claims of a run, or `None` if it has not been rephrased.
pub fn read_claims(dir: &Path) -> Result<Option<Vec<AtomicClaim>>, LayoutError> {
    let path = dir.join(CLAIMS_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    claims_from_jsonl(&read(&path)?)
        .map(Some)
        .map_err(|e| LayoutError::Format {
            path,
            message: e.to_string(),
        })
}

/// Writes `report.json`, `report.csv` and `histogram.csv` into `dir`.
pub fn write_report(dir: &Path, report: &MetricReport) -> Result<(), LayoutError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write(&dir.join("report.json"), &report.to_json())?;
    write(&dir.join("report.csv"), &report.to_csv()?)?;
    write(&dir.join("histogram.csv"), &report.histogram_csv()?)?;
    Ok(())
}
