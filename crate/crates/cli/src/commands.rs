use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use serde::Serialize;

use opsum_core::backends::{
    content_hash, load_lexicon, CallCache, CompletionBackend, EntailmentBackend,
};
use opsum_core::corpus::{corpus_stats, load_corpus, CorpusFormat, ReviewCorpus};
use opsum_core::layout::{
    self, find_run_dirs, read_claims, read_summary, write_claims, write_report, write_run,
};
use opsum_core::pipeline::{run_pipeline, PipelineEnv, PipelineRun, ProvenanceEvent, RunError};
use opsum_core::report::{evaluate, EvalItem, Metric};
use opsum_core::{split_and_rephrase, Completer, Entailer, RunConfig, Workers};

use crate::agree::agreement_from_csv;
use crate::dryrun::{DryRunCompletion, DryRunEntailment};
use crate::{Cli, Command, CorpusArgs, Fail, OrExit, EXIT_PARTIAL};

pub fn dispatch(cli: &Cli) -> Result<u8, Fail> {
    match &cli.command {
        Command::Stats { corpus, json } => cmd_stats(corpus, json.as_deref()),
        Command::Run {
            config,
            corpus,
            entities,
            aspects,
            out,
        } => cmd_run(cli, config, corpus, entities, aspects, out),
        Command::Rephrase { config, runs } => cmd_rephrase(cli, config, runs),
        Command::Eval {
            config,
            corpus,
            runs,
            out,
            metrics,
            tau,
            genericity_tau,
        } => cmd_eval(
            cli,
            config,
            corpus,
            runs,
            out,
            metrics,
            *tau,
            *genericity_tau,
        ),
        Command::Agree { ratings, json } => cmd_agree(ratings, json.as_deref()),
    }
}

fn load(args: &CorpusArgs) -> Result<ReviewCorpus, Fail> {
    let format: CorpusFormat = args.format.parse().usage()?;
    load_corpus(&args.corpus, format)
        .with_context(|| format!("loading corpus {}", args.corpus.display()))
        .usage()
}

fn load_config(cli: &Cli, path: &Path) -> Result<RunConfig, Fail> {
    let mut cfg = RunConfig::load(path).usage()?;
    if let Some(seed) = cli.seed {
        cfg.pipeline.seed = seed;
    }
    Ok(cfg)
}

fn open_cache(cli: &Cli) -> Result<Option<Arc<CallCache>>, Fail> {
    cli.cache_dir
        .as_ref()
        .map(|d| {
            CallCache::open(d)
                .with_context(|| format!("opening cache {}", d.display()))
                .map(Arc::new)
        })
        .transpose()
        .usage()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Fail> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .failed()
}

fn cmd_stats(args: &CorpusArgs, json: Option<&Path>) -> Result<u8, Fail> {
    let corpus = load(args)?;
    let stats = corpus_stats(&corpus).usage()?;
    println!("entities                {}", corpus.entities.len());
    println!(
        "reviews per entity      {:.2}",
        stats.avg_reviews_per_entity
    );
    println!(
        "sentences per review    {:.2}",
        stats.avg_sentences_per_review
    );
    println!(
        "words per sentence      {:.2}",
        stats.avg_words_per_sentence
    );
    println!(
        "{}",
        serde_json::to_string(&stats).expect("stats serialize")
    );
    if let Some(p) = json {
        write_json(p, &stats)?;
    }
    Ok(0)
}

#[derive(Debug, Serialize)]
struct RunManifest {
    chain: String,
    config_hash: String,
    corpus_hash: String,
    completion_backend: String,
    extractor_backend: Option<String>,
    seed: u64,
    jobs: u64,
    created_unix: u64,
    runs: Vec<String>,
    failed: Vec<String>,
}

fn file_hash(path: &Path) -> Result<String, Fail> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .usage()?;
    Ok(content_hash(&String::from_utf8_lossy(&bytes)))
}

fn cmd_run(
    cli: &Cli,
    config_path: &Path,
    corpus_args: &CorpusArgs,
    entity_filter: &[String],
    aspect_filter: &[String],
    out: &Path,
) -> Result<u8, Fail> {
    let mut cfg = load_config(cli, config_path)?;
    if !aspect_filter.is_empty() {
        cfg.run_aspects = aspect_filter.to_vec();
    }
    let pipeline = cfg.pipeline_config().usage()?;
    let corpus = load(corpus_args)?;
    let entities: Vec<_> = if entity_filter.is_empty() {
        corpus.entities.iter().collect()
    } else {
        entity_filter
            .iter()
            .map(|id| corpus.entity(id))
            .collect::<Result<_, _>>()
            .usage()?
    };
    let cache = open_cache(cli)?;
    let backend = cfg.completion_backend().usage()?;
    let dry = cli
        .dry_run
        .then(|| Arc::new(DryRunCompletion::new(backend.clone(), cache.clone())));
    let mut completer = match &dry {
        Some(d) => Completer::new(d.clone() as Arc<dyn CompletionBackend>),
        None => Completer::new(backend.clone()),
    };
    completer = completer.with_retry(cfg.backends.retry);
    if let (Some(c), None) = (&cache, &dry) {
        completer = completer.with_cache(c.clone());
    }
    let workers = Workers::new(cli.jobs as usize);
    let mut env = PipelineEnv::new(completer).with_workers(workers.clone());
    if let Some(ex) = cfg.extractor_backend().usage()? {
        env = env.with_extractor(ex);
    }
    if let Some(path) = &cfg.lexicon {
        let lex = load_lexicon(path)
            .with_context(|| format!("loading lexicon {}", path.display()))
            .usage()?;
        env = env.with_lexicon(Arc::new(lex));
    }

    let jobs: Vec<_> = entities
        .iter()
        .flat_map(|e| cfg.aspects().into_iter().map(move |a| (*e, a)))
        .collect();
    let results: Vec<Result<PipelineRun, Box<RunError>>> = workers
        .map(&jobs, |_, (entity, aspect)| {
            run_pipeline(&pipeline, entity, aspect, &env).map_err(Box::new)
        });

    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for ((entity, aspect), res) in jobs.iter().zip(results) {
        let label = format!("{}/{}", entity.entity_id, aspect.name);
        match res {
            Ok(run) => {
                if let Some(d) = &dry {
                    print_plan(&label, &run, d);
                } else {
                    let dir = write_run(out, &run).failed()?;
                    println!("ok      {label} -> {}", dir.display());
                }
                ok.push(label);
            }
            Err(e) => {
                eprintln!("failed  {label}: {e}");
                failed.push(label);
            }
        }
    }
    if dry.is_none() {
        std::fs::create_dir_all(out)
            .with_context(|| format!("creating {}", out.display()))
            .failed()?;
        let manifest = RunManifest {
            chain: pipeline.name.clone(),
            config_hash: file_hash(config_path)?,
            corpus_hash: file_hash(&corpus_args.corpus)?,
            completion_backend: backend.id(),
            extractor_backend: env.extractor.as_ref().map(|e| e.id()),
            seed: cfg.pipeline.seed,
            jobs: cli.jobs,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            runs: ok
                .iter()
                .map(|l| relative_run_dir(&pipeline.name, l))
                .collect(),
            failed: failed.clone(),
        };
        write_json(&out.join("manifest.json"), &manifest)?;
    }
    println!("{} runs succeeded, {} failed", ok.len(), failed.len());
    Ok(if failed.is_empty() { 0 } else { EXIT_PARTIAL })
}

fn relative_run_dir(chain: &str, label: &str) -> String {
    let (entity, aspect) = label.rsplit_once('/').unwrap_or((label, ""));
    layout::run_dir(Path::new(""), chain, entity, aspect)
        .display()
        .to_string()
}

fn print_plan(label: &str, run: &PipelineRun, dry: &DryRunCompletion) {
    for r in run
        .provenance
        .iter()
        .filter(|r| r.event == ProvenanceEvent::Call)
    {
        let key = r.cache_key.as_deref().unwrap_or("");
        let state = if dry.is_planned(key) {
            "call  "
        } else {
            "cached"
        };
        println!(
            "{state} {label} stage {} ({}) round {} item {} task {} ~{} tokens key {}",
            r.stage,
            r.stage_kind,
            r.round.unwrap_or(0),
            r.item.unwrap_or(0),
            r.task
                .map(|t| format!("{t:?}").to_lowercase())
                .unwrap_or_default(),
            r.prompt_tokens.unwrap_or(0),
            &key[..key.len().min(16)],
        );
    }
}

fn collect_run_dirs(roots: &[PathBuf]) -> Result<Vec<PathBuf>, Fail> {
    let mut dirs = BTreeSet::new();
    for root in roots {
        if !root.exists() {
            return Err(anyhow!("{} does not exist", root.display())).usage();
        }
        dirs.extend(find_run_dirs(root).usage()?);
    }
    if dirs.is_empty() {
        return Err(anyhow!("no run directories found")).usage();
    }
    Ok(dirs.into_iter().collect())
}

fn cmd_rephrase(cli: &Cli, config_path: &Path, roots: &[PathBuf]) -> Result<u8, Fail> {
    let cfg = load_config(cli, config_path)?;
    let dirs = collect_run_dirs(roots)?;
    let summaries = dirs
        .iter()
        .map(|d| read_summary(d).with_context(|| format!("run {}", d.display())))
        .collect::<Result<Vec<_>, _>>()
        .usage()?;
    let cache = open_cache(cli)?;
    let backend = cfg.completion_backend().usage()?;
    let dry = cli
        .dry_run
        .then(|| Arc::new(DryRunCompletion::new(backend.clone(), cache.clone())));
    let mut completer = match &dry {
        Some(d) => Completer::new(d.clone() as Arc<dyn CompletionBackend>),
        None => Completer::new(backend),
    }
    .with_retry(cfg.backends.retry);
    if let (Some(c), None) = (&cache, &dry) {
        completer = completer.with_cache(c.clone());
    }
    let workers = Workers::new(cli.jobs as usize);
    let mut failed = 0;
    for (dir, summary) in dirs.iter().zip(&summaries) {
        match split_and_rephrase(summary, &completer, &cfg.rephrase, &workers) {
            Ok(claims) => {
                if let Some(d) = &dry {
                    println!(
                        "plan    {}: {} sentences, {} uncached calls so far",
                        dir.display(),
                        summary.sentences.len(),
                        d.planned_count()
                    );
                } else {
                    write_claims(dir, &claims).failed()?;
                    println!("ok      {} -> {} claims", dir.display(), claims.len());
                }
            }
            Err(e) => {
                eprintln!("failed  {}: {e}", dir.display());
                failed += 1;
            }
        }
    }
    Ok(if failed == 0 { 0 } else { EXIT_PARTIAL })
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    cli: &Cli,
    config_path: &Path,
    corpus_args: &CorpusArgs,
    roots: &[PathBuf],
    out: &Path,
    metrics: &[String],
    tau: Option<f64>,
    genericity_tau: Option<f64>,
) -> Result<u8, Fail> {
    let cfg = load_config(cli, config_path)?;
    let mut settings = cfg.eval.clone();
    if !metrics.is_empty() {
        settings.metrics = metrics
            .iter()
            .map(|m| m.parse::<Metric>().map_err(|e| anyhow!(e)))
            .collect::<Result<_, _>>()
            .usage()?;
    }
    if let Some(t) = tau {
        settings.support_tau = t;
    }
    if let Some(t) = genericity_tau {
        settings.genericity_tau = t;
    }
    let corpus = load(corpus_args)?;
    let dirs = collect_run_dirs(roots)?;
    let mut items = Vec::with_capacity(dirs.len());
    let wants_claims = settings.metrics.iter().any(|m| m.needs_entailment());
    for d in &dirs {
        let summary = read_summary(d)
            .with_context(|| format!("run {}", d.display()))
            .usage()?;
        let claims = read_claims(d).usage()?.unwrap_or_else(|| {
            if wants_claims {
                log::warn!("{} has no claims; run `opsum rephrase` first", d.display());
            }
            Vec::new()
        });
        items.push(EvalItem { summary, claims });
    }
    let cache = open_cache(cli)?;
    let workers = Workers::new(cli.jobs as usize);
    let backend: Option<Arc<dyn EntailmentBackend>> = if wants_claims {
        Some(
            cfg.entailment_backend()
                .usage()?
                .ok_or_else(|| {
                    anyhow!("entailment metrics need [backends.entailment] in the config")
                })
                .usage()?,
        )
    } else {
        None
    };
    let dry = match (&backend, cli.dry_run) {
        (Some(b), true) => Some(Arc::new(DryRunEntailment::new(b.clone(), cache.clone()))),
        _ => None,
    };
    let entailer = backend.map(|b| {
        let mut e = match &dry {
            Some(d) => Entailer::new(d.clone() as Arc<dyn EntailmentBackend>),
            None => Entailer::new(b),
        }
        .with_retry(cfg.backends.retry);
        if let (Some(c), None) = (&cache, &dry) {
            e = e.with_cache(c.clone());
        }
        e
    });
    let report = evaluate(&items, &corpus, entailer.as_ref(), &workers, &settings).failed()?;
    if cli.dry_run {
        let planned = dry.as_ref().map_or(0, |d| d.planned());
        println!(
            "plan    {} summaries, {planned} uncached entailment calls",
            items.len()
        );
        return Ok(0);
    }
    for p in &report.pipelines {
        let dir = layout::eval_dir(out, &p.pipeline);
        write_report(&dir, &report.for_pipeline(&p.pipeline)).failed()?;
        println!(
            "{:<10} summaries {:>4}  claims {:>5}  top {}  faithful% {}  -> {}",
            p.pipeline,
            p.summaries,
            p.claims,
            fmt(p.top_score.map(|a| a.mean)),
            fmt(p.faithfulness_pct.map(|a| a.mean)),
            dir.display()
        );
    }
    Ok(0)
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

fn cmd_agree(path: &Path, json: Option<&Path>) -> Result<u8, Fail> {
    let a = agreement_from_csv(path).usage()?;
    println!(
        "items {}  raters {}  categories {}",
        a.items,
        a.raters,
        a.categories.len()
    );
    println!("fleiss_kappa {}", fmt(a.fleiss_kappa));
    for c in &a.spearman {
        println!(
            "spearman {:<20} {:<20} {} (n = {})",
            c.x,
            c.y,
            fmt(c.rho),
            c.n
        );
    }
    if let Some(p) = json {
        write_json(p, &a)?;
    }
    Ok(0)
}
