//! The active-transfer experiment loop.
//!
//! For each repetition `r` (seed `base_seed + r`) and each budget `b` in
//! increasing order, the annotated target set grows by `b - |annotated|`
//! posts drawn from the pool and labeled by the oracle. The support set is
//! the whole source training set (transfer arm) plus every annotated target
//! example. A TF-IDF model is refit on the support set and the test queries,
//! each query gets its class-balanced most similar shots, and the rendered
//! prompts are scored and summarized as one [`RunResult`].

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use atf_core::corpus::DatasetBundle;
use atf_core::experiment::{AnnotationSampler, ExperimentConfig, QueryOutcome, RunFlag, RunResult, SupportSet};
use atf_core::metrics::{auc, mean_auc_by_budget};
use atf_core::prompter::{render, truncate_to_budget, PromptSpec};
use atf_core::selector::SupportIndex;
use atf_core::text::unit_token_count;
use atf_core::vectorizer::Vocabulary;
use atf_core::{Dimension, Label, LabeledExample, Post, Provenance};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::oracle::Oracle;
use crate::scorer::{score_batch, RetryPolicy, ScorerEndpoint};
use crate::server::TaskStore;
use crate::{Error, Result};

/// Everything the loop reads.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub source: Option<Arc<DatasetBundle>>,
    /// Unlabeled (from the loop's point of view) target pool.
    pub pool: Arc<DatasetBundle>,
    /// Held-out labeled target queries.
    pub test: Arc<DatasetBundle>,
}

#[derive(Clone)]
pub struct RunOptions {
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    /// Where to publish progress for `/api/experiments/{id}/status`.
    pub progress: Option<Arc<TaskStore>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { max_in_flight: 8, retry: RetryPolicy::default(), progress: None }
    }
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

struct Prepared<'a> {
    config: &'a ExperimentConfig,
    hash: String,
    target_dim: Dimension,
    source_dim: Option<Dimension>,
    source_examples: Vec<LabeledExample>,
    pool: DatasetBundle,
    queries: Vec<(Post, Label)>,
}

fn prepare<'a>(config: &'a ExperimentConfig, data: &ExperimentData) -> Result<Prepared<'a>> {
    config.validate()?;
    let target_name = &config.target.dimension;
    let target_dim = data.test.dimension(target_name)?.clone();
    let queries: Vec<(Post, Label)> = data
        .test
        .posts()
        .iter()
        .filter_map(|p| data.test.label(&p.id, target_name).map(|l| (p.clone(), l)))
        .collect();
    if !queries.iter().any(|q| q.1.is_positive()) || queries.iter().all(|q| q.1.is_positive()) {
        return Err(atf_core::Error::SingleClass.into());
    }
    let test_keys: BTreeSet<(&str, &str)> =
        data.test.posts().iter().map(|p| (p.dataset.as_str(), p.id.as_str())).collect();
    let pool = data.pool.filter(|p| !test_keys.contains(&(p.dataset.as_str(), p.id.as_str())));
    let (source_dim, source_examples) = match (&config.source, &data.source) {
        (Some(src), Some(bundle)) => {
            let dim = bundle.dimension(&src.dimension)?.clone();
            let examples: Vec<LabeledExample> = bundle
                .labeled_examples(&src.dimension, Provenance::Source)?
                .into_iter()
                .filter(|e| !test_keys.contains(&(e.post.dataset.as_str(), e.post.id.as_str())))
                .collect();
            (Some(dim), examples)
        }
        (Some(src), None) => {
            return Err(Error::Config(format!("source dataset {:?} was not loaded", src.dataset)));
        }
        (None, _) => (None, Vec::new()),
    };
    let max_budget = *config.budgets.last().expect("validated non-empty");
    if pool.len() < max_budget {
        return Err(atf_core::Error::PoolExhausted { requested: max_budget, available: pool.len() }.into());
    }
    Ok(Prepared { config, hash: config_hash(config), target_dim, source_dim, source_examples, pool, queries })
}

/// Runs every repetition and budget; results are ordered by repetition,
/// then budget.
pub fn run_experiment(
    config: &ExperimentConfig,
    data: &ExperimentData,
    oracle: &dyn Oracle,
    endpoint: &dyn ScorerEndpoint,
    options: &RunOptions,
) -> Result<Vec<RunResult>> {
    let prep = prepare(config, data)?;
    let reps: Vec<u32> = (0..config.repetitions).collect();
    let prep = &prep;
    let per_rep: Vec<Result<Vec<RunResult>>> = if oracle.parallel_safe() {
        std::thread::scope(|s| {
            let handles: Vec<_> =
                reps.iter().map(|&r| s.spawn(move || run_repetition(prep, r, oracle, endpoint, options))).collect();
            handles.into_iter().map(|h| h.join().expect("repetition thread panicked")).collect()
        })
    } else {
        reps.iter().map(|&r| run_repetition(prep, r, oracle, endpoint, options)).collect()
    };
    let mut out = Vec::new();
    for rep in per_rep {
        out.extend(rep?);
    }
    Ok(out)
}

fn run_repetition(
    prep: &Prepared<'_>,
    repetition: u32,
    oracle: &dyn Oracle,
    endpoint: &dyn ScorerEndpoint,
    options: &RunOptions,
) -> Result<Vec<RunResult>> {
    let seed = prep.config.repetition_seed(repetition);
    let mut sampler = AnnotationSampler::new(seed);
    let mut annotated: Vec<LabeledExample> = Vec::new();
    let mut annotated_ids: BTreeSet<String> = BTreeSet::new();
    let mut results = Vec::with_capacity(prep.config.budgets.len());
    for &budget in &prep.config.budgets {
        let delta = budget - annotated.len();
        if delta > 0 {
            publish(options, prep, json!({"repetition": repetition, "budget": budget, "stage": "annotating"}));
            let drawn = sampler.draw(&prep.pool, &annotated_ids, delta)?;
            let labeled = oracle.label(&drawn, &prep.target_dim)?;
            for ex in labeled {
                annotated_ids.insert(ex.post.id.clone());
                annotated.push(ex);
            }
        }
        publish(options, prep, json!({"repetition": repetition, "budget": budget, "stage": "scoring"}));
        results.push(run_budget(prep, repetition, seed, budget, &annotated, endpoint, options)?);
    }
    Ok(results)
}

fn publish(options: &RunOptions, prep: &Prepared<'_>, progress: serde_json::Value) {
    if let Some(store) = &options.progress {
        if let Err(e) = store.set_progress(&prep.config.name, &progress) {
            log::warn!("could not publish progress: {e}");
        }
    }
}

fn run_flags(prep: &Prepared<'_>, budget: usize, annotated: &[LabeledExample], support: &SupportSet) -> Vec<RunFlag> {
    let mut flags = Vec::new();
    for label in [Label::Positive, Label::Negative] {
        if budget > 0 && !annotated.iter().any(|e| e.label == label) {
            flags.push(RunFlag::MissingTargetClass(label));
            if prep.source_examples.iter().any(|e| e.label == label) {
                flags.push(RunFlag::SourceOnlyClass(label));
            }
        }
    }
    if !support.is_empty() && (support.count(Label::Positive) == 0 || support.count(Label::Negative) == 0) {
        flags.push(RunFlag::ZeroShotFallback);
    }
    flags
}

fn build_prompts(prep: &Prepared<'_>, support: &SupportSet, zero_shot: bool) -> Result<Vec<PromptSpec>> {
    let vocab = Vocabulary::fit(support.iter().map(|e| e.post.text.as_str()).chain(prep.queries.iter().map(|q| q.0.text.as_str())))?;
    let index = SupportIndex::new(support, &vocab);
    let mut prompts = Vec::with_capacity(prep.queries.len());
    for (query, _) in &prep.queries {
        let shots = if zero_shot { Vec::new() } else { index.select(query, &vocab.transform(&query.text), &prep.config.policy)? };
        let spec = render(&shots, query, prep.source_dim.as_ref(), &prep.target_dim)?;
        prompts.push(truncate_to_budget(&spec, prep.config.token_budget, unit_token_count)?);
    }
    Ok(prompts)
}

fn run_budget(
    prep: &Prepared<'_>,
    repetition: u32,
    seed: u64,
    budget: usize,
    annotated: &[LabeledExample],
    endpoint: &dyn ScorerEndpoint,
    options: &RunOptions,
) -> Result<RunResult> {
    let support = SupportSet::new(prep.source_examples.clone(), annotated.to_vec());
    let flags = run_flags(prep, budget, annotated, &support);
    let zero_shot = support.is_empty() || flags.contains(&RunFlag::ZeroShotFallback);
    let support_size = support.iter().map(|e| (&e.post.dataset, &e.post.id)).collect::<BTreeSet<_>>().len();
    let prompts = build_prompts(prep, &support, zero_shot)?;
    let items = score_batch(&prompts, endpoint, options.max_in_flight, &options.retry)?;

    let mut outcomes = Vec::with_capacity(prompts.len());
    let mut scored = Vec::with_capacity(prompts.len());
    let (mut ratio_sum, mut ratio_n) = (0.0, 0usize);
    for ((spec, item), (_, truth)) in prompts.iter().zip(items).zip(&prep.queries) {
        let target_shots = spec.shots.iter().filter(|s| s.provenance == Provenance::Target).count();
        if !spec.shots.is_empty() {
            ratio_sum += target_shots as f64 / spec.shots.len() as f64;
            ratio_n += 1;
        }
        let (result, error) = match item {
            Ok(r) => {
                scored.push((r.score, *truth));
                (Some(r), None)
            }
            Err(e) => {
                log::warn!("query {} excluded from AUC: {e}", spec.query_id);
                (None, Some(e.to_string()))
            }
        };
        outcomes.push(QueryOutcome {
            query_id: spec.query_id.clone(),
            label: *truth,
            n_shots: spec.shots.len(),
            target_shots,
            result,
            error,
        });
    }
    let invalid_count = outcomes.iter().filter(|o| o.result.is_none()).count();
    Ok(RunResult {
        config_hash: prep.hash.clone(),
        experiment: prep.config.name.clone(),
        target_dimension: prep.target_dim.name.clone(),
        source_dimension: prep.source_dim.as_ref().map(|d| d.name.clone()),
        repetition,
        seed,
        budget,
        auc: auc(&scored)?,
        mean_shot_ratio: if ratio_n == 0 { 0.0 } else { ratio_sum / ratio_n as f64 },
        support_size,
        source_size: prep.source_examples.len(),
        annotated_ids: annotated.iter().map(|e| e.post.id.clone()).collect(),
        invalid_count,
        flags,
        queries: outcomes,
    })
}

/// One JSON line per run.
pub fn results_jsonl(results: &[RunResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r).expect("run result serializes"));
        out.push('\n');
    }
    out
}

/// Per-budget summary of one arm.
pub fn summary_csv(results: &[RunResult]) -> String {
    let mut out = String::from("budget,repetitions,mean_auc,mean_shot_ratio,invalid\n");
    for (budget, reps, mean_auc, ratio) in mean_auc_by_budget(results) {
        let invalid: usize = results.iter().filter(|r| r.budget == budget).map(|r| r.invalid_count).sum();
        out.push_str(&format!("{budget},{reps},{mean_auc},{ratio},{invalid}\n"));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl InputFile {
    pub fn hash(role: &str, path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Ok(InputFile { role: role.into(), path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub code_version: String,
    pub endpoint: String,
    pub models: Vec<String>,
    pub inputs: Vec<InputFile>,
    pub command: Vec<String>,
    pub runs: usize,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig, endpoint: &str, results: &[RunResult], inputs: Vec<InputFile>, command: Vec<String>) -> Self {
        let models: BTreeSet<String> =
            results.iter().flat_map(|r| r.queries.iter().filter_map(|q| q.result.as_ref().map(|s| s.model_id.clone()))).collect();
        Manifest {
            experiment: config.name.clone(),
            config_hash: config_hash(config),
            config: config.clone(),
            seeds: (0..config.repetitions).map(|r| config.repetition_seed(r)).collect(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            endpoint: endpoint.to_string(),
            models: models.into_iter().collect(),
            inputs,
            command,
            runs: results.len(),
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let mut f = fs::File::create(path).map_err(Error::io(path))?;
    f.write_all(contents).map_err(Error::io(path))
}

/// Writes `{dir}/{repetition}/{budget}.jsonl`, `results.jsonl`,
/// `summary.csv` and `manifest.json`.
pub fn write_results(dir: &Path, results: &[RunResult], manifest: &Manifest) -> Result<()> {
    for r in results {
        let path = dir.join(r.repetition.to_string()).join(format!("{}.jsonl", r.budget));
        write_file(&path, results_jsonl(std::slice::from_ref(r)).as_bytes())?;
    }
    write_file(&dir.join("results.jsonl"), results_jsonl(results).as_bytes())?;
    write_file(&dir.join("summary.csv"), summary_csv(results).as_bytes())?;
    let mut m = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    m.push('\n');
    write_file(&dir.join("manifest.json"), m.as_bytes())
}
