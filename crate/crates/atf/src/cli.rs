//! The `atf` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use atf_core::analysis::{
    correlation_matrix, gain_correlates, separability, separability_csv, Covariate, ScenarioCovariates,
};
use atf_core::corpus::{split, DatasetBundle};
use atf_core::experiment::OracleMode;
use atf_core::labeling::binarize_labels;
use atf_core::metrics::{render_csv, render_table};
use atf_core::{Dimension, Label};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::config::RunFile;
use crate::dataset::{load_dataset, load_registry, merged_registry, write_jsonl, Format, Schema};
use crate::embed::{mean_embedding_similarity, HttpEmbedder};
use crate::labeler::{fetch_scores, FetchOptions, HttpLabeler, ScoreStore};
use crate::oracle::{HumanOracle, Oracle, SimulatedOracle};
use crate::report::{build_reports, load_runs};
use crate::runner::{run_experiment, write_results, Manifest, RunOptions};
use crate::server::{router, serve_blocking, TaskStore};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "atf", version, about = "Active transfer few-shot experiments for post classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a JSONL or CSV dataset into canonical JSONL.
    Ingest(IngestArgs),
    /// Fetch attribute scores from the labeling service and binarize them.
    Label(LabelArgs),
    /// Run an experiment described by a TOML run file.
    Run(RunArgs),
    /// Gain table for transfer runs against baseline runs.
    Report(ReportArgs),
    /// Dataset and result diagnostics.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Serve the annotation API (and optionally the annotator UI).
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    #[arg(long)]
    input: PathBuf,
    /// jsonl or csv; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<Format>,
    /// TOML file with `id`, `text` and a `[labels]` field-to-dimension table.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Dataset name; defaults to the file stem.
    #[arg(long)]
    name: Option<String>,
    /// Extra dimension definitions.
    #[arg(long)]
    registry: Option<PathBuf>,
}

impl DatasetArgs {
    fn registry(&self) -> Result<Vec<Dimension>> {
        match &self.registry {
            Some(p) => Ok(merged_registry(&load_registry(p)?)),
            None => Ok(merged_registry(&[])),
        }
    }

    fn load(&self) -> Result<DatasetBundle> {
        let format = self
            .format
            .or_else(|| Format::from_path(&self.input))
            .ok_or_else(|| Error::Config(format!("cannot tell the format of {}; pass --format", self.input.display())))?;
        let schema = match &self.schema {
            Some(p) => {
                let raw = fs::read_to_string(p).map_err(Error::io(p))?;
                toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Schema::default(),
        };
        load_dataset(&self.input, format, &schema, &self.registry()?, &self.name())
    }

    fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| stem(&self.input))
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    out: PathBuf,
    /// Hold out this fraction (stratified) into --test-out.
    #[arg(long, requires = "test_out")]
    test_fraction: Option<f64>,
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct LabelArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Comma-separated service attributes, e.g. TOXICITY,SEXUALLY_EXPLICIT.
    /// Each becomes the dimension named by its lowercase form.
    #[arg(long, value_delimiter = ',', required = true)]
    attributes: Vec<String>,
    /// Append-only score cache.
    #[arg(long, default_value = "scores.jsonl")]
    store: PathBuf,
    /// Requests per second.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `experiment.base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `{run.output_dir}/{experiment.name}`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Drop the source dataset (target-only baseline).
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    repetitions: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Transfer results: a results.jsonl file or a directory searched recursively.
    #[arg(long = "in")]
    input: PathBuf,
    /// Baseline results; defaults to baseline runs found under --in.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Also write the per-budget numbers as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Pearson correlation between label dimensions of one dataset.
    Correlations {
        #[command(flatten)]
        data: DatasetArgs,
        /// Comma-separated dimensions; all of the dataset's by default.
        #[arg(long, value_delimiter = ',')]
        dimensions: Option<Vec<String>>,
    },
    /// Held-out accuracy of a linear classifier telling two datasets apart.
    Separability {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mean embedding cosine between two datasets (needs ATF_EMBED_URL).
    Similarity {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Correlation of per-budget gains with scenario covariates.
    Gains {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// TOML with `[[scenario]]` entries: source, target and covariate values.
        #[arg(long)]
        covariates: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "tasks.sqlite")]
    store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Directory with the built annotator UI.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    /// Environment variable holding the shared API token.
    #[arg(long, default_value = "ATF_SERVER_TOKEN")]
    token_env: String,
}

/// Parses `argv` (program name first) and runs the command. Returns 0 on
/// success, 2 on usage errors and 1 on any other failure.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let command: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.module(), one_line(&e.to_string()));
            1
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn dispatch(command: Command, argv: Vec<String>) -> Result<()> {
    match command {
        Command::Ingest(args) => ingest(args),
        Command::Label(args) => label(args),
        Command::Run(args) => run(args, argv),
        Command::Report(args) => report(args),
        Command::Analyze(cmd) => analyze(cmd),
        Command::Serve(args) => serve(args),
    }
}

fn ingest(args: IngestArgs) -> Result<()> {
    let bundle = args.data.load()?;
    match (args.test_fraction, &args.test_out) {
        (Some(fraction), Some(test_out)) => {
            let (train, test) = split(&bundle, fraction, args.seed)?;
            write_jsonl(&train, &args.out)?;
            write_jsonl(&test, test_out)?;
            println!("{}: {} posts, {} held out", bundle.name(), train.len(), test.len());
        }
        _ => {
            write_jsonl(&bundle, &args.out)?;
            println!("{}: {} posts", bundle.name(), bundle.len());
        }
    }
    Ok(())
}

fn label(args: LabelArgs) -> Result<()> {
    let bundle = args.data.load()?;
    let registry = args.data.registry()?;
    let mut dims: Vec<Dimension> = bundle.dimensions().to_vec();
    for attr in &args.attributes {
        let name = attr.to_lowercase();
        if dims.iter().any(|d| d.name == name) {
            continue;
        }
        let dim = registry
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::UnknownDimension(format!("{name} (define it with --registry)")))?;
        dims.push(dim.clone());
    }
    let store = ScoreStore::open(&args.store)?;
    let endpoint = HttpLabeler::from_env()?;
    let options = FetchOptions { rate_limit: args.rate, workers: args.workers, ..FetchOptions::default() };
    let fetched = fetch_scores(bundle.posts(), &args.attributes, &endpoint, &store, &options)?;
    for f in &fetched.failures {
        log::warn!("no scores for {} after {} attempts: {}", f.post_id, f.attempts, f.error);
    }
    let mut labels: BTreeMap<(String, String), Label> = bundle.labels().clone();
    for attr in &args.attributes {
        for (id, l) in binarize_labels(&fetched.responses, attr, args.threshold)? {
            labels.insert((id, attr.to_lowercase()), l);
        }
    }
    let out = DatasetBundle::new(bundle.name(), bundle.posts().to_vec(), labels, dims)?;
    write_jsonl(&out, &args.out)?;
    println!(
        "{} posts: {} cached, {} requests, {} failed",
        bundle.len(),
        fetched.cached,
        fetched.requests,
        fetched.failures.len()
    );
    Ok(())
}

fn run(args: RunArgs, argv: Vec<String>) -> Result<()> {
    let mut file = RunFile::load(&args.config)?;
    let exp = &mut file.experiment;
    if let Some(seed) = args.seed {
        exp.base_seed = seed;
    }
    if let Some(r) = args.repetitions {
        exp.repetitions = r;
    }
    if let Some(b) = args.budgets {
        exp.budgets = b;
    }
    if args.baseline {
        exp.source = None;
        exp.name = format!("{}-baseline", exp.name);
    }
    exp.validate()?;
    let out_dir = args.out.unwrap_or_else(|| file.output_dir());
    let (data, inputs) = file.load_data()?;
    let endpoint = file.endpoint()?;
    let mut options = RunOptions { max_in_flight: file.run.max_in_flight, retry: file.run.retry(), progress: None };
    let oracle: Box<dyn Oracle> = match file.experiment.oracle {
        OracleMode::Simulated => Box::new(SimulatedOracle::new(data.pool.clone())),
        OracleMode::Human => {
            let store = Arc::new(TaskStore::open(&file.resolve(&file.human.store))?);
            options.progress = Some(store.clone());
            Box::new(
                HumanOracle::new(store, file.experiment.name.clone(), Duration::from_secs(file.human.deadline_secs))
                    .with_poll_interval(Duration::from_millis(file.human.poll_ms)),
            )
        }
    };
    let results = run_experiment(&file.experiment, &data, oracle.as_ref(), endpoint.as_ref(), &options)?;
    let manifest = Manifest::new(&file.experiment, &endpoint.id(), &results, inputs, argv);
    write_results(&out_dir, &results, &manifest)?;
    let invalid: usize = results.iter().map(|r| r.invalid_count).sum();
    println!("{} runs written to {} ({} invalid scores)", results.len(), out_dir.display(), invalid);
    Ok(())
}

fn load_pair(input: &Path, baseline: Option<&Path>) -> Result<Vec<atf_core::metrics::GainReport>> {
    let transfer = load_runs(input)?;
    let baselines = match baseline {
        Some(p) => load_runs(p)?,
        None => transfer.clone(),
    };
    build_reports(&transfer, &baselines)
}

fn report(args: ReportArgs) -> Result<()> {
    let reports = load_pair(&args.input, args.baseline.as_deref())?;
    print!("{}", render_table(&reports));
    if let Some(path) = &args.csv {
        fs::write(path, render_csv(&reports)).map_err(Error::io(path))?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CovariateFile {
    #[serde(rename = "scenario", default)]
    scenarios: Vec<ScenarioRow>,
}

#[derive(Debug, Deserialize)]
struct ScenarioRow {
    source: String,
    target: String,
    #[serde(flatten)]
    values: ScenarioCovariates,
}

fn load_dataset_guess(path: &Path) -> Result<DatasetBundle> {
    DatasetArgs { input: path.to_path_buf(), format: None, schema: None, name: None, registry: None }.load()
}

fn analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Correlations { data, dimensions } => {
            let bundle = data.load()?;
            let names: Vec<String> =
                dimensions.unwrap_or_else(|| bundle.dimensions().iter().map(|d| d.name.clone()).collect());
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            print!("{}", correlation_matrix(&bundle, &refs)?.to_csv());
        }
        AnalyzeCommand::Separability { a, b, seed } => {
            let (da, db) = (load_dataset_guess(&a)?, load_dataset_guess(&b)?);
            let result = separability((da.name(), da.posts()), (db.name(), db.posts()), seed)?;
            print!("{}", separability_csv(&[result]));
        }
        AnalyzeCommand::Similarity { a, b, seed } => {
            let (da, db) = (load_dataset_guess(&a)?, load_dataset_guess(&b)?);
            let sim = mean_embedding_similarity(da.posts(), db.posts(), &HttpEmbedder::from_env()?, seed)?;
            println!("side_a,side_b,mean_cosine\n{},{},{sim}", da.name(), db.name());
        }
        AnalyzeCommand::Gains { input, baseline, covariates } => {
            let reports = load_pair(&input, baseline.as_deref())?;
            let scenarios: BTreeMap<(String, String), ScenarioCovariates> = match covariates {
                Some(p) => {
                    let raw = fs::read_to_string(&p).map_err(Error::io(&p))?;
                    let file: CovariateFile =
                        toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    file.scenarios.into_iter().map(|s| ((s.source, s.target), s.values)).collect()
                }
                None => BTreeMap::new(),
            };
            println!("covariate,pearson_r");
            for c in Covariate::ALL {
                match gain_correlates(&reports, c, &scenarios) {
                    Ok(r) => println!("{},{r}", c.name()),
                    Err(e) => println!("{},NA # {}", c.name(), one_line(&e.to_string())),
                }
            }
        }
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let store = Arc::new(TaskStore::open(&args.store)?);
    let token = std::env::var(&args.token_env).ok().filter(|t| !t.is_empty());
    if token.is_none() {
        log::warn!("{} is not set; the API is unauthenticated", args.token_env);
    }
    serve_blocking(args.bind, router(store, token, args.static_dir)).map_err(Error::io(&args.store))
}
