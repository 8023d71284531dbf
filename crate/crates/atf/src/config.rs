//! Experiment run files (TOML).
//!
//! ```toml
//! [experiment]
//! name = "lewd-to-sexually-explicit"
//! budgets = [0, 100, 1000, 2000]
//! repetitions = 5
//! base_seed = 13
//! oracle = "simulated"              # or "human"
//! source = { dataset = "sbic", dimension = "lewd" }
//! target = { dataset = "metoo", dimension = "sexually_explicit" }
//! policy = { n_shots = 32 }
//! scorer = { kind = "http" }        # URL from ATF_SCORER_URL
//!
//! [datasets.sbic]
//! path = "data/sbic.csv"
//! schema = { id = "post_id", text = "post", labels = { sexYN = "lewd" } }
//!
//! [datasets.metoo]
//! path = "data/metoo.jsonl"
//! test_path = "data/metoo_test.jsonl"   # else split by [split]
//!
//! [run]
//! output_dir = "results"
//! cache_dir = ".atf-cache"
//! ```
//!
//! Relative paths are resolved against the run file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use atf_core::corpus::{split, DatasetBundle};
use atf_core::experiment::{ExperimentConfig, ScorerRef};
use atf_core::Dimension;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, load_registry, merged_registry, Format, Schema};
use crate::runner::{ExperimentData, InputFile};
use crate::scorer::{CachingEndpoint, HttpScorer, InContextEndpoint, LexiconEndpoint, RetryPolicy, ScorerEndpoint};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: Option<Format>,
    #[serde(default)]
    pub schema: Option<Schema>,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { test_fraction: default_test_fraction(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_attempts")]
    pub retry_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

fn default_in_flight() -> usize {
    8
}

fn default_attempts() -> u32 {
    5
}

fn default_backoff_ms() -> u64 {
    200
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            output_dir: default_output(),
            cache_dir: None,
            max_in_flight: default_in_flight(),
            retry_attempts: default_attempts(),
            retry_backoff_ms: default_backoff_ms(),
        }
    }
}

impl RunSettings {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.retry_attempts.max(1),
            initial_backoff: Duration::from_millis(self.retry_backoff_ms),
            ..RetryPolicy::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanSettings {
    #[serde(default = "default_store")]
    pub store: PathBuf,
    #[serde(default = "default_deadline")]
    pub deadline_secs: u64,
    #[serde(default = "default_poll")]
    pub poll_ms: u64,
}

fn default_store() -> PathBuf {
    PathBuf::from("tasks.sqlite")
}

fn default_deadline() -> u64 {
    24 * 3600
}

fn default_poll() -> u64 {
    1000
}

impl Default for HumanSettings {
    fn default() -> Self {
        HumanSettings { store: default_store(), deadline_secs: default_deadline(), poll_ms: default_poll() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetSpec>,
    #[serde(default)]
    pub split: SplitSpec,
    /// Extra or overriding dimension definitions.
    #[serde(default)]
    pub registry: Option<PathBuf>,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub human: HumanSettings,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunFile {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut file = Self::parse(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        file.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(file)
    }

    pub fn parse(raw: &str) -> std::result::Result<Self, String> {
        let file: RunFile = toml::from_str(raw).map_err(|e| e.to_string())?;
        file.experiment.validate().map_err(|e| e.to_string())?;
        Ok(file)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn registry(&self) -> Result<Vec<Dimension>> {
        match &self.registry {
            Some(p) => Ok(merged_registry(&load_registry(&self.resolve(p))?)),
            None => Ok(merged_registry(&[])),
        }
    }

    fn spec(&self, dataset: &str) -> Result<&DatasetSpec> {
        self.datasets.get(dataset).ok_or_else(|| Error::Config(format!("no [datasets.{dataset}] entry")))
    }

    fn load_one(&self, name: &str, path: &Path, spec: &DatasetSpec, registry: &[Dimension]) -> Result<DatasetBundle> {
        let path = self.resolve(path);
        let format = spec
            .format
            .or_else(|| Format::from_path(&path))
            .ok_or_else(|| Error::Config(format!("cannot tell the format of {}; set `format`", path.display())))?;
        load_dataset(&path, format, spec.schema.as_ref().unwrap_or(&Schema::default()), registry, name)
    }

    /// Loads source, pool and test bundles plus content hashes of every input.
    pub fn load_data(&self) -> Result<(ExperimentData, Vec<InputFile>)> {
        let registry = self.registry()?;
        let mut inputs = Vec::new();
        let target = &self.experiment.target;
        let spec = self.spec(&target.dataset)?;
        inputs.push(InputFile::hash("target", &self.resolve(&spec.path))?);
        let full = self.load_one(&target.dataset, &spec.path, spec, &registry)?;
        let (pool, test) = match &spec.test_path {
            Some(test_path) => {
                inputs.push(InputFile::hash("test", &self.resolve(test_path))?);
                (full, self.load_one(&target.dataset, test_path, spec, &registry)?)
            }
            None => split(&full, self.split.test_fraction, self.split.seed)?,
        };
        let source = match &self.experiment.source {
            Some(src) => {
                let spec = self.spec(&src.dataset)?;
                inputs.push(InputFile::hash("source", &self.resolve(&spec.path))?);
                Some(Arc::new(self.load_one(&src.dataset, &spec.path, spec, &registry)?))
            }
            None => None,
        };
        Ok((ExperimentData { source, pool: Arc::new(pool), test: Arc::new(test) }, inputs))
    }

    /// The configured endpoint, behind the reply cache if `cache_dir` is set.
    pub fn endpoint(&self) -> Result<Box<dyn ScorerEndpoint>> {
        let inner: Box<dyn ScorerEndpoint> = match &self.experiment.scorer {
            ScorerRef::Http { url: Some(url), token_env, .. } => Box::new(HttpScorer::new(
                url.clone(),
                token_env.as_deref().and_then(|v| std::env::var(v).ok()).or_else(|| std::env::var(crate::scorer::TOKEN_ENV).ok()),
                Duration::from_secs(60),
            )),
            ScorerRef::Http { url: None, url_env, token_env } => {
                Box::new(HttpScorer::from_env(url_env.as_deref(), token_env.as_deref())?)
            }
            ScorerRef::MockLexicon { lexicon } => Box::new(LexiconEndpoint { lexicon: lexicon.clone() }),
            ScorerRef::MockInContext(mock) => Box::new(InContextEndpoint { mock: mock.clone() }),
        };
        Ok(match &self.run.cache_dir {
            Some(dir) => Box::new(CachingEndpoint::open(inner, &self.resolve(dir))?),
            None => inner,
        })
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.run.output_dir).join(&self.experiment.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use atf_core::experiment::OracleMode;

    const MINIMAL: &str = r#"
[experiment]
name = "e1"
target = { dataset = "metoo", dimension = "toxicity" }

[datasets.metoo]
path = "metoo.jsonl"
"#;

    #[test]
    fn defaults_apply() {
        let f = RunFile::parse(MINIMAL).unwrap();
        assert_eq!(f.experiment.budgets, vec![0, 100, 1000, 2000]);
        assert_eq!(f.experiment.repetitions, 5);
        assert_eq!(f.experiment.policy.n_shots, 32);
        assert_eq!(f.experiment.token_budget, 2048);
        assert_eq!(f.experiment.oracle, OracleMode::Simulated);
        assert_eq!(f.split, SplitSpec::default());
        assert_eq!(f.run.max_in_flight, 8);
        assert!(f.experiment.source.is_none());
    }

    #[test]
    fn full_file_parses() {
        let raw = r#"
[experiment]
name = "lewd-to-se"
budgets = [0, 100]
repetitions = 3
base_seed = 13
oracle = "human"
source = { dataset = "sbic", dimension = "lewd" }
target = { dataset = "metoo", dimension = "sexually_explicit" }
policy = { n_shots = 8, order = "descending_similarity" }
scorer = { kind = "mock-in-context", shot_weight = 4.0, lexicon = { sex = 1.5 } }

[datasets.sbic]
path = "sbic.csv"
schema = { id = "post_id", text = "post", labels = { sexYN = "lewd" } }

[datasets.metoo]
path = "metoo.jsonl"
test_path = "metoo_test.jsonl"

[split]
test_fraction = 0.1

[human]
deadline_secs = 60
"#;
        let f = RunFile::parse(raw).unwrap();
        assert_eq!(f.experiment.oracle, OracleMode::Human);
        assert_eq!(f.experiment.policy.n_shots, 8);
        match &f.experiment.scorer {
            ScorerRef::MockInContext(m) => {
                assert_eq!(m.shot_weight, 4.0);
                assert_eq!(m.prior_weight, 1.0);
                assert_eq!(m.lexicon.get("sex"), Some(&1.5));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(f.datasets["sbic"].schema.as_ref().unwrap().labels["sexYN"], "lewd");
        assert_eq!(f.human.deadline_secs, 60);
        assert_eq!(f.human.store, PathBuf::from("tasks.sqlite"));
    }

    #[test]
    fn invalid_budgets_rejected() {
        let raw = MINIMAL.replace("name = \"e1\"", "name = \"e1\"\nbudgets = [100, 0]");
        assert!(RunFile::parse(&raw).is_err());
    }
}
