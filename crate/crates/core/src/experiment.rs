//! Experiment configuration, per-run results, and seeded annotation draws.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DatasetBundle;
use crate::prompter::DEFAULT_TOKEN_BUDGET;
use crate::scoring::{InContextMock, ScoreResult};
use crate::selector::SelectionPolicy;
use crate::{Error, Label, Post, Result};

pub use crate::selector::SupportSet;

pub const DEFAULT_BUDGETS: [usize; 4] = [0, 100, 1000, 2000];
pub const DEFAULT_REPETITIONS: u32 = 5;

/// ChaCha stream reserved for annotation draws, so nothing else consuming
/// randomness under the same seed can perturb which posts get annotated.
const ANNOTATION_STREAM: u64 = 0xA770;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub dataset: String,
    pub dimension: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    #[default]
    Simulated,
    Human,
}

/// Which model answers the prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScorerRef {
    /// HTTP endpoint speaking the `{"prompt", "continuations"}` protocol.
    /// `url` wins over `url_env`.
    Http {
        #[serde(default)]
        url: Option<String>,
        #[serde(default)]
        url_env: Option<String>,
        #[serde(default)]
        token_env: Option<String>,
    },
    MockLexicon {
        #[serde(default)]
        lexicon: BTreeMap<String, f64>,
    },
    MockInContext(InContextMock),
}

impl Default for ScorerRef {
    fn default() -> Self {
        ScorerRef::MockLexicon { lexicon: BTreeMap::new() }
    }
}

fn default_budgets() -> Vec<usize> {
    DEFAULT_BUDGETS.to_vec()
}

fn default_repetitions() -> u32 {
    DEFAULT_REPETITIONS
}

fn default_token_budget() -> usize {
    DEFAULT_TOKEN_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub source: Option<DatasetRef>,
    pub target: DatasetRef,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub policy: SelectionPolicy,
    #[serde(default = "default_token_budget")]
    pub token_budget: usize,
    #[serde(default)]
    pub scorer: ScorerRef,
    #[serde(default)]
    pub oracle: OracleMode,
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, target: DatasetRef) -> Self {
        ExperimentConfig {
            name: name.into(),
            source: None,
            target,
            budgets: default_budgets(),
            repetitions: DEFAULT_REPETITIONS,
            base_seed: 0,
            policy: SelectionPolicy::default(),
            token_budget: DEFAULT_TOKEN_BUDGET,
            scorer: ScorerRef::default(),
            oracle: OracleMode::Simulated,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() || self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Precondition(format!("budgets must be non-empty and strictly increasing: {:?}", self.budgets)));
        }
        if self.repetitions == 0 {
            return Err(Error::Precondition("repetitions must be >= 1".into()));
        }
        self.policy.validate()
    }

    pub fn repetition_seed(&self, repetition: u32) -> u64 {
        self.base_seed.wrapping_add(repetition as u64)
    }

    pub fn is_transfer(&self) -> bool {
        self.source.is_some()
    }
}

/// Why a run deviated from the plain protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "flag", content = "class", rename_all = "snake_case")]
pub enum RunFlag {
    /// The annotated target examples contain no example of this class.
    MissingTargetClass(Label),
    /// Source exemplars were the only supply for this class.
    SourceOnlyClass(Label),
    /// The support set lacked a class altogether; queries were scored
    /// zero-shot.
    ZeroShotFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub label: Label,
    pub n_shots: usize,
    pub target_shots: usize,
    pub result: Option<ScoreResult>,
    pub error: Option<String>,
}

/// One AUC measurement: a repetition of the experiment at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_hash: String,
    pub experiment: String,
    pub target_dimension: String,
    pub source_dimension: Option<String>,
    pub repetition: u32,
    pub seed: u64,
    pub budget: usize,
    pub auc: f64,
    pub mean_shot_ratio: f64,
    pub support_size: usize,
    pub source_size: usize,
    pub annotated_ids: Vec<String>,
    pub invalid_count: usize,
    pub flags: Vec<RunFlag>,
    pub queries: Vec<QueryOutcome>,
}

/// Uniform draws without replacement from the not-yet-annotated part of a
/// pool, on a dedicated seeded stream. Successive draws continue the stream.
#[derive(Debug, Clone)]
pub struct AnnotationSampler {
    rng: ChaCha8Rng,
}

impl AnnotationSampler {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ANNOTATION_STREAM);
        AnnotationSampler { rng }
    }

    pub fn draw(&mut self, pool: &DatasetBundle, already: &BTreeSet<String>, n: usize) -> Result<Vec<Post>> {
        let candidates: Vec<&Post> = pool.posts().iter().filter(|p| !already.contains(&p.id)).collect();
        if candidates.len() < n {
            return Err(Error::PoolExhausted { requested: n, available: candidates.len() });
        }
        Ok(rand::seq::index::sample(&mut self.rng, candidates.len(), n)
            .into_iter()
            .map(|i| candidates[i].clone())
            .collect())
    }
}

pub fn sample_for_annotation(
    pool: &DatasetBundle,
    already: &BTreeSet<String>,
    n: usize,
    seed: u64,
) -> Result<Vec<Post>> {
    AnnotationSampler::new(seed).draw(pool, already, n)
}
