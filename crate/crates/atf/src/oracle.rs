//! Label providers for the active-learning loop.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use atf_core::corpus::DatasetBundle;
use atf_core::{Dimension, LabeledExample, Post, Provenance};

use crate::server::{StoreError, TaskStore};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("no ground-truth label for post {post_id:?} on {dimension:?}")]
    MissingTruth { post_id: String, dimension: String },
    #[error("annotation deadline passed with {} of {total} posts labeled", partial.len())]
    Deadline { partial: Vec<LabeledExample>, total: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub trait Oracle: Send + Sync {
    /// Target-domain labels for `posts` on `dimension`, in input order.
    fn label(&self, posts: &[Post], dimension: &Dimension) -> Result<Vec<LabeledExample>, OracleError>;

    /// Whether independent repetitions may query concurrently.
    fn parallel_safe(&self) -> bool {
        true
    }
}

/// Reads held-back ground truth from a labeled pool.
pub struct SimulatedOracle {
    truth: Arc<DatasetBundle>,
}

impl SimulatedOracle {
    pub fn new(truth: Arc<DatasetBundle>) -> Self {
        SimulatedOracle { truth }
    }
}

impl Oracle for SimulatedOracle {
    fn label(&self, posts: &[Post], dimension: &Dimension) -> Result<Vec<LabeledExample>, OracleError> {
        posts
            .iter()
            .map(|p| {
                let label = self.truth.label(&p.id, &dimension.name).ok_or_else(|| OracleError::MissingTruth {
                    post_id: p.id.clone(),
                    dimension: dimension.name.clone(),
                })?;
                Ok(LabeledExample::new(p.clone(), dimension.name.clone(), label, Provenance::Target))
            })
            .collect()
    }
}

/// Sends posts to the annotation queue and blocks until a human labels them
/// all or the deadline passes.
pub struct HumanOracle {
    store: Arc<TaskStore>,
    experiment: String,
    deadline: Duration,
    poll: Duration,
}

impl HumanOracle {
    pub fn new(store: Arc<TaskStore>, experiment: impl Into<String>, deadline: Duration) -> Self {
        HumanOracle { store, experiment: experiment.into(), deadline, poll: Duration::from_millis(500) }
    }

    pub fn with_poll_interval(mut self, poll: Duration) -> Self {
        self.poll = poll;
        self
    }
}

impl Oracle for HumanOracle {
    fn label(&self, posts: &[Post], dimension: &Dimension) -> Result<Vec<LabeledExample>, OracleError> {
        if posts.is_empty() {
            return Ok(Vec::new());
        }
        let batch = self.store.enqueue(&self.experiment, posts, dimension, self.deadline)?;
        log::info!("waiting for {} annotations in {batch}", posts.len());
        let started = Instant::now();
        let collect = || -> Result<Vec<LabeledExample>, OracleError> {
            let by_id: BTreeMap<String, _> =
                self.store.batch_labels(&batch)?.into_iter().map(|l| (l.post_id.clone(), l)).collect();
            Ok(posts
                .iter()
                .filter_map(|p| {
                    by_id
                        .get(&p.id)
                        .map(|l| LabeledExample::new(p.clone(), dimension.name.clone(), l.label, Provenance::Target))
                })
                .collect())
        };
        loop {
            if self.store.batch_status(&batch)?.complete {
                return collect();
            }
            if started.elapsed() >= self.deadline {
                return Err(OracleError::Deadline { partial: collect()?, total: posts.len() });
            }
            std::thread::sleep(self.poll.min(self.deadline.saturating_sub(started.elapsed())));
        }
    }

    fn parallel_safe(&self) -> bool {
        false
    }
}
