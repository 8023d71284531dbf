//! Class-balanced nearest-neighbour shot selection.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::vectorizer::{cosine, SparseVector, Vocabulary};
use crate::{Error, Label, LabeledExample, Post, Provenance, Result};

/// The pool shots are drawn from: every pre-labeled source exemplar plus the
/// oracle-labeled target exemplars.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub source_examples: Vec<LabeledExample>,
    pub target_examples: Vec<LabeledExample>,
}

impl SupportSet {
    pub fn new(source_examples: Vec<LabeledExample>, target_examples: Vec<LabeledExample>) -> Self {
        SupportSet { source_examples, target_examples }
    }

    pub fn len(&self) -> usize {
        self.source_examples.len() + self.target_examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Target exemplars first, then source.
    pub fn iter(&self) -> impl Iterator<Item = &LabeledExample> {
        self.target_examples.iter().chain(&self.source_examples)
    }

    pub fn count(&self, label: Label) -> usize {
        self.iter().filter(|e| e.label == label).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotOrder {
    /// Least similar first; the most similar shot sits right before the query.
    #[default]
    AscendingSimilarity,
    DescendingSimilarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub n_shots: usize,
    #[serde(default)]
    pub order: ShotOrder,
    /// Split each class's quota evenly between target and source exemplars.
    #[serde(default)]
    pub domain_balanced: bool,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy { n_shots: 32, order: ShotOrder::AscendingSimilarity, domain_balanced: false }
    }
}

impl SelectionPolicy {
    pub fn new(n_shots: usize) -> Result<Self> {
        let policy = SelectionPolicy { n_shots, ..Default::default() };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_shots < 2 || !self.n_shots.is_multiple_of(2) {
            return Err(Error::Precondition(format!("n_shots must be even and >= 2, got {}", self.n_shots)));
        }
        Ok(())
    }

    pub fn per_class(&self) -> usize {
        self.n_shots / 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shot {
    pub example: LabeledExample,
    pub similarity: f64,
    /// 1-based position in prompt order.
    pub rank: usize,
}

/// Selection preference: higher similarity first, then lexicographic id
/// (dataset breaks the remaining tie).
fn preference(a: (&LabeledExample, f64), b: (&LabeledExample, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| a.0.post.id.cmp(&b.0.post.id))
        .then_with(|| a.0.post.dataset.cmp(&b.0.post.dataset))
}

/// Support exemplars with their TF-IDF vectors precomputed against one
/// vocabulary, so many queries can be served without re-transforming.
///
/// Exemplars are deduplicated by `(dataset, post id)`; a post present in
/// both halves keeps its target-domain copy.
#[derive(Debug, Clone)]
pub struct SupportIndex<'a> {
    examples: Vec<&'a LabeledExample>,
    vectors: Vec<SparseVector>,
}

impl<'a> SupportIndex<'a> {
    pub fn new(support: &'a SupportSet, vocab: &Vocabulary) -> Self {
        let mut seen = BTreeSet::new();
        let examples: Vec<&LabeledExample> =
            support.iter().filter(|e| seen.insert((e.post.dataset.as_str(), e.post.id.as_str()))).collect();
        let vectors = examples.iter().map(|e| vocab.transform(&e.post.text)).collect();
        SupportIndex { examples, vectors }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Selects `2 * min(per_class, positives available, negatives available)`
    /// shots: the most similar exemplars of each class, ordered per policy.
    /// The query itself is never a candidate.
    pub fn select(&self, query: &Post, query_vector: &SparseVector, policy: &SelectionPolicy) -> Result<Vec<Shot>> {
        policy.validate()?;
        let mut by_class: [Vec<(&LabeledExample, f64)>; 2] = [Vec::new(), Vec::new()];
        for (ex, vec) in self.examples.iter().zip(&self.vectors) {
            if ex.post.id == query.id && ex.post.dataset == query.dataset {
                continue;
            }
            by_class[ex.label.is_positive() as usize].push((ex, cosine(query_vector, vec)));
        }
        for (class, label) in [(1, Label::Positive), (0, Label::Negative)] {
            if by_class[class].is_empty() {
                return Err(Error::MissingClass(label));
            }
        }
        let k = policy.per_class().min(by_class[0].len()).min(by_class[1].len());

        let mut chosen: Vec<(&LabeledExample, f64)> = Vec::with_capacity(2 * k);
        for candidates in &mut by_class {
            candidates.sort_by(|a, b| preference(*a, *b));
            if policy.domain_balanced {
                chosen.extend(take_domain_balanced(candidates, k));
            } else {
                chosen.extend(candidates.iter().take(k).copied());
            }
        }
        chosen.sort_by(|a, b| preference(*a, *b));
        if policy.order == ShotOrder::AscendingSimilarity {
            chosen.reverse();
        }
        Ok(chosen
            .into_iter()
            .enumerate()
            .map(|(i, (ex, similarity))| Shot { example: ex.clone(), similarity, rank: i + 1 })
            .collect())
    }
}

/// Up to `ceil(k/2)` target and the rest source from a preference-sorted
/// class list, topping up from whichever domain has spare exemplars.
fn take_domain_balanced<'e>(sorted: &[(&'e LabeledExample, f64)], k: usize) -> Vec<(&'e LabeledExample, f64)> {
    let target_quota = k.div_ceil(2);
    let targets: Vec<_> = sorted.iter().filter(|c| c.0.provenance == Provenance::Target).copied().collect();
    let sources: Vec<_> = sorted.iter().filter(|c| c.0.provenance == Provenance::Source).copied().collect();
    let n_target = target_quota.min(targets.len()).max(k.saturating_sub(sources.len()));
    let n_source = k - n_target;
    let mut out: Vec<_> = targets.into_iter().take(n_target).chain(sources.into_iter().take(n_source)).collect();
    out.sort_by(|a, b| preference(*a, *b));
    out
}

/// One-shot convenience around [`SupportIndex`].
pub fn select_shots(
    support: &SupportSet,
    query: &Post,
    vocab: &Vocabulary,
    policy: &SelectionPolicy,
) -> Result<Vec<Shot>> {
    SupportIndex::new(support, vocab).select(query, &vocab.transform(&query.text), policy)
}

/// Fraction of shots drawn from the target domain; `None` for no shots.
pub fn shot_provenance_ratio(shots: &[Shot]) -> Option<f64> {
    if shots.is_empty() {
        return None;
    }
    let target = shots.iter().filter(|s| s.example.provenance == Provenance::Target).count();
    Some(target as f64 / shots.len() as f64)
}
