//! Validated multi-dimension datasets and stratified splitting.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Dimension, Error, Label, LabeledExample, Post, Provenance, Result};

/// An immutable, validated dataset: posts, a sparse label table keyed by
/// `(post id, dimension)`, and the dimension registry it was labeled under.
///
/// Not every post needs a label for every dimension; an unlabeled target
/// pool is a bundle with no labels at all.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    name: String,
    posts: Vec<Post>,
    index: BTreeMap<String, usize>,
    labels: BTreeMap<(String, String), Label>,
    dimensions: Vec<Dimension>,
    positive_rate: BTreeMap<String, f64>,
}

impl DatasetBundle {
    pub fn new(
        name: impl Into<String>,
        posts: Vec<Post>,
        labels: BTreeMap<(String, String), Label>,
        dimensions: Vec<Dimension>,
    ) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, post) in posts.iter().enumerate() {
            if post.id.is_empty() {
                return Err(Error::InvalidPost { id: post.id.clone(), reason: "empty id" });
            }
            if post.text.trim().is_empty() {
                return Err(Error::InvalidPost { id: post.id.clone(), reason: "empty text" });
            }
            if index.insert(post.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(post.id.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for dim in &dimensions {
            dim.validate()?;
            if !seen.insert(dim.name.as_str()) {
                return Err(Error::InvalidDimension { name: dim.name.clone(), reason: "registered twice" });
            }
        }
        let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for ((post_id, dim), label) in &labels {
            if !index.contains_key(post_id) {
                return Err(Error::UnknownPost(post_id.clone()));
            }
            if !seen.contains(dim.as_str()) {
                return Err(Error::UnknownDimension(dim.clone()));
            }
            let entry = counts.entry(dim.as_str()).or_default();
            entry.1 += 1;
            if label.is_positive() {
                entry.0 += 1;
            }
        }
        let positive_rate = counts
            .into_iter()
            .map(|(dim, (pos, total))| (String::from(dim), pos as f64 / total as f64))
            .collect();
        Ok(DatasetBundle { name: name.into(), posts, index, labels, dimensions, positive_rate })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dimensions
    }

    pub fn dimension(&self, name: &str) -> Result<&Dimension> {
        self.dimensions
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::UnknownDimension(name.into()))
    }

    pub fn post(&self, id: &str) -> Option<&Post> {
        self.index.get(id).map(|&i| &self.posts[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn label(&self, post_id: &str, dimension: &str) -> Option<Label> {
        self.labels.get(&(post_id.into(), dimension.into())).copied()
    }

    /// The full label table, keyed by `(post id, dimension)`.
    pub fn labels(&self) -> &BTreeMap<(String, String), Label> {
        &self.labels
    }

    /// Labels of one post, in dimension-name order.
    pub fn labels_of<'a>(&'a self, post_id: &'a str) -> impl Iterator<Item = (&'a str, Label)> + 'a {
        self.dimensions.iter().filter_map(move |d| self.label(post_id, &d.name).map(|l| (d.name.as_str(), l)))
    }

    /// Fraction of positive labels among posts labeled for `dimension`.
    pub fn positive_rate(&self, dimension: &str) -> Result<f64> {
        self.dimension(dimension)?;
        self.positive_rate.get(dimension).copied().ok_or_else(|| Error::NoLabels(dimension.into()))
    }

    /// Every post labeled for `dimension`, as an exemplar with the given
    /// provenance. Post order is preserved.
    pub fn labeled_examples(&self, dimension: &str, provenance: Provenance) -> Result<Vec<LabeledExample>> {
        self.dimension(dimension)?;
        Ok(self
            .posts
            .iter()
            .filter_map(|p| {
                self.label(&p.id, dimension)
                    .map(|label| LabeledExample::new(p.clone(), dimension, label, provenance))
            })
            .collect())
    }

    /// The sub-bundle containing only the posts whose ids satisfy `keep`,
    /// in original order, with their labels.
    pub fn filter(&self, mut keep: impl FnMut(&Post) -> bool) -> DatasetBundle {
        let posts: Vec<Post> = self.posts.iter().filter(|p| keep(p)).cloned().collect();
        let ids: BTreeSet<&str> = posts.iter().map(|p| p.id.as_str()).collect();
        let labels = self
            .labels
            .iter()
            .filter(|((id, _), _)| ids.contains(id.as_str()))
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        DatasetBundle::new(self.name.clone(), posts, labels, self.dimensions.clone())
            .expect("a subset of a valid bundle is valid")
    }
}

/// Free-function form of [`DatasetBundle::positive_rate`].
pub fn positive_rate(bundle: &DatasetBundle, dimension: &str) -> Result<f64> {
    bundle.positive_rate(dimension)
}

/// Seeded stratified split into `(pool, test)`.
///
/// Posts are stratified jointly on their label vector across every
/// dimension (unlabeled counts as its own value). The test size is
/// `round(test_fraction * n)`, apportioned across strata by largest
/// remainder, so each stratum contributes within one post of its exact share.
pub fn split(bundle: &DatasetBundle, test_fraction: f64, seed: u64) -> Result<(DatasetBundle, DatasetBundle)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Precondition(format!("test_fraction must be in (0, 1), got {test_fraction}")));
    }
    let n = bundle.len();
    let n_test = libm::round(test_fraction * n as f64) as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::TooSmallToStratify(format!(
            "{n} posts at test_fraction {test_fraction} leaves an empty side"
        )));
    }

    let mut strata: BTreeMap<Vec<u8>, Vec<&str>> = BTreeMap::new();
    for post in bundle.posts() {
        let key = bundle
            .dimensions()
            .iter()
            .map(|d| match bundle.label(&post.id, &d.name) {
                None => 2,
                Some(l) => u8::from(l),
            })
            .collect();
        strata.entry(key).or_default().push(&post.id);
    }

    // Largest-remainder apportionment of n_test over strata.
    let mut quotas: Vec<(usize, f64)> = strata
        .values()
        .map(|ids| {
            let exact = ids.len() as f64 * n_test as f64 / n as f64;
            let floor = libm::floor(exact) as usize;
            (floor, exact - floor as f64)
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.0).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    for &i in order.iter().take(n_test - assigned) {
        quotas[i].0 += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_ids = BTreeSet::new();
    for (ids, (quota, _)) in strata.into_values().zip(quotas) {
        let mut ids = ids;
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        test_ids.extend(ids.into_iter().take(quota).map(String::from));
    }

    let test = bundle.filter(|p| test_ids.contains(&p.id));
    let pool = bundle.filter(|p| !test_ids.contains(&p.id));
    Ok((pool, test))
}
