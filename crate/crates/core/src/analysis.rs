//! Label correlations, dataset separability, and covariates of transfer gain.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::DatasetBundle;
use crate::metrics::GainReport;
use crate::vectorizer::{SparseVector, Vocabulary};
use crate::{Error, Label, Post, Result};

/// Pearson product-moment correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::Precondition(format!("need at least 2 paired values, got {}", a.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ConstantVector);
    }
    Ok((sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0))
}

pub fn pearson_labels(a: &[Label], b: &[Label]) -> Result<f64> {
    let fa: Vec<f64> = a.iter().map(|l| l.as_f64()).collect();
    let fb: Vec<f64> = b.iter().map(|l| l.as_f64()).collect();
    pearson(&fa, &fb)
}

/// Symmetric matrix of Pearson r between dimensions of one dataset.
/// Each pair uses the posts labeled on both; `None` where undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        self.values[i][j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("dimension");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in self.names.iter().zip(&self.values) {
            out.push_str(name);
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    let _ = write!(out, "{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn correlation_matrix(bundle: &DatasetBundle, dimensions: &[&str]) -> Result<CorrelationMatrix> {
    for d in dimensions {
        bundle.dimension(d)?;
    }
    let k = dimensions.len();
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for post in bundle.posts() {
                if let (Some(x), Some(y)) = (bundle.label(&post.id, dimensions[i]), bundle.label(&post.id, dimensions[j])) {
                    a.push(x);
                    b.push(y);
                }
            }
            let r = match pearson_labels(&a, &b) {
                Ok(r) => Some(if i == j { 1.0 } else { r }),
                Err(Error::ConstantVector) | Err(Error::Precondition(_)) => None,
                Err(e) => return Err(e),
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix { names: dimensions.iter().map(|d| String::from(*d)).collect(), values })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { lambda: 1e-4, epochs: 20 }
    }
}

/// Linear SVM with an (also regularized) bias, trained with Pegasos over a
/// fixed seeded visiting order. The model is the running mean of the
/// epoch-end iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    weights: Vec<f64>,
    bias: f64,
    /// Regularized hinge objective on the training data after each epoch.
    pub objective_trace: Vec<f64>,
}

fn sparse_dot(w: &[f64], x: &SparseVector) -> f64 {
    x.entries().iter().map(|&(i, v)| w[i as usize] * v).sum()
}

fn sign(y: Label) -> f64 {
    if y.is_positive() {
        1.0
    } else {
        -1.0
    }
}

impl LinearSvm {
    pub fn train(data: &[(SparseVector, Label)], n_features: usize, params: SvmParams, seed: u64) -> Self {
        // w = scale * v (bias is feature `n_features`), so the shrink step is O(1)
        let mut v = vec![0.0; n_features + 1];
        let mut scale = 1.0;
        let mut t = 0u64;
        let mut order: Vec<usize> = (0..data.len()).collect();
        // one seeded permutation, replayed every epoch
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut trace = Vec::with_capacity(params.epochs);
        let mut avg = vec![0.0; n_features + 1];
        let mut epochs_done = 0.0;
        for _ in 0..params.epochs {
            for &i in &order {
                t += 1;
                let (x, y) = (&data[i].0, sign(data[i].1));
                let eta = 1.0 / (params.lambda * t as f64);
                let margin = y * scale * (sparse_dot(&v, x) + v[n_features]);
                scale *= 1.0 - eta * params.lambda;
                if scale == 0.0 {
                    v.iter_mut().for_each(|w| *w = 0.0);
                    scale = 1.0;
                }
                if margin < 1.0 {
                    let step = eta * y / scale;
                    for &(j, xv) in x.entries() {
                        v[j as usize] += step * xv;
                    }
                    v[n_features] += step;
                }
            }
            if scale != 1.0 {
                v.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
            epochs_done += 1.0;
            for (a, w) in avg.iter_mut().zip(&v) {
                *a += (w - *a) / epochs_done;
            }
            trace.push(objective(&avg[..n_features], avg[n_features], data, params.lambda));
        }
        let bias = avg.pop().unwrap_or(0.0);
        LinearSvm { weights: avg, bias, objective_trace: trace }
    }

    pub fn decision(&self, x: &SparseVector) -> f64 {
        sparse_dot(&self.weights, x) + self.bias
    }

    pub fn predict(&self, x: &SparseVector) -> Label {
        Label::from_bool(self.decision(x) > 0.0)
    }

    pub fn accuracy(&self, data: &[(SparseVector, Label)]) -> f64 {
        let hits = data.iter().filter(|(x, y)| self.predict(x) == *y).count();
        hits as f64 / data.len() as f64
    }
}

/// `lambda/2 * |w|^2 + mean hinge loss`, with the bias inside the norm.
pub fn objective(weights: &[f64], bias: f64, data: &[(SparseVector, Label)], lambda: f64) -> f64 {
    let norm2: f64 = weights.iter().map(|w| w * w).sum::<f64>() + bias * bias;
    let hinge: f64 = data
        .iter()
        .map(|(x, y)| (1.0 - sign(*y) * (sparse_dot(weights, x) + bias)).max(0.0))
        .sum::<f64>()
        / data.len().max(1) as f64;
    lambda / 2.0 * norm2 + hinge
}

pub const MIN_SEPARABILITY_POSTS: usize = 20;
pub const SEPARABILITY_TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityResult {
    pub side_a: String,
    pub side_b: String,
    /// Held-out accuracy of side-A vs side-B classification.
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Both sides carry the same multiset of texts.
    pub degenerate: bool,
}

fn split_side(n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_test = (libm::round(n as f64 * SEPARABILITY_TEST_FRACTION) as usize).clamp(1, n - 1);
    let train = idx.split_off(n_test);
    (train, idx)
}

/// How well a linear SVM on TF-IDF features tells two post pools apart.
/// Side A is the positive class.
pub fn separability(
    side_a: (&str, &[Post]),
    side_b: (&str, &[Post]),
    seed: u64,
) -> Result<SeparabilityResult> {
    let (name_a, a) = side_a;
    let (name_b, b) = side_b;
    if a.len() < MIN_SEPARABILITY_POSTS || b.len() < MIN_SEPARABILITY_POSTS {
        return Err(Error::Precondition(format!(
            "separability needs at least {MIN_SEPARABILITY_POSTS} posts per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let first = &a[0].text;
    if a.iter().chain(b).all(|p| &p.text == first) {
        return Err(Error::DegenerateFeatures("all texts are identical"));
    }
    let vocab = Vocabulary::fit(a.iter().chain(b).map(|p| p.text.as_str()))
        .map_err(|_| Error::DegenerateFeatures("no tokens in either side"))?;
    let mut texts_a: Vec<&str> = a.iter().map(|p| p.text.as_str()).collect();
    let mut texts_b: Vec<&str> = b.iter().map(|p| p.text.as_str()).collect();
    texts_a.sort_unstable();
    texts_b.sort_unstable();
    let degenerate = texts_a == texts_b;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (posts, label) in [(a, Label::Positive), (b, Label::Negative)] {
        let (tr, te) = split_side(posts.len(), &mut rng);
        train.extend(tr.into_iter().map(|i| (vocab.transform(&posts[i].text), label)));
        test.extend(te.into_iter().map(|i| (vocab.transform(&posts[i].text), label)));
    }
    let svm = LinearSvm::train(&train, vocab.len(), SvmParams::default(), seed);
    Ok(SeparabilityResult {
        side_a: name_a.into(),
        side_b: name_b.into(),
        accuracy: svm.accuracy(&test),
        n_train: train.len(),
        n_test: test.len(),
        degenerate,
    })
}

pub fn separability_csv(results: &[SeparabilityResult]) -> String {
    let mut out = String::from("side_a,side_b,accuracy,n_train,n_test,degenerate\n");
    for r in results {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.side_a, r.side_b, r.accuracy, r.n_train, r.n_test, r.degenerate);
    }
    out
}

fn dense_cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = libm::sqrt(u.iter().map(|a| a * a).sum());
    let nv = libm::sqrt(v.iter().map(|a| a * a).sum());
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Mean cosine over all cross pairs of two embedding sets.
pub fn mean_pairwise_cosine(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Precondition("mean similarity of an empty set".into()));
    }
    let mut total = 0.0;
    for u in a {
        for v in b {
            total += dense_cosine(u, v)?;
        }
    }
    Ok(total / (a.len() * b.len()) as f64)
}

/// Seeded subsample of at most `max` indices, in ascending order.
pub fn subsample_indices(n: usize, max: usize, seed: u64) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, max).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    BaselineAuc,
    LabelImbalanceGap,
    SourceTargetLabelCorr,
    Separability,
}

impl Covariate {
    pub const ALL: [Covariate; 4] =
        [Covariate::BaselineAuc, Covariate::LabelImbalanceGap, Covariate::SourceTargetLabelCorr, Covariate::Separability];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::BaselineAuc => "baseline_auc",
            Covariate::LabelImbalanceGap => "label_imbalance_gap",
            Covariate::SourceTargetLabelCorr => "source_target_label_corr",
            Covariate::Separability => "separability",
        }
    }
}

/// Per-scenario covariates that the gain reports do not carry themselves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCovariates {
    pub label_imbalance_gap: Option<f64>,
    pub source_target_label_corr: Option<f64>,
    pub separability: Option<f64>,
}

/// Absolute difference of positive rates.
pub fn label_imbalance_gap(source_rate: f64, target_rate: f64) -> f64 {
    libm::fabs(source_rate - target_rate)
}

/// Pearson r between a covariate and the mean per-repetition gain, one point
/// per (transfer scenario, budget). Scenario covariates are keyed by
/// `(source_dimension, target_dimension)`.
pub fn gain_correlates(
    reports: &[GainReport],
    covariate: Covariate,
    scenarios: &BTreeMap<(String, String), ScenarioCovariates>,
) -> Result<f64> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for report in reports {
        let source = report
            .source_dimension
            .as_ref()
            .ok_or_else(|| Error::Precondition("gain report without a source dimension".into()))?;
        let key = (source.clone(), report.target_dimension.clone());
        for cell in &report.budgets {
            let x = match covariate {
                Covariate::BaselineAuc => Some(cell.baseline_mean_auc),
                other => scenarios.get(&key).and_then(|s| match other {
                    Covariate::LabelImbalanceGap => s.label_imbalance_gap,
                    Covariate::SourceTargetLabelCorr => s.source_target_label_corr,
                    _ => s.separability,
                }),
            };
            let x = x.ok_or_else(|| Error::MissingAttribute {
                post_id: format!("{}->{}", key.0, key.1),
                attribute: covariate.name().into(),
            })?;
            xs.push(x);
            ys.push(cell.mean_of_gains);
        }
    }
    if xs.len() < 3 {
        return Err(Error::Precondition(format!("gain correlation needs at least 3 points, got {}", xs.len())));
    }
    pearson(&xs, &ys)
}
