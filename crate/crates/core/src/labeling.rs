//! Threshold binarization of score-valued labeler output.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Label, LabeledExample, Post, Provenance, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Attribute scores returned by a Perspective-style service for one post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelerResponse {
    pub post_id: String,
    pub scores: BTreeMap<String, f64>,
    /// Unix seconds.
    pub fetched_at: u64,
}

impl LabelerResponse {
    pub fn validate(&self) -> Result<()> {
        match self.scores.values().find(|s| !(0.0..=1.0).contains(*s)) {
            Some(&bad) => Err(Error::Precondition(format!("score {bad} for post {:?} outside [0, 1]", self.post_id))),
            None => Ok(()),
        }
    }
}

/// Positive iff `score >= threshold`.
pub fn binarize_score(score: f64, threshold: f64) -> Label {
    Label::from_bool(score >= threshold)
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::Precondition(format!("threshold must be in (0, 1), got {threshold}")))
    }
}

/// `(post id, label)` for every response, in order.
pub fn binarize_labels(responses: &[LabelerResponse], attribute: &str, threshold: f64) -> Result<Vec<(String, Label)>> {
    check_threshold(threshold)?;
    responses
        .iter()
        .map(|r| {
            r.scores
                .get(attribute)
                .map(|&s| (r.post_id.clone(), binarize_score(s, threshold)))
                .ok_or_else(|| Error::MissingAttribute { post_id: r.post_id.clone(), attribute: attribute.into() })
        })
        .collect()
}

/// Labels `posts` for dimension `dimension` from the matching responses.
pub fn binarize(
    posts: &[Post],
    responses: &[LabelerResponse],
    attribute: &str,
    dimension: &str,
    threshold: f64,
    provenance: Provenance,
) -> Result<Vec<LabeledExample>> {
    let labels: BTreeMap<String, Label> = binarize_labels(responses, attribute, threshold)?.into_iter().collect();
    posts
        .iter()
        .map(|p| {
            labels
                .get(&p.id)
                .map(|&l| LabeledExample::new(p.clone(), dimension, l, provenance))
                .ok_or_else(|| Error::MissingAttribute { post_id: p.id.clone(), attribute: attribute.into() })
        })
        .collect()
}

/// The largest threshold whose `>=` rule labels at least
/// `round(rate * n)` scores positive.
pub fn threshold_for_rate(scores: &[f64], rate: f64) -> Result<f64> {
    if scores.is_empty() || !(0.0..=1.0).contains(&rate) {
        return Err(Error::Precondition(format!("need scores and a rate in [0, 1], got rate {rate}")));
    }
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = libm::round(rate * sorted.len() as f64) as usize;
    Ok(if k == 0 { libm::nextafter(sorted[0], f64::INFINITY) } else { sorted[k - 1] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn resp(id: &str, score: f64) -> LabelerResponse {
        let mut scores = BTreeMap::new();
        scores.insert("TOXICITY".to_string(), score);
        LabelerResponse { post_id: id.into(), scores, fetched_at: 0 }
    }

    #[test]
    fn boundary_is_positive() {
        assert_eq!(binarize_score(0.5, 0.5), Label::Positive);
        assert_eq!(binarize_score(0.4999, 0.5), Label::Negative);
    }

    #[test]
    fn rule_application() {
        let rs = vec![resp("a", 0.2), resp("b", 0.7), resp("c", 0.5)];
        let labels: Vec<Label> = binarize_labels(&rs, "TOXICITY", 0.5).unwrap().into_iter().map(|x| x.1).collect();
        assert_eq!(labels, [Label::Negative, Label::Positive, Label::Positive]);
    }

    #[test]
    fn binarize_into_examples() {
        let posts = vec![Post::new("a", "x", "metoo").unwrap(), Post::new("b", "y", "metoo").unwrap()];
        let rs = vec![resp("b", 0.9), resp("a", 0.1)];
        let ex = binarize(&posts, &rs, "TOXICITY", "toxicity", 0.5, Provenance::Target).unwrap();
        assert_eq!(ex[0].label, Label::Negative);
        assert_eq!(ex[1].label, Label::Positive);
        assert_eq!(ex[1].dimension, "toxicity");
    }

    #[test]
    fn errors() {
        let rs = vec![resp("a", 0.2)];
        assert!(matches!(binarize_labels(&rs, "SEXUALLY_EXPLICIT", 0.5), Err(Error::MissingAttribute { .. })));
        assert!(matches!(binarize_labels(&rs, "TOXICITY", 0.0), Err(Error::Precondition(_))));
        assert!(matches!(binarize_labels(&rs, "TOXICITY", 1.0), Err(Error::Precondition(_))));
        assert!(resp("a", 1.2).validate().is_err());
    }

    #[test]
    fn threshold_sweep_hits_target_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(188);
        let scores: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
        let t = threshold_for_rate(&scores, 0.188).unwrap();
        let positives = scores.iter().filter(|&&s| binarize_score(s, t).is_positive()).count();
        assert_eq!(positives, 188);
        let t0 = threshold_for_rate(&scores, 0.0).unwrap();
        assert_eq!(scores.iter().filter(|&&s| s >= t0).count(), 0);
    }

    #[test]
    fn monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rs: Vec<LabelerResponse> = (0..2000).map(|i| resp(&format!("p{i}"), rng.gen())).collect();
        let mut last = usize::MAX;
        for step in 1..100 {
            let t = step as f64 / 100.0;
            let pos = binarize_labels(&rs, "TOXICITY", t).unwrap().iter().filter(|x| x.1.is_positive()).count();
            assert!(pos <= last);
            last = pos;
        }
    }
}
