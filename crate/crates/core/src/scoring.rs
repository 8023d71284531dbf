//! Turning the model's two answer-token probabilities into a prediction and a
//! ranking score, plus deterministic stand-ins for a language model.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};

use crate::prompter::{parse_rendered, PromptSpec};
use crate::text::tokenize;
use crate::{Error, Label, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub query_id: String,
    pub p_yes: f64,
    pub p_no: f64,
    /// `p_yes / (p_yes + p_no)`.
    pub score: f64,
    pub predicted: Label,
    pub model_id: String,
    pub latency_ms: u64,
}

impl ScoreResult {
    /// From natural-log probabilities of the positive and negative
    /// continuations. Either may be `-inf` (zero mass), not both.
    pub fn from_logprobs(
        query_id: impl Into<String>,
        lp_yes: f64,
        lp_no: f64,
        model_id: impl Into<String>,
        latency_ms: u64,
    ) -> Result<Self> {
        for lp in [lp_yes, lp_no] {
            if lp.is_nan() || lp == f64::INFINITY {
                return Err(Error::NonFiniteScore(lp));
            }
        }
        if lp_yes == f64::NEG_INFINITY && lp_no == f64::NEG_INFINITY {
            return Err(Error::NonFiniteScore(lp_yes));
        }
        let score = if lp_yes == lp_no { 0.5 } else { logistic(lp_yes - lp_no) };
        Ok(ScoreResult {
            query_id: query_id.into(),
            p_yes: libm::exp(lp_yes),
            p_no: libm::exp(lp_no),
            score,
            predicted: Label::from_bool(lp_yes > lp_no),
            model_id: model_id.into(),
            latency_ms,
        })
    }

    /// From raw probability masses (any common positive scale).
    pub fn from_probs(
        query_id: impl Into<String>,
        p_yes: f64,
        p_no: f64,
        model_id: impl Into<String>,
        latency_ms: u64,
    ) -> Result<Self> {
        for p in [p_yes, p_no] {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::NonFiniteScore(p));
            }
        }
        if p_yes + p_no == 0.0 {
            return Err(Error::NonFiniteScore(0.0));
        }
        Ok(ScoreResult {
            query_id: query_id.into(),
            p_yes,
            p_no,
            score: p_yes / (p_yes + p_no),
            predicted: Label::from_bool(p_yes > p_no),
            model_id: model_id.into(),
            latency_ms,
        })
    }
}

/// Numerically stable `1 / (1 + e^-z)`.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `(ln logistic(z), ln logistic(-z))` without underflow.
pub fn logistic_logprobs(z: f64) -> (f64, f64) {
    (-softplus(-z), -softplus(z))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Sum of lexicon weights over the tokens of `text`, counting repeats.
pub fn lexicon_logit(text: &str, lexicon: &BTreeMap<String, f64>) -> f64 {
    tokenize(text).iter().filter_map(|t| lexicon.get(t)).sum()
}

pub const MOCK_LEXICON_MODEL: &str = "mock-lexicon";

/// Deterministic stand-in model: `logistic(sum of lexicon weights in the
/// query text)`. Shots are ignored.
pub fn mock_score(prompt: &PromptSpec, lexicon: &BTreeMap<String, f64>) -> ScoreResult {
    let (lp_yes, lp_no) = logistic_logprobs(lexicon_logit(&prompt.query_text, lexicon));
    ScoreResult::from_logprobs(prompt.query_id.clone(), lp_yes, lp_no, MOCK_LEXICON_MODEL, 0)
        .expect("logistic log-probabilities are finite")
}

/// A deterministic mock that learns in context: each shot votes for its
/// answer with a weight equal to its token-set Jaccard overlap with the
/// query, and the mean vote is added to a lexicon prior.
///
/// `logit = prior_weight * lexicon_logit(query) + shot_weight * mean_i(sign_i * jaccard_i)`
///
/// It reads nothing but the prompt text, like a real model behind the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InContextMock {
    #[serde(default)]
    pub lexicon: BTreeMap<String, f64>,
    #[serde(default = "one")]
    pub prior_weight: f64,
    #[serde(default = "default_shot_weight")]
    pub shot_weight: f64,
    #[serde(default = "default_yes")]
    pub positive_token: String,
}

fn one() -> f64 {
    1.0
}

fn default_shot_weight() -> f64 {
    8.0
}

fn default_yes() -> String {
    "Yes".to_string()
}

impl Default for InContextMock {
    fn default() -> Self {
        InContextMock {
            lexicon: BTreeMap::new(),
            prior_weight: 1.0,
            shot_weight: default_shot_weight(),
            positive_token: default_yes(),
        }
    }
}

pub const MOCK_IN_CONTEXT_MODEL: &str = "mock-in-context";

impl InContextMock {
    /// The logit for a rendered prompt, or `None` if it doesn't parse.
    pub fn logit(&self, prompt: &str) -> Option<f64> {
        let parsed = parse_rendered(prompt)?;
        let query: BTreeSet<String> = tokenize(parsed.query_text).into_iter().collect();
        let prior = self.prior_weight * lexicon_logit(parsed.query_text, &self.lexicon);
        if parsed.shots.is_empty() {
            return Some(prior);
        }
        let mut vote = 0.0;
        for (text, _, answer) in &parsed.shots {
            let shot: BTreeSet<String> = tokenize(text).into_iter().collect();
            let union = query.union(&shot).count();
            if union == 0 {
                continue;
            }
            let jaccard = query.intersection(&shot).count() as f64 / union as f64;
            vote += if *answer == self.positive_token { jaccard } else { -jaccard };
        }
        Some(prior + self.shot_weight * vote / parsed.shots.len() as f64)
    }

    /// `(ln p_yes, ln p_no)` for a rendered prompt.
    pub fn logprobs(&self, prompt: &str) -> Option<(f64, f64)> {
        self.logit(prompt).map(logistic_logprobs)
    }
}
