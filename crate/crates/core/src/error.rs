use alloc::string::String;

use crate::types::Label;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid post {id:?}: {reason}")]
    InvalidPost { id: String, reason: &'static str },
    #[error("invalid dimension {name:?}: {reason}")]
    InvalidDimension { name: String, reason: &'static str },
    #[error("duplicate post id {0:?}")]
    DuplicateId(String),
    #[error("unknown dimension {0:?}")]
    UnknownDimension(String),
    #[error("label references unknown post {0:?}")]
    UnknownPost(String),
    #[error("dimension {0:?} has no labeled posts")]
    NoLabels(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("bundle too small to stratify: {0}")]
    TooSmallToStratify(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus yields zero tokens")]
    NoTokens,
    #[error("support set has no {0} examples")]
    MissingClass(Label),
    #[error("shot {0:?} is source-domain but no source dimension was given")]
    MissingSourceDimension(String),
    #[error("query block needs {needed} tokens but the budget is {budget}")]
    QueryExceedsBudget { needed: usize, budget: usize },
    #[error("AUC undefined: scores contain a single class")]
    SingleClass,
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error("baseline AUC must be positive, got {0}")]
    ZeroBaseline(f64),
    #[error("no matching run for repetition {repetition}, budget {budget}")]
    UnmatchedRun { repetition: u32, budget: usize },
    #[error("vector is constant; correlation undefined")]
    ConstantVector,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate feature space: {0}")]
    DegenerateFeatures(&'static str),
    #[error("attribute {attribute:?} missing from response for post {post_id:?}")]
    MissingAttribute { post_id: String, attribute: String },
    #[error("pool exhausted: requested {requested}, {available} unannotated posts left")]
    PoolExhausted { requested: usize, available: usize },
}
