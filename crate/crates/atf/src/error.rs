use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] atf_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Malformed { path: PathBuf, line: u64, message: String },
    #[error("duplicate post id {0:?}")]
    DuplicateId(String),
    #[error("row {row}: missing text")]
    MissingText { row: u64 },
    #[error("schema maps unknown dimension {0:?}")]
    UnknownDimension(String),
    #[error("config: {0}")]
    Config(String),
    #[error("scorer: {0}")]
    Scorer(String),
    #[error("labeler: {0}")]
    Labeler(String),
    #[error("embedding endpoint: {0}")]
    Embed(String),
    #[error(transparent)]
    Oracle(#[from] crate::oracle::OracleError),
    #[error(transparent)]
    Store(#[from] crate::server::StoreError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Short name of the component an error originates from.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Core(e) => core_module(e),
            Error::Io { .. } => "io",
            Error::Malformed { .. } | Error::DuplicateId(_) | Error::MissingText { .. } | Error::UnknownDimension(_) => {
                "corpus"
            }
            Error::Config(_) => "config",
            Error::Scorer(_) => "scorer",
            Error::Labeler(_) => "labeler",
            Error::Embed(_) => "analysis",
            Error::Oracle(_) => "loop",
            Error::Store(_) => "server",
        }
    }
}

fn core_module(e: &atf_core::Error) -> &'static str {
    use atf_core::Error as E;
    match e {
        E::InvalidPost { .. }
        | E::InvalidDimension { .. }
        | E::DuplicateId(_)
        | E::UnknownDimension(_)
        | E::UnknownPost(_)
        | E::NoLabels(_)
        | E::TooSmallToStratify(_) => "corpus",
        E::EmptyCorpus | E::NoTokens => "vectorizer",
        E::MissingClass(_) => "selector",
        E::MissingSourceDimension(_) | E::QueryExceedsBudget { .. } => "prompter",
        E::NonFiniteScore(_) => "scorer",
        E::SingleClass | E::ZeroBaseline(_) | E::UnmatchedRun { .. } => "metrics",
        E::ConstantVector | E::LengthMismatch(..) | E::DegenerateFeatures(_) => "analysis",
        E::MissingAttribute { .. } => "labeler",
        E::PoolExhausted { .. } => "loop",
        E::Precondition(_) => "atf",
    }
}
