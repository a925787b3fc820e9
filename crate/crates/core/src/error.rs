use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("index out of bounds: {what} {index} (limit {limit})")]
    IndexBounds {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("no text available for {0}")]
    EmptyText(String),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("every user with training data is saturated; no negative item exists")]
    Saturated,

    #[error("transport error: {0}")]
    Transport(String),

    #[error("provider returned status {status}: {body}")]
    Provider { status: u16, body: String },

    #[error("request timed out after {0:.1}s")]
    Timeout(f64),

    #[error("could not parse {what} from response: {raw:?}")]
    ResponseParse { what: &'static str, raw: String },

    #[error("{subject}: {source}")]
    Subject {
        subject: String,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("non-finite value in {term} at step {step}")]
    NonFinite { term: String, step: usize },

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("{} subject(s) failed; first: {}", .0.len(), .0.first().map(|e| e.to_string()).unwrap_or_default())]
    Failures(Vec<Error>),
}

impl Error {
    pub fn with_subject(self, subject: impl Into<String>) -> Self {
        Error::Subject {
            subject: subject.into(),
            source: Box::new(self),
        }
    }

    /// Strips subject annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Subject { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_provider_failure(&self) -> bool {
        if let Error::Failures(list) = self {
            return list.iter().any(Error::is_provider_failure);
        }
        matches!(
            self.root(),
            Error::Transport(_)
                | Error::Provider { .. }
                | Error::Timeout(_)
                | Error::ResponseParse { .. }
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Artifact(err.to_string())
    }
}
