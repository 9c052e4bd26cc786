use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] stormwatch_core::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    /// A bad row in an input file; `line` is 1-based and counts the header.
    #[error("{origin}, line {line}: {message}")]
    Parse { origin: String, line: u64, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("{what} {id} not found")]
    NotFound { what: &'static str, id: String },

    #[error("conflict: {0}")]
    Conflict(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn parse(origin: &str, line: u64, message: impl Into<String>) -> Error {
        Error::Parse { origin: origin.to_owned(), line, message: message.into() }
    }
}
