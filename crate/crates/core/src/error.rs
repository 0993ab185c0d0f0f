use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed posterior header: {0}")]
    MalformedHeader(String),

    #[error("truncated posterior payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("trailing data after posterior payload: expected {expected} bytes, found {actual}")]
    TrailingData { expected: usize, actual: usize },

    #[error("invalid posterior value {value} at frame {frame}, token {token}")]
    InvalidValue {
        frame: usize,
        token: usize,
        value: f32,
    },

    #[error("invalid posterior matrix: {0}")]
    InvalidMatrix(String),

    #[error("token table: {0}")]
    TokenTable(String),

    #[error("transcript: {0}")]
    Transcript(String),

    #[error("normalization rules: {0}")]
    Rules(String),

    #[error("utterance {utterance_id}: character {ch:?} has no token")]
    MissingToken { utterance_id: String, ch: char },

    #[error("all utterances were dropped during normalization")]
    AllDropped,

    #[error("text of {chars} characters cannot be aligned to {frames} frames")]
    InfeasibleLength { chars: usize, frames: usize },

    #[error("window of {window} frames is infeasible for {frames} frames and {chars} characters; use a window of at least {required} frames")]
    InfeasibleWindow {
        window: usize,
        frames: usize,
        chars: usize,
        required: usize,
    },

    #[error(
        "alignment path escaped the window at character {char_index}; increase the window size"
    )]
    WindowEscape { char_index: usize },

    #[error("no finite alignment path")]
    NoPath,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("segment manifest: {0}")]
    Manifest(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("augmentation: {0}")]
    Augment(String),

    #[error("synthesis: {0}")]
    Synth(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedHeader(_) => "malformed-header",
            Error::Truncated { .. } => "truncated",
            Error::TrailingData { .. } => "trailing-data",
            Error::InvalidValue { .. } => "invalid-value",
            Error::InvalidMatrix(_) => "invalid-matrix",
            Error::TokenTable(_) => "token-table",
            Error::Transcript(_) => "transcript",
            Error::Rules(_) => "rules",
            Error::MissingToken { .. } => "missing-token",
            Error::AllDropped => "all-dropped",
            Error::InfeasibleLength { .. } => "infeasible-length",
            Error::InfeasibleWindow { .. } => "infeasible-window",
            Error::WindowEscape { .. } => "window-escape",
            Error::NoPath => "no-path",
            Error::Config(_) => "config",
            Error::Manifest(_) => "manifest",
            Error::Evaluation(_) => "evaluation",
            Error::Augment(_) => "augment",
            Error::Synth(_) => "synth",
            Error::Json(_) => "json",
        }
    }
}
