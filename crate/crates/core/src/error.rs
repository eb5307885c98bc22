use std::path::PathBuf;

use thiserror::Error;

use crate::hpo::Evaluation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("schema has {schema} columns but the file has {file}")]
    SchemaMismatch { schema: usize, file: usize },

    #[error("schema must tag exactly one label column, found {0}")]
    LabelColumnCount(usize),

    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },

    #[error("class '{label}' has {found} instances, need at least {needed}")]
    ClassTooSmall {
        label: String,
        found: usize,
        needed: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("embedding file line {line}: {message}")]
    EmbeddingFormat { line: usize, message: String },

    #[error("label '{label}' has out-of-vocabulary token '{token}'")]
    OutOfVocabulary { label: String, token: String },

    #[error("classes '{first}' and '{second}' map to identical label vectors")]
    DuplicateLabelVector { first: String, second: String },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("model mode mismatch: expected {expected}")]
    WrongMode { expected: &'static str },

    #[error("unknown hyperparameter '{name}' for {learner}")]
    UnknownHyperparameter { name: String, learner: &'static str },

    #[error(
        "semantic confidence row {row} diverged (regressor output coincides with a label vector)"
    )]
    Diverged { row: usize },

    #[error("objective failed after {} evaluations", history.len())]
    Tuning {
        history: Vec<Evaluation>,
        #[source]
        source: Box<Error>,
    },

    #[error("objective returned a non-finite value at {point:?}")]
    NonFiniteObjective { point: Vec<f64> },

    #[error("fold {fold}, stage '{stage}'")]
    Fold {
        fold: usize,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("unsupported report format '{0}'")]
    UnsupportedFormat(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_fold(self, fold: usize, stage: &'static str) -> Self {
        Error::Fold {
            fold,
            stage,
            source: Box::new(self),
        }
    }
}
