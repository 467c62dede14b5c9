use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A required column is missing from a CSV header.
    #[error("schema error: {0}")]
    Schema(String),

    /// A label string could not be resolved to a class index.
    #[error("label error in row {row_id}: unknown label {label:?}")]
    Label { row_id: String, label: String },

    #[error("no documents")]
    NoDocuments,

    /// Malformed input data (duplicate ids, bad rationale positions, ...).
    #[error("invalid corpus: {0}")]
    Corpus(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    /// Invalid synthetic-corpus parameters.
    #[error("synthetic corpus spec error: {0}")]
    SynthSpec(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    /// Every category of an annotation matrix is degenerate.
    #[error("agreement undefined: every category has proportion 0 or 1")]
    UndefinedAgreement,

    #[error("empty vocabulary: corpus has no tokens")]
    EmptyVocabulary,

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    /// Two adjacent layers do not chain.
    #[error("build error between {lower} and {upper}: {message}")]
    Build {
        lower: String,
        upper: String,
        message: String,
    },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("non-finite activation in layer {layer} ({kind})")]
    Numeric { layer: usize, kind: String },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("training fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    /// Multinomial naive Bayes saw no training document for a class.
    #[error("prior error: class {0} has no training documents")]
    Prior(usize),

    /// The attribution method cannot pass through a layer.
    #[error("capability error: layer {layer} ({kind}) does not support {method}")]
    Capability {
        layer: usize,
        kind: String,
        method: String,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
