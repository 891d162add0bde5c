use std::path::PathBuf;

/// Errors produced by the detection toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to decode audio {path}: {reason}")]
    Decode { path: String, reason: String },

    #[error("audio contains no samples")]
    EmptyAudio,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{path} matches more than one labeling rule ({rules:?})")]
    AmbiguousLabel { path: String, rules: Vec<String> },

    #[error("too few samples: {0}")]
    TooFewSamples(String),

    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("input contains NaN or infinite values")]
    NaNInput,

    #[error("only one class present in the labels")]
    SingleClass,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("no cached features for sample `{0}`")]
    MissingFeatureCache(String),

    #[error("embedding provider failed: {0}")]
    Provider(String),

    #[error("lyrics required but missing for `{0}`")]
    MissingLyrics(String),

    #[error("model does not expose gradients")]
    NonDifferentiableModel,

    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),

    #[error("layer `{0}` not found")]
    LayerNotFound(String),

    #[error("segmentation has a single segment")]
    DegenerateSegmentation,

    #[error("no input masks given")]
    EmptyInput,

    #[error("need at least {needed} techniques, got {got}")]
    TooFewTechniques { needed: usize, got: usize },

    #[error("need at least 2 runs, got {0}")]
    TooFewRuns(usize),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
