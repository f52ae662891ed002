use std::path::PathBuf;

/// Errors produced anywhere in the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("class `{class_id}` appears in category `{first}` and again in `{second}` (line {line})")]
    DuplicateClass {
        class_id: String,
        first: String,
        second: String,
        line: usize,
    },

    #[error("category `{0}` has no classes")]
    EmptyCategory(String),

    #[error("pool has {available} classes but {requested} were requested")]
    PoolTooSmall { available: usize, requested: usize },

    #[error("{classes} classes cannot be split into {groups} equal groups")]
    NotDivisible { classes: usize, groups: usize },

    #[error("split has no category map")]
    MissingCategoryMap,

    #[error("index {index} out of range for {what} of size {size}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("length mismatch: {what} expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("target is not a probability distribution (sum {sum}, min {min})")]
    NotADistribution { sum: f64, min: f64 },

    #[error("color statistics missing: run the statistics pass (`multicat sample --color-stats`) first")]
    MissingColorStats,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
