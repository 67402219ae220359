use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("radius is non-positive: {detail}")]
    NonPositiveRadius { detail: String },

    #[error("shape does not fit the grid with a {margin}-voxel margin: bounding box {lo:?}..{hi:?}, grid extent {extent:?}")]
    OutOfBounds {
        margin: usize,
        lo: [f64; 3],
        hi: [f64; 3],
        extent: [f64; 3],
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("need at least {needed} {what}, got {got}")]
    TooFew {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("cosine similarity undefined for zero-norm embedding (row {row})")]
    ZeroNorm { row: usize },

    #[error("non-finite loss at step {step}; last good checkpoint: {last_good:?}")]
    NonFinite {
        step: usize,
        last_good: Option<PathBuf>,
    },

    #[error("perturbation {max} exceeds the noise scale {bound}")]
    PerturbationBound { max: f64, bound: f64 },

    #[error("data hygiene violation: {0}")]
    Hygiene(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Checkpoint(#[from] adassm_nn::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn format_err(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
    let path = path.into();
    move |e| Error::Format {
        path,
        message: e.to_string(),
    }
}
