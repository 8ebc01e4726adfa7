use std::path::PathBuf;

/// Errors produced anywhere in the model-building and fitting pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("mesh has no vertex colors and no default albedo was supplied")]
    MissingColor,
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("spatial index is empty")]
    EmptyIndex,
    #[error("dense gram matrix for {n} points exceeds the cap of {cap}; use the Nyström path")]
    GramCapExceeded { n: usize, cap: usize },
    #[error("rank deficient: requested rank {requested} but only {available} eigenvalues are significant")]
    RankDeficient { requested: usize, available: usize },
    #[error("kernel is not positive semi-definite: eigenvalue {value} vs largest {max}")]
    NotPsd { value: f64, max: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("unsupported model file version {0}")]
    VersionMismatch(u32),
    #[error("model file checksum mismatch or truncated file")]
    Checksum,
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("missing landmarks: {0}")]
    MissingLandmarks(String),
    #[error("non-finite log posterior at initialization")]
    NonFiniteInit,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("all mixture components failed: {0}")]
    AllComponentsFailed(String),
    #[error("image error: {0}")]
    Image(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
