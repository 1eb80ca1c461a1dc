use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported raster format: {0}")]
    UnsupportedFormat(String),
    #[error("image has zero size")]
    EmptyImage,
    #[error("image {height}x{width} is smaller than the 8x8 minimum")]
    ImageTooSmall { height: usize, width: usize },
    #[error("invalid synthetic scene: {0}")]
    InvalidScene(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("{points} points cannot support {components} mixture components")]
    TooFewPoints { points: usize, components: usize },
    #[error("singular component {component} has no assigned points")]
    EmptySingularComponent { component: usize },
    #[error("mixture components are not sorted by weight")]
    UnsortedMixture,
    #[error("covariance of component {component} is not positive definite")]
    NotPositiveDefinite { component: usize },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("bad container magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    VersionMismatch(u32),
    #[error("truncated container: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("malformed sidecar {path}: {message}")]
    MalformedSidecar { path: PathBuf, message: String },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
