use std::path::PathBuf;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis {axis}: {detail}")]
    Dimension {
        op: &'static str,
        axis: String,
        detail: String,
    },

    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape closure fails at block {block}: {detail}")]
    ShapeClosure { block: usize, detail: String },

    #[error("channel {channel} is missing from {context}")]
    MissingChannel { channel: String, context: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        found: [u8; 4],
        expected: [u8; 4],
    },

    #[error("{path}: unsupported format version {found} (supported: {supported})")]
    BadVersion { path: PathBuf, found: u32, supported: u32 },

    #[error("{path}: truncated: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("{path}: header dimensions overflow: {detail}")]
    DimOverflow { path: PathBuf, detail: String },

    #[error("{path}: malformed: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error("leakage: {0}")]
    Leakage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable short name of the variant, for machine-readable messages.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Shape { .. } => "shape",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::ShapeClosure { .. } => "shape-closure",
            Error::MissingChannel { .. } => "missing-channel",
            Error::Data(_) => "data",
            Error::BadMagic { .. } => "bad-magic",
            Error::BadVersion { .. } => "bad-version",
            Error::Truncated { .. } => "truncated",
            Error::DimOverflow { .. } => "dim-overflow",
            Error::Malformed { .. } => "malformed",
            Error::Leakage(_) => "leakage",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
