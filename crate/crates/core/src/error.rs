use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: non-finite input value")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tape: {0}")]
    Tape(String),

    #[error("{kind}: bad magic bytes {found:?}")]
    BadMagic { kind: &'static str, found: [u8; 4] },

    #[error("{kind}: unsupported format version {found} (expected {expected})")]
    VersionMismatch {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("{kind}: checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum {
        kind: &'static str,
        stored: u32,
        computed: u32,
    },

    #[error("{kind}: truncated file ({found} bytes, expected {expected})")]
    Truncated {
        kind: &'static str,
        expected: u64,
        found: u64,
    },

    #[error("{kind}: {found} trailing bytes after payload")]
    TrailingBytes { kind: &'static str, found: u64 },

    #[error("{kind}: malformed header: {reason}")]
    Malformed { kind: &'static str, reason: String },

    #[error("schedule mismatch: {0}")]
    ScheduleMismatch(String),

    #[error("numerical abort at step {step}: {what}")]
    NumericalAbort { step: u64, what: String },

    #[error("config: {0}")]
    Config(String),

    #[error("artifact checksum mismatch for {path}")]
    ArtifactChecksum { path: PathBuf },

    #[error("acceptance check failed: {0}")]
    Acceptance(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used in CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Tape(_) => "tape",
            Error::BadMagic { .. } => "bad_magic",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Checksum { .. } => "checksum",
            Error::Truncated { .. } => "truncated",
            Error::TrailingBytes { .. } => "trailing_bytes",
            Error::Malformed { .. } => "malformed",
            Error::ScheduleMismatch(_) => "schedule_mismatch",
            Error::NumericalAbort { .. } => "numerical_abort",
            Error::Config(_) => "config",
            Error::ArtifactChecksum { .. } => "artifact_checksum",
            Error::Acceptance(_) => "acceptance",
            Error::Io { .. } => "io",
        }
    }
}
