use thiserror::Error;

pub type Result<T> = std::result::Result<T, CodecError>;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("shape mismatch at layer {layer}: expected {expected:?}, got {got:?}")]
    Shape {
        layer: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid tensor shape {shape:?} for {len} elements")]
    TensorShape { shape: Vec<usize>, len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown tap `{0}`")]
    UnknownTap(String),

    #[error("activation trace was not produced by this model")]
    TraceMismatch,

    #[error("target: {0}")]
    Target(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<CodecError>,
    },

    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing artifact {0}")]
    MissingArtifact(String),

    #[error("artifact {0} is locked by another writer")]
    Locked(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CodecError {
    /// Stable, machine-readable category used for CLI exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            CodecError::Config(_) | CodecError::Json(_) => "config",
            CodecError::MissingArtifact(_) => "missing-artifact",
            CodecError::Checksum { .. } | CodecError::Version { .. } | CodecError::Format(_) => {
                "format"
            }
            CodecError::Locked(_) => "locked",
            CodecError::Io(_) => "io",
            CodecError::Sample { source, .. } => source.category(),
            _ => "module",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> CodecError {
    CodecError::InvalidArgument(msg.into())
}
