use thiserror::Error;

/// Every failure the codec toolkit can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{what} = {value} outside supported range [{min}, {max}]")]
    Range {
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },

    #[error("numeric failure at iteration {iteration}: {reason}")]
    NumericFailure { iteration: usize, reason: String },

    #[error("coding error: {0}")]
    Coding(String),

    #[error("corrupt stream at bit {offset}: {reason}")]
    CorruptStream { offset: u64, reason: String },

    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("no codebook registered for channel {channel}, level {level}, size {size}")]
    RegistryMiss {
        channel: u8,
        level: &'static str,
        size: usize,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("connection failed after {written} bytes: {source}")]
    Connection {
        written: usize,
        #[source]
        source: std::io::Error,
    },

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("rate-distortion curves do not overlap: {0}")]
    UndefinedOverlap(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "config",
            Error::InvalidField(_) => "field",
            Error::Domain(_) => "domain",
            Error::Shape(_) => "shape",
            Error::Range { .. } => "range",
            Error::NumericFailure { .. } => "numeric",
            Error::Coding(_) => "coding",
            Error::CorruptStream { .. } => "corrupt-stream",
            Error::Checksum { .. } => "checksum",
            Error::RegistryMiss { .. } => "registry-miss",
            Error::Protocol(_) => "protocol",
            Error::Connection { .. } => "connection",
            Error::Sequencing(_) => "sequencing",
            Error::UndefinedOverlap(_) => "overlap",
            Error::EmptyDataset => "empty-dataset",
            Error::Version { .. } => "version",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
