use std::io;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Malformed files, shape breaks, out-of-range values.
    Data,
    /// Inconsistent configuration or exhausted memory budget.
    Config,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported {format} version {version}")]
    UnsupportedVersion { format: &'static str, version: u16 },

    #[error("truncated {what}: needed {needed} bytes, {available} available")]
    Truncated {
        what: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("unknown layer kind tag {0}")]
    UnknownLayerKind(u8),

    #[error("unknown lookup table order tag {0}")]
    UnknownLutOrder(u8),

    #[error("trailing bytes after {0}")]
    TrailingBytes(&'static str),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{what} bitwidth {bits} outside {min}..={max}")]
    BitwidthOutOfRange {
        what: &'static str,
        bits: u32,
        min: u32,
        max: u32,
    },

    #[error("value {value} does not fit in {bits} bits")]
    ValueOutOfRange { value: i64, bits: u32 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("need at least {need} distinct non-zero vectors for clustering, found {have}")]
    TooFewVectors { need: usize, have: usize },

    #[error("pool index {index} out of range for pool of {pool_size}")]
    IndexOutOfRange { index: usize, pool_size: usize },

    #[error("empty weight pool")]
    EmptyPool,

    #[error("clustering produced duplicate pool vectors {0} and {1}")]
    DuplicatePoolVector(usize, usize),

    #[error("lookup table does not match pool: {0}")]
    LutMismatch(String),

    #[error("{bits}-bit lookup table cannot represent any non-zero entry")]
    LutSaturated { bits: u32 },

    #[error("arithmetic overflow: {0}")]
    Overflow(String),

    #[error("SRAM capacity exceeded: need {need} bytes, {available} available")]
    CapacityExceeded { need: usize, available: usize },

    #[error("layer {layer} has no activation calibration")]
    MissingCalibration { layer: usize },

    #[error("empty calibration set")]
    EmptyCalibration,

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_layer(self, layer: usize) -> Error {
        match self {
            Error::Layer { .. } => self,
            other => Error::Layer {
                layer,
                source: Box::new(other),
            },
        }
    }

    /// The underlying error with any layer context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Layer { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidConfig(_)
            | Error::CapacityExceeded { .. }
            | Error::BitwidthOutOfRange { .. }
            | Error::TooFewVectors { .. }
            | Error::LutSaturated { .. } => ErrorCategory::Config,
            Error::Layer { source, .. } => source.category(),
            _ => ErrorCategory::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
