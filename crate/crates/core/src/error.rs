use std::path::PathBuf;

use crate::class::VehicleClass;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("beat frequency {freq_hz:.1} Hz exceeds the Nyquist limit {nyquist_hz:.1} Hz")]
    Nyquist { freq_hz: f64, nyquist_hz: f64 },

    #[error("scenario has no scatterers")]
    EmptyScatterers,

    #[error("unknown vehicle class `{0}`")]
    UnknownClass(String),

    #[error("signal too short: {samples} samples, need at least {needed}")]
    SignalTooShort { samples: usize, needed: usize },

    #[error("window of {len} samples does not fit FFT size {fft_size}")]
    WindowTooLong { len: usize, fft_size: usize },

    #[error("spectrogram width {width} exceeds target width {target}")]
    PadOverflow { width: usize, target: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("class {class} has {available} samples, needs at least {needed}")]
    InsufficientClass {
        class: VehicleClass,
        available: usize,
        needed: usize,
    },

    #[error("class {0} is missing from the training set")]
    MissingClass(VehicleClass),

    #[error("layer `{layer}`: {reason}")]
    Layer { layer: String, reason: String },

    #[error("weights do not match the network: {}", .0.join("; "))]
    WeightMismatch(Vec<String>),

    #[error("cache is stale (network version {network}, cache version {cache})")]
    StaleCache { network: u64, cache: u64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot parse {}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}
