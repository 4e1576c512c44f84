//! Library-wide error type.
//!
//! Every failure mode the contract distinguishes gets its own variant so
//! callers (and tests) can match on the kind instead of scraping strings.
//! The CLI renders each as a one-line `error: <kind>: <detail>` message.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor operands disagree with an operation's shape contract.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A configuration failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A layer selection is out of range, empty, or repeats an index.
    #[error("invalid layer selection: {0}")]
    InvalidSelection(String),

    /// Attempted to quantize a tensor that is already int8.
    #[error("tensor already quantized: {0}")]
    AlreadyQuantized(String),

    /// A clip does not match the model's expected sample count.
    #[error("bad clip: {0}")]
    BadClip(String),

    /// WAV data is structurally broken (not a parsable RIFF/WAVE stream).
    #[error("malformed wav: {0}")]
    MalformedWav(String),

    /// WAV parses but has the wrong number of channels.
    #[error("wav channel count: expected {expected}, got {got}")]
    WavChannels { expected: u16, got: u16 },

    /// WAV parses but has the wrong sample rate.
    #[error("wav sample rate: expected {expected} Hz, got {got} Hz")]
    WavSampleRate { expected: u32, got: u32 },

    /// WAV parses but is not 16-bit integer PCM.
    #[error("wav codec: expected 16-bit PCM, got format tag {format_tag} / {bits} bits")]
    WavCodec { format_tag: u16, bits: u16 },

    /// WAV is shorter than the clip window.
    #[error("wav too short: need {need} samples per channel, got {got}")]
    WavTooShort { need: usize, got: usize },

    /// Model file does not start with the expected magic.
    #[error("bad magic: expected \"WSI1\", got {got:?}")]
    BadMagic { got: [u8; 4] },

    /// Model file declares an unsupported format version.
    #[error("unsupported format version {got} (supported: {supported})")]
    VersionMismatch { got: u16, supported: u16 },

    /// Model file is structurally inconsistent (truncated payload, directory
    /// entry out of bounds, duplicate or missing tensor, shape disagreement).
    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    /// A text file (trace, scenario, scores, config) failed to parse.
    #[error("parse error in {file_kind} line {line}: {msg}")]
    Parse {
        file_kind: &'static str,
        line: usize,
        msg: String,
    },

    /// Activity trace intervals violate the per-channel contract.
    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    /// A metric is undefined for the given inputs (e.g. single-class ROC).
    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    /// A numeric argument is out of its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-parseable tag for code that matches on the error
    /// category rather than scraping the message text.
    #[must_use]
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::InvalidConfig(_) => "invalid-config",
            Error::InvalidSelection(_) => "invalid-selection",
            Error::AlreadyQuantized(_) => "already-quantized",
            Error::BadClip(_) => "bad-clip",
            Error::MalformedWav(_) => "malformed-wav",
            Error::WavChannels { .. } => "wav-channels",
            Error::WavSampleRate { .. } => "wav-sample-rate",
            Error::WavCodec { .. } => "wav-codec",
            Error::WavTooShort { .. } => "wav-too-short",
            Error::BadMagic { .. } => "bad-magic",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::CorruptModel(_) => "corrupt-model",
            Error::Parse { .. } => "parse",
            Error::InvalidTrace(_) => "invalid-trace",
            Error::MetricUndefined(_) => "metric-undefined",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Io(_) => "io",
        }
    }
}
