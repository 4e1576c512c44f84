//! Compression toolkit and int8 inference runtime for an on-device speech
//! interruption detector.
//!
//! The model is a WavLM-style stack: a strided CNN frontend over 5 s of
//! 16 kHz stereo audio (downmixed to mono), a feature projection, an optional
//! grouped positional convolution, post-layer-norm transformer blocks, a
//! learnable weighted sum over all block outputs, additive attention pooling,
//! and a 4-class classifier (backchannel / failed interruption / interruption
//! / laughter).
//!
//! Everything an embedded deployment needs around that model lives here:
//!
//! * [`compress`]: structural transforms (drop the positional conv, select a
//!   subset of layers, tie weights across layer groups), all pure
//!   `Model -> Model`.
//! * [`quant`]: symmetric per-output-channel int8 post-training quantization
//!   and the int8 matmul the runtime executes.
//! * [`analysis`]: parameter / MAC / serialized-size accounting and
//!   activation-memory tracing.
//! * [`metrics`]: one-vs-rest ROC and TPR-at-FPR-budget evaluation.
//! * [`deploy`]: overlap-gated triggering simulation, real-time-factor
//!   benchmarks, and fleet energy projections.
//! * [`io`]: the `WSI1` model container and a strict PCM16 WAV reader.
//!
//! All randomness flows from explicit u64 seeds through [`rng::SplitMix64`];
//! building the same config from the same seed yields bit-identical model
//! files on every platform.

pub mod analysis;
pub mod arena;
pub mod cli;
pub mod compress;
pub mod deploy;
pub mod error;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod quant;
pub mod rng;
pub mod tensor;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;
