//! Event-camera denoising with a quantized multilayer perceptron filter (MLPF).
//!
//! The crate covers the whole desk-scale pipeline: event I/O, the
//! timestamp-polarity image feature extractor, bit-exact integer inference,
//! quantization-aware training, synthetic labeled datasets, a background
//! activity filter baseline, ROC/AUC evaluation and an arithmetic model of the
//! FPGA/ASIC pipeline cost.

pub mod baseline;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod events;
pub mod exec;
pub mod hwsim;
pub mod mlpf;
pub mod qarith;
pub mod synth;
pub mod tpi;
pub mod trainer;

pub use error::{Error, Result};
pub use events::{Event, Label, Polarity, SensorGeometry};
pub use exec::Exec;
pub use mlpf::{FloatWeights, Logit, MlpfWeights, ModelFormats, Threshold};
pub use tpi::{AgeWindow, InputVector, TpiMemory};
