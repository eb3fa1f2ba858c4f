//! Tape-based autodiff, a snippet encoder, a cascaded boundary detector, and
//! the trainer that couples them through sequentialized gradient sampling.
//!
//! Everything runs in `f64` on the CPU and is deterministic for a fixed
//! config and seed; randomness comes from named [`rng::stream`]s.

pub mod autodiff;
pub mod config;
pub mod detector;
pub mod encoder;
pub mod error;
pub mod params;
pub mod rng;
pub mod samplers;
pub mod sgs;
pub mod synthdata;
pub mod tadeval;
pub mod tensor;

pub use autodiff::{Graph, Mode, Var};
pub use config::RunConfig;
pub use detector::{Detector, DetectorConfig};
pub use encoder::{Encoder, EncoderConfig};
pub use error::{Error, Result};
pub use params::ParamSet;
pub use samplers::Strategy;
pub use sgs::{Checkpoint, MetricsRow, TrainOutcome};
pub use synthdata::{Dataset, DatasetConfig, VideoSample};
pub use tadeval::{Detection, EvalResult, Segment};
pub use tensor::Tensor;
