//! Optical character recognition for Tifinagh signage.
//!
//! The crate covers the whole pipeline: image decoding and preprocessing,
//! annotation handling and dataset curation, a small CNN engine written
//! against `matrixmultiply`, the training loop, and sign transcription.

pub mod corpus;
pub mod imaging;
pub mod nn;
pub mod numerics;
pub mod train;
pub mod transcribe;

pub use corpus::{CharBox, CharacterSample, ClassStats, CorpusError, Dataset, LabelEntry, LabelSet, SignAnnotation};
pub use imaging::{GrayImage, ImageError, ImageFormat, RasterImage, SAMPLE_SIZE};
pub use nn::{ModelConfig, ModelParams, NnError};
pub use numerics::{Prng, Tensor};
pub use train::{EpochRecord, EvalReport, Hyperparams, TrainError, TrainHistory};
pub use transcribe::{TranscribeError, TranscriptionResult};
