//! Convolutional network engine: VGG-style presets, layer kernels with exact
//! backward passes, He initialization, Adam, gradient verification and the
//! model file format.

mod element;
mod format;
mod gradcheck;
pub mod layers;
mod model;
mod optim;

pub use element::{gemm, Element};
pub use format::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use gradcheck::{grad_check, random_batch, relative_error, CheckPrecision, GradCheckReport, ParamError, COORDS_PER_TENSOR};
pub use layers::{
    conv3x3, conv3x3_backward, dense, dense_backward, maxpool2x2, maxpool2x2_backward, relu,
    relu_backward, softmax, softmax_cross_entropy, ParamGrads, PoolOutput, SoftmaxXent,
};
pub use model::{
    build_preset, he_init, model_backward, model_forward, predict, ForwardCache, Gradients,
    LayerParams, LayerSpec, ModelConfig, ModelParams, INPUT_SHAPE, PRESETS,
};
pub use optim::{
    adam_step, sgd_momentum_step, AdamState, Optimizer, OptimizerKind, SgdState, ADAM_BETA1,
    ADAM_BETA2, ADAM_EPSILON,
};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown preset {0:?} (expected one of vgg16, vgg19, vgg_small)")]
    UnknownPreset(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("malformed model file: {0}")]
    MalformedFile(String),
    #[error("model file version {found} (this build reads {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model file checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
