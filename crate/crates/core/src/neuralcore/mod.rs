//! Reverse-mode automatic differentiation over dense `f64` tensors, with the layers and
//! optimizers the lifting, camera-correction and critic networks are built from.

pub mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, Var};
pub use layers::{
    pool_concat, EncoderConfig, GruLayerParams, Linear, ResidualBlockParams, SequenceEncoder,
};
pub use optim::{sgd_step, sgd_step_clipped, AdamState};
pub use params::{
    glorot_uniform, orthogonal, CheckpointEntry, ParamCheckpoint, ParamId, ParamStore,
    CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
pub use tensor::Tensor;
