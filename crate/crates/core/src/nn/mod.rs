//! Dense tensors, reverse-mode differentiation and the transformer blocks.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, ReduceMode, SeqLayout, Var};
pub use layers::{AttentionIndex, AttentionWeights, LayerIndex, LayerWeights, ParamSet, LN_EPS};
pub use ops::{
    layer_norm, linear, masked_max_pool, masked_softmax, multi_head_self_attention, smoothed_bce,
    transformer_layer,
};
pub use optim::{lr_at_step, AdamW, AdamWConfig, LrSchedule};
pub use tensor::{Real, Tensor};
