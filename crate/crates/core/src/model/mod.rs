//! The grounding model: sequence assembly, encoder, pooling, scoring and losses.

mod config;
mod forward;
mod loss;
mod params;

pub use config::{make_variant, ForwardStrategy, ModelConfig, VariantKind};
pub use forward::{
    build_forward, build_loss, contrastive_graph, embed_and_assemble, encode, forward, forward_packed, pool_and_score,
    ForwardGraph, ForwardOutput, PackedInput, PassInfo, SequenceAssembly,
};
pub use loss::{contrastive_loss, grounding_loss, predict};
pub use params::{init_model, MatchLayout, ModelLayout, ModelParams, TransformerLayout, INIT_STD};
