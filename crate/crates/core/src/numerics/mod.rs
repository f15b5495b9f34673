//! Dense tensors, reverse-mode differentiation, Transformer blocks and Adam.

pub mod adam;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use nn::{
    sinusoid_table, AttentionMask, AttentionWeights, DecoderLayer, Dropout, DropoutPlacement, FeedForward,
    LayerNormWeights, Linear, TransformerLayer,
};
pub use params::{GradBuffer, Param, ParamId, ParamStore};
pub use tape::{gelu, sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
