//! Sentence-aware Transformer summarization.
//!
//! Documents are encoded with a `[CLS]` token in front of every sentence and
//! alternating segment embeddings per sentence. On top of that encoder sit an
//! extractive sentence scorer and an abstractive encoder–decoder, together
//! with oracle labeling, trigram-blocked selection, beam search and ROUGE
//! evaluation.
//!
//! The numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the element type to `f64`, which is what training uses.

pub mod abstractive;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod extractive;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod scalar;
pub mod tokenizer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type ParamStore = numerics::ParamStore<f64>;
pub type GradBuffer = numerics::GradBuffer<f64>;
pub type AdamState = numerics::AdamState<f64>;
pub type Tape<'p> = numerics::Tape<'p, f64>;
pub type Gradients = numerics::Gradients<f64>;

pub type ExtractiveModel = extractive::ExtractiveModel<f64>;
pub type AbstractiveModel = abstractive::AbstractiveModel<f64>;
pub type PretrainModel = encoder::PretrainModel<f64>;
pub type DualOptimizer = abstractive::DualOptimizer<f64>;
