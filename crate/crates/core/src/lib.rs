//! Noise-classification-aided causal attention network for monaural speech
//! enhancement, together with the tooling to synthesize corpora, train the
//! model and its ablation variants, and evaluate the results.

pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{AttentionWeights, Gradients, Graph, Var};
pub use tensor::Tensor;
