//! Latent projective dependency trees learned end to end.
//!
//! Arc scores from a dotted-attention scorer are perturbed with Gumbel noise
//! and decoded by an Eisner chart whose argmax is relaxed to a softmax, so the
//! sampled tree stays differentiable with respect to the scores. A
//! direction-aware GCN consumes the (soft) adjacency matrix.

pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod gcn;
pub mod listops;
pub mod nn;
pub mod parser;
pub mod sampler;
pub mod scorer;
pub mod tagger;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
