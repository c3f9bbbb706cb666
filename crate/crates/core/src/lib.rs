//! Semi-supervised node classification with jointly learned graph embeddings.
//!
//! Each instance gets an embedding trained to predict its graph context
//! (random-walk neighbours and same-label instances). Class predictions
//! combine a feature path with a path on the embedding. Three variants are
//! provided: transductive (free embeddings per node), inductive (embeddings
//! computed from features) and graph-only (no features). Feat and label
//! propagation serve as baselines.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod neural;
pub mod planetoid;
pub mod sampler;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use graph::SparseGraph;
pub use planetoid::{ModelParams, ModelVariant};
pub use sampler::{ContextSampler, ContextTriple, SamplerConfig};
pub use training::{Method, TrainConfig};
