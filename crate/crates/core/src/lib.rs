//! Multi-view clustering by mixture-of-experts fusion of KNN ego-graphs,
//! graph convolution and ego-graph-weighted contrastive learning.
//!
//! The pipeline per minibatch: per-view autoencoders produce embeddings,
//! each view contributes a KNN adjacency ("ego graphs"), a gating network
//! mixes those adjacencies per sample, a two-layer GCN propagates the
//! concatenated embeddings over the fused graph, and projection heads feed a
//! contrastive loss whose negatives are down-weighted by the fused graph.
//! k-means on the fused embeddings gives the final clustering.

pub mod autoencoder;
pub mod cluster;
pub mod dataio;
pub mod egcl;
pub mod egograph;
pub mod error;
pub mod gcnproj;
pub mod mlp;
pub mod moefusion;
pub mod numkit;
pub mod pipeline;

pub use error::{Error, Result};
pub use numkit::Matrix;
