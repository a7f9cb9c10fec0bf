//! Augmentation-free edge contrastive learning.
//!
//! A single-layer multi-head graph-attention encoder produces node
//! embeddings; edge embeddings are concatenations of endpoint embeddings,
//! and the encoder is trained by contrasting each edge against the edges
//! that share one of its endpoints (positives) and virtual edges to every
//! other node (negatives). Frozen embeddings are then evaluated with a
//! linear probe and a link-prediction decoder.

pub mod checkpoint;
pub mod contrastive;
pub mod diagnostics;
pub mod edges;
pub mod encoder;
pub mod eval;
pub mod graph;
pub mod splits;
pub mod tensor;
pub mod train;
