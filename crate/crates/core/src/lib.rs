//! Measuring how strongly knowledge-graph embeddings encode sensitive
//! attributes: embedding training, a downstream target-relation classifier,
//! parity-based bias measures over its predictions, and a translation-based
//! measure computed directly in embedding space.

pub mod clf;
pub mod kg;
pub mod kge;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod synth;
