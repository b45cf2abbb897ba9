//! Hard-negative mining and multimodal entity-linking evaluation over
//! precomputed embeddings.
//!
//! The crate covers the compute stages of a conditional-contrastive linking
//! pipeline, each usable on its own:
//!
//! - [`kb`]: entities, mentions, and the attribute vocabulary.
//! - [`io`]: JSONL metadata ingestion, the `EMB1` embedding container, and
//!   dataset statistics.
//! - [`jaccard`] / [`minhash`]: exact and LSH-accelerated top-k mining of
//!   attribute-similar hard negatives.
//! - [`sampler`]: drawing conditional or random negatives per training pair.
//! - [`matcher`]: the mention-entity scoring contract (global cosine, with
//!   an optional fused text+image variant).
//! - [`loss`]: softmax contrastive loss with analytic gradients, through the
//!   cosine matcher down to embeddings.
//! - [`cvacpt`]: the controllable patch transform conditioned on synthetic
//!   views and mention text, with multiview max-pooling.
//! - [`eval`]: full-KB ranking metrics (H@1/3/5, MRR) and the pooled-view
//!   similarity analysis.
//! - [`toylab`]: a synthetic-data lab that reproduces the mined-vs-random
//!   negative ablation directionally at desk scale.

pub mod cvacpt;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod jaccard;
pub mod kb;
pub mod loss;
pub mod matcher;
pub mod minhash;
pub mod sampler;
pub mod toylab;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
