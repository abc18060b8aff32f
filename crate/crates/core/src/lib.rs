//! Weakly-supervised segmentation from text-matched dense features.
//!
//! The crate is `no_std` (with `alloc`) and carries every numerical piece of
//! the pipeline:
//!
//! - [`types`]: label maps, feature maps, text embeddings, probability maps.
//! - [`stats`]: per-dataset class statistics (classes per image, co-occurrence,
//!   positive/negative counts).
//! - [`maskgen`]: cosine-argmax pseudo-masks, local view sampling, and
//!   composition of local masks back into the global frame.
//! - [`synth`]: seeded synthetic scenes and a feature provider for them.
//! - [`carb`]: consistency-aware region balancing.
//! - [`head`], [`train`], [`eval`]: the linear softmax head, the two-stage
//!   trainer, and mIoU evaluation.
//!
//! File formats, CSV output and the command-line tool live in the `carbseg`
//! crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod carb;
pub mod error;
pub mod eval;
pub mod exec;
pub mod head;
pub mod maskgen;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    ClassCatalog, ClassSet, FeatureMap, LabelMap, ProbabilityMap, TextEmbeddingSet, IGNORE_INDEX,
};
