//! Verifiable core of a tool-augmented human-object interaction agent.
//!
//! Everything here is pure computation over `alloc` types: box geometry,
//! the two-turn output grammar, the set-matching reward, group-relative
//! advantages, mAP evaluation and the trajectory-filtering rules. IO,
//! model backends and the CLI live in the `hoi-agent` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod assignment;
pub mod datagen;
pub mod eval;
pub mod geometry;
pub mod grpo;
pub mod label;
pub mod protocol;
pub mod reward;
pub mod triplet;
pub mod vocab;

pub use geometry::{iou, BBox};
pub use label::{normalize_label, EntityLabel};
pub use triplet::{Category, HoiTriplet, ImageRecord};
pub use vocab::{load_vocabulary, SplitTag, Vocabulary, VocabularyDocument};
