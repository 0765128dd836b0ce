//! Occlusion-robust face embeddings at desk scale.
//!
//! The crate covers the whole loop: parametric synthetic faces with
//! ground-truth occluders ([`datagen`]), a small convolutional backbone
//! ([`backbone`]) with a two-level attention pathway ([`attention`]),
//! identity/attribute/triplet objectives ([`losses`]), occlusion-balanced
//! pair sampling ([`sampler`]), training ([`trainer`]) and the biometric
//! metrics used to measure robustness ([`metrics`]).
//!
//! Batch work runs on rayon when the `parallel` feature is enabled (the
//! default). Every reduction happens in a fixed order, so results are
//! identical with and without it.

pub mod ablation;
pub mod attention;
pub mod backbone;
pub mod datagen;
pub mod embedding_io;
pub mod error;
pub mod gradcheck;
pub mod image_io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod par;
pub mod sampler;
pub mod scalar;
pub mod seed;
pub mod tensor;
pub mod trainer;

pub use error::{OreoError, Result};
