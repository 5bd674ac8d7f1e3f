//! Deterministic align-and-attend video inpainting.
//!
//! Holes in a frame are filled from sparsely sampled reference frames: each
//! reference is aligned to the target with a global affine transform,
//! aligned content is pooled with temporal softmax weights, refined by
//! masked non-local attention over the unwarped references, and finally
//! blended with the flow-warped previous output for temporal stability.

pub mod aggregation;
pub mod alignment;
pub mod attention;
pub mod correspondence;
pub mod datagen;
pub mod error;
pub mod features;
pub mod field;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod temporal;

pub use error::{Error, Result};
pub use field::{FeatureMap, Image, Mask};
pub use geometry::{AffineParams, Grid};
