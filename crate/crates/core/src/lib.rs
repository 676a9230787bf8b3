//! Scoring, perturbation, evaluation, merging and rendering for multi-layer
//! graphic layouts.
//!
//! The crate is organised by concern:
//!
//! - [`layout`]: document types and the strict JSON codec
//! - [`geometry`]: box arithmetic (IoU, DIoU, aspect-ratio and Huber penalties)
//! - [`reward`]: the geometric reward stack and the aesthetic-feedback reward
//! - [`policy`]: group-relative advantages, clipped surrogate, KL estimate, PSFT loss
//! - [`perturb`]: seeded Gaussian perturbation of ground-truth layouts
//! - [`metrics`]: mean IoU, inverse order pair ratio, aspect ratio distortion
//! - [`tensor`]: structure-tensor analysis of coordinate representations
//! - [`merge`]: OCR-guided merging of over-segmented layers
//! - [`render`]: back-to-front source-over compositing

pub mod geometry;
pub mod layout;
pub mod merge;
pub mod metrics;
pub mod perturb;
pub mod policy;
pub mod render;
pub mod reward;
pub mod tensor;

pub use geometry::BBox;
pub use layout::{LayerRecord, LayoutDocument};
