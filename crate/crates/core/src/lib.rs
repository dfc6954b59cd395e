//! Semantic optical flow refinement.
//!
//! Given frames, per-pixel semantic labels and an initial dense flow, this
//! crate fits class-specific motion models and composites a refined flow:
//!
//! * **Planes** (road, sky, water) get a RANSAC homography per region.
//! * **Things** (cars, people, animals, ...) get a localized two-layer model
//!   inside a tracked bounding box, optimized by alternating flow and
//!   segmentation updates.
//! * **Stuff** keeps the initial flow.
//!
//! The [`pipeline`] module drives the whole process from a manifest file.

pub mod composite;
pub mod error;
pub mod eval;
pub mod io;
pub mod layered;
pub mod penalty;
pub mod pipeline;
pub mod planar;
pub mod regions;
pub mod synth;
pub mod taxonomy;
pub mod types;
pub mod warp;
pub mod weights;

pub use error::{Error, Result};
pub use penalty::RobustPenalty;
pub use taxonomy::{Category, ClassId, ClassTaxonomy, SegMap};
pub use types::{BBox, FlowField, ImageBuf, Mask};
pub use weights::{EnergyWeights, WeightOverrides};
