//! Tracking-model pretraining with a frozen teacher, occlusion-aware point
//! visibility fused into the tracking head, and an online tracker, all on
//! seeded synthetic video.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod geometry;
pub mod jepa;
pub mod metrics;
pub mod occusolver;
pub mod profile;
pub mod runtime;
pub mod synthdata;
pub mod trackhead;
pub mod train;

pub use error::{Error, Result};
pub use geometry::BBox;
pub use profile::Profile;
