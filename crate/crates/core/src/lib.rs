//! Feature-free video stabilization by direct rotation estimation.
//!
//! Frames are aligned to a periodically reset template with an
//! inverse-compositional Lucas-Kanade solver over SO(3) ([`lk`],
//! [`orientation`]). A low-pass filter on the rotation group produces a stable
//! viewpoint ([`view_filter`]), and buffered frames are re-rendered from it and
//! averaged ([`stabilizer`]). Pure rotation keeps the re-rendering free of
//! depth-dependent distortion.

pub mod error;
pub mod geometry;
pub mod imgproc;
pub mod io;
pub mod lk;
pub mod metrics;
pub mod orientation;
pub mod pipeline;
pub mod stabilizer;
pub mod synthetic;
pub mod view_filter;

pub use error::{Error, Result};
pub use geometry::{Intrinsics, NormalizedCoord, PixelCoord, Rotation, So3Vector};
pub use imgproc::{Frame, ValidityMask};
pub use lk::{Template, TrackResult, TrackerConfig};
pub use orientation::{OrientationConfig, OrientationTracker};
pub use pipeline::{Pipeline, PipelineConfig, PipelineOutput};
pub use stabilizer::{StabilizationMode, StabilizerConfig};
pub use view_filter::{ViewFilterParams, ViewState};
