//! Event-camera deblurring toolkit: event streams, voxel and point-cloud
//! representations, point sampling and grouping, the point-branch kernels,
//! event-based double-integral deblurring, and image metrics.

pub mod cli;
pub mod edi;
pub mod error;
pub mod events;
pub mod image;
pub mod kernels;
pub mod metrics;
pub mod representations;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
pub use events::{parse_events, sort_events, write_events, Event, EventFormat, EventStream, Polarity};
pub use image::IntensityImage;
