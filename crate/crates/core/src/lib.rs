//! Fragmented-layer grouping for UI design prototypes.

pub mod checkpoint;
pub mod data;
pub mod embedding;
pub mod encoder;
mod error;
pub mod grouping;
pub mod metrics;
pub mod model;
pub mod params;
pub mod proto;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
