//! Single-shot line-segment detection.
//!
//! [`gridcodec`] maps segments to per-cell targets on four overlapping grids
//! and back, [`model`] is the fully convolutional network, [`loss`] the
//! multi-task objective, [`synthdata`] the synthetic scene generator,
//! [`postprocess`] and [`metrics`] the pixel-level evaluation, and
//! [`training`] ties them together.

pub mod config;
pub mod error;
pub mod filter;
pub mod gridcodec;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
