//! Doppler holography blood-flow pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod doppler;
pub mod error;
pub mod flow;
pub mod image;
pub mod io;
pub mod morphology;
pub mod optics;
pub mod params;
pub mod phantom;
pub mod pipeline;
pub mod segmentation;

pub use error::{Error, Result};
pub use image::{Image, Mask};
pub use params::OpticalParams;
