//! Colour representations of search queries.

pub mod clicklog;
pub mod colour;
pub mod distance;
pub mod encoder;
pub mod error;
pub mod histogram;
pub mod nn;
pub mod palette;
pub mod pipeline;
pub mod ranker;
pub mod svg;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
