//! Color mappings that preserve the structure of a pixel-graph Laplacian.

pub mod apps;
pub mod cli;
pub mod cluster;
pub mod colormap;
pub mod cost;
pub mod error;
pub mod gamut;
pub mod graph;
pub mod imageio;
pub mod metrics;
pub mod optimize;
pub mod sparse;

pub use error::{Error, Result};
