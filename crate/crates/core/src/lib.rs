//! Multi-resolution patch-graph classification of whole-slide images.

pub mod cli;
pub mod error;
pub mod evalstat;
pub mod gnn;
pub mod graphbuild;
pub mod numkit;
pub mod pipeline;
pub mod slideio;

pub use error::{Error, Result};
