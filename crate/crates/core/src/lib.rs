pub mod backbone;
pub mod cli;
pub mod corpus;
pub mod diffcore;
pub mod error;
pub mod excitation;
pub mod graph;
pub mod image;
pub mod metrics;
pub mod model;
pub mod predict;
pub mod semb;
pub mod sparse;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
