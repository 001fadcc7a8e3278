pub mod cli;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod fusion;
pub mod model;
pub mod numerics;
pub mod session_graph;
pub mod sessions;
pub mod text;
pub mod training;

pub use error::{Error, Result};
