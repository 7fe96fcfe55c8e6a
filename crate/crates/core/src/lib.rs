pub mod cli;
pub mod data;
pub mod error;
pub mod fc;
pub mod io;
pub mod linalg;
pub mod nuisance;
pub mod pipeline;
pub mod projection;
pub mod render;
pub mod scrub;
pub mod synth;

pub use error::{Error, Result};
