pub mod embed;
pub mod cli;
pub mod correlate;
pub mod error;
pub mod fields;
pub mod grid;
pub mod pipeline;
pub mod scengen;
pub mod stats;
pub mod transient;

pub use error::{Error, ErrorKind, Result};
