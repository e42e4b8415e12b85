//! File formats, run directories and the command line around
//! [`cnsdiff_core`].

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod json;
pub mod report;
pub mod run;
pub mod splitfile;
pub mod synth;

pub use error::{Error, Result};
