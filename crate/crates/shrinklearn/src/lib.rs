//! File formats, benchmark harness and command-line front end for
//! [`shrinklearn_core`].

pub mod bench;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod manifest;
pub mod model;

pub use error::{AppError, Result};
