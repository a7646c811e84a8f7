//! File formats, datasets, the training loop, benchmarking and the command
//! line front end for the early-exit separator in `exitsep-core`.

pub mod audio;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;
pub mod separate;
pub mod train;

pub use error::{Error, Result};

