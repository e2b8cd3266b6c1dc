//! Command-line driver and file formats around [`ternlstm_core`]: dataset
//! ingestion, FFT-based spectral tools, model directories and the
//! `ternlstm` binary.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod ingest;
pub mod spectral;

pub use error::{Error, Result};
pub use ternlstm_core as core;
