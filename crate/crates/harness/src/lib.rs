//! Training, decoding, checkpoint and verification harness for `lpcsm-core`.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod ont_suite;
pub mod probe;
pub mod tasks;
pub mod tokenizer;
pub mod train;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
