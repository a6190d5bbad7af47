//! Dataset-adaptive hate-speech detection: four specialised training
//! modules over fixed sentence embeddings, combined by a soft-voting
//! ensemble whose weights are tuned with a clipped policy-gradient search.

pub mod clustering;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod ingestion;
pub mod math;
pub mod pipeline;
pub mod synthetic;
pub mod tagging;
pub mod trainer;
pub mod voting;

pub use error::{Error, ErrorKind, Result};
