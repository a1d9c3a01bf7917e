//! Representative daily load profiles (RDLPs) from smart-meter data.
//!
//! The pipeline filters, pre-bins and normalises daily profiles, clusters
//! them with k-means, a self-organising map or both, scores each clustering
//! with quantitative validity indices and qualitative RDLP measures, and
//! ranks the runs.

pub mod clustering;
pub mod config;
pub mod data;
pub mod error;
pub mod preprocess;
pub mod qual;
pub mod quant;
pub mod runner;
pub mod scoring;

pub use error::{Error, Result};
