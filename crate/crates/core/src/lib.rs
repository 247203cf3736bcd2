//! DNS censorship measurement curation, featurization and anomaly detection.

mod par;

pub mod analysis;
pub mod curation;
pub mod evaluation;
pub mod features;
pub mod ingest;
pub mod matrix;
pub mod models;
pub mod pipeline;
pub mod synth;

#[cfg(test)]
mod testutil;

pub use par::set_workers;
