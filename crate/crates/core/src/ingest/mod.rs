//! Tracker ingestion and evaluation sampling.

pub mod sample;
pub mod tracker;

pub use sample::{
    allocate_strata, apportion, filter_target_resolutions, margin_of_error, stratified_sample,
    Apportionment, StratumSpec,
};
pub use tracker::{fetch_reports, FetchQuery, FixtureTracker, HttpTracker, SearchTransport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("{key}: {message}")]
    Schema { key: String, message: String },
    #[error("tracker rejected credentials: {0}")]
    Auth(String),
    #[error("io: {0}")]
    Io(String),
    #[error("population is empty")]
    EmptyPopulation,
    #[error("invalid request: {0}")]
    InvalidSample(String),
}
