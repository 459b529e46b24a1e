//! Deterministic simulator for federated learning with embedding-conditioned
//! generated classifiers and zero-shot evaluation on unseen clients.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod hypernet;
pub mod io;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod runner;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use config::{FLConfig, Method};
pub use data::{Dataset, Partition};
pub use error::{Error, Result};
pub use federation::{run_training, GlobalState};
pub use metrics::MetricsReport;
pub use model::ModelSpec;
pub use tensor::Tensor;
