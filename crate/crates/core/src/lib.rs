//! Graph traffic forecasting with text-context auxiliary nodes.
//!
//! Hourly per-grid flows are windowed into `(X, A) -> Y` samples. Text about
//! the city (weather, calendar) or about one grid (venue events) is embedded,
//! reduced with PCA, projected into node features by a small learned stack,
//! and attached to the graph as extra nodes. City-scope nodes connect to every
//! grid; node-scope nodes connect to their target grid only. Any
//! graph-size-agnostic forecaster then runs unchanged on the enlarged graph.

pub mod augmentation;
pub mod context;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod ingestion;
pub mod metrics;
pub mod models;
pub mod reduction;

pub use error::{Error, Result};
