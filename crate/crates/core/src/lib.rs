//! Federated-learning simulation with similarity-weighted aggregation
//! (SimAgg), server-side differential privacy (DP-SimAgg) and volumetric
//! segmentation metrics.

pub mod checkpoint;
pub mod cli;
pub mod dp;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod params;
pub mod simagg;

pub use error::{Error, Result};
pub use params::{CollaboratorUpdate, ModelParams};
