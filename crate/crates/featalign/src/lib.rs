//! Storage, streaming statistics and experiment grids for cross-model SAE
//! feature alignment, on top of `featalign-core`.

pub mod axt;
pub mod cache;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod heatmap;
pub mod keywords;
pub mod manifest;
pub mod sae_io;
pub mod streaming;
pub mod synth_io;

pub use axt::{read_tensor, write_tensor, AxtReader, AxtWriter, Dtype};
pub use cache::Cache;
pub use error::{Error, Result};
pub use heatmap::Heatmap;
pub use manifest::{DatasetManifest, Loaded, SaeManifest};
pub use streaming::RayonExecutor;
pub use experiment::{Experiment, ExperimentConfig, GridResult};
