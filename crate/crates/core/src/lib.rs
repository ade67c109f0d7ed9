//! Voxel-grid data model, the analytic propagation oracle, evaluation
//! metrics and the hybrid-resolution dataset.

pub mod container;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod los;
pub mod metrics;
pub mod oracle;

pub use error::{CoreError, Result};
pub use grid::{
    downscale_occupancy, downscale_transmitter, normalize_rm, EnvironmentTensor, GridSpec,
    LosTensor, RadioMapTensor, TransmitterTensor,
};
pub use los::bresenham_los;
