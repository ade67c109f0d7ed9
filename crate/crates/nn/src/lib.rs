//! Minimal reverse-mode autodiff for volumetric convolutional networks.
//!
//! Single-threaded and deterministic. Arrays are dense row-major; all
//! heavy lifting goes through `matrixmultiply`.

pub mod array;
pub mod checkpoint;
pub mod float;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tape;

pub use array::Array;
pub use float::Float;
pub use layers::{Conv3d, Ctx, GroupNorm};
pub use optim::{AdamW, AdamWConfig, LrSchedule};
pub use params::{ParamBuilder, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
