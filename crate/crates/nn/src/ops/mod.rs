//! Differentiable operations on [`Var`](crate::tape::Var).

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod pool;
mod shape;

pub use conv::{conv3d_forward, Conv3dGeometry};
pub use elementwise::broadcast_compatible;
pub use shape::{voxel_shuffle_array, voxel_unshuffle_array};
