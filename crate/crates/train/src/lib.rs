//! Training and evaluation for two-stage 3D radio map estimation.

pub mod complexity;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod phases;
pub mod pipeline;
pub mod plot;
pub mod render;
pub mod sweeps;
pub mod trilinear;

pub use config::{ExperimentConfig, PhaseSchedule};
pub use error::{Result, TrainError};
pub use evaluate::{evaluate_suite, Method, SuiteCheckpoints, SuiteReport};
pub use phases::{train_phase1, train_phase2, train_phase3, PhaseLog, PhaseOutcome};
pub use trilinear::trilinear_upsample;
