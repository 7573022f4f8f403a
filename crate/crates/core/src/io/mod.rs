//! Trajectory ingestion and experiment configuration.

pub mod config;
pub mod trajectory;

pub use config::{apply_override, ExperimentConfig, OptimizerConfig, TrajectoryFile, TrajectorySource};
pub use trajectory::{load_trajectory, read_trajectory, resample, TrajectoryFormat, TrajectoryRecord};
