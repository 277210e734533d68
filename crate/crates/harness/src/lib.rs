//! Training, evaluation, ablations, and the experiment drivers behind the
//! `hspn` command-line tool.

pub mod ablation;
pub mod classify;
pub mod commands;
pub mod config;
pub mod eval;
pub mod heatmap;
pub mod train;

pub use config::TrainConfig;
pub use train::Pipeline;
