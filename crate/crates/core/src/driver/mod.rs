//! Run configuration, checkpoints, and the four top-level commands:
//! training, sampling, gradient checks and graph profiling.

pub mod check_grad;
pub mod checkpoint;
pub mod config;
pub mod profile;
pub mod sample;
pub mod train;

pub use check_grad::{check_grad, CheckGradReport};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use profile::{fit_quadratic, profile, ProfileReport};
pub use sample::{sample, SampleReport};
pub use train::{train, MetricsRow, TrainReport, Trainer, METRICS_HEADER};
