//! Experiment plumbing: configs, on-disk arrays, metrics, rendering, the
//! simulate/invert pipeline and the oracle self-test.

pub mod config;
pub mod container;
pub mod metrics;
pub mod pipeline;
pub mod render;
pub mod selftest;

pub use crate::parallel::schedule;
pub use config::{ConfigError, ExperimentConfig};
pub use container::ArrayContainer;
pub use pipeline::{HarnessError, InvertOptions};
