//! Reproducible experiments: seeded days, calibration, training runs and reports.

pub mod config;
pub mod consistency;
pub mod convergence;
pub mod experiments;
pub mod lab;
pub mod metrics;
pub mod seeds;

pub use config::{ConsistencyConfig, ExperimentConfig};
pub use lab::{AdCalibration, Lab};
pub use metrics::{AlgoMetrics, MetricsReport, MetricsRow};
pub use seeds::{Seeds, Stream};
