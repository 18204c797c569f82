//! Library half of the `dyncolor` binary: workload files and generation,
//! per-run metrics, the mode drivers, and report aggregation.

pub mod metrics;
pub mod report;
pub mod runner;
pub mod workload;

pub use metrics::{MetricsRow, MetricsParseError};
pub use runner::{run, RunConfig, RunError, RunSummary};
pub use workload::{generate, GenConfig, Mode, ParseError, Profile, Workload};
