//! Config-driven convergence studies over `N` grids: execution, persistence,
//! slope fits against predicted rates, and plot data.

pub mod config;
pub mod output;
pub mod plot;
pub mod study;

pub use config::{Metric, MetricEntry, StudyConfig, ValidatedStudy};
pub use plot::emit_plot_data;
pub use study::{execute, fit_slopes, run_study, StudyResult};
