//! Experiment orchestration: phantom data, dataset layouts, inference
//! pipelines, experiment runs, cross-validation, and reports.

pub mod dataset;
pub mod experiment;
pub mod phantom;
pub mod pipeline;
pub mod report;

pub use dataset::{load_prepared, load_raw, Dataset, Manifest, Variant};
pub use experiment::{
    benchmark, benchmark_hu, run_crossval, run_crossval_with, run_experiment, CrossvalResult, ExperimentConfig,
    ExperimentRun, ImageMetrics,
};
pub use phantom::{generate_phantom, write_phantom, PhantomConfig, PhantomSlice};
pub use pipeline::{Pipeline, Prediction};
pub use report::{write_report, MetricsRow, Report, ReportFormat, TimingStats};
