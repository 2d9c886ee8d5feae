//! Closed-loop simulation: scenarios, episodes, training datasets, sweeps
//! and metric plots.

mod dataset;
mod episode;
mod plot;
mod scenario;
mod sweep;
mod trace;

pub use dataset::{
    generate_dataset, load_dataset, motion_counts, read_dataset_csv, save_dataset,
    write_dataset_csv, DatasetConfig, DatasetSummary,
};
pub use episode::{
    count_collision_events, count_constraint_violation_events, run_episode, ControllerKind,
    EpisodeConfig, EpisodeMetrics, EpisodeResult, StepDiagnostics, TraceEntry, TARGET_TOLERANCE,
};
pub use plot::{line_chart, write_report, Point, Series};
pub use scenario::{randomize_scenario, Randomization, Scenario};
pub use sweep::{
    aggregate, read_rows_csv, run_sweep, save_csv, write_aggregates_csv, write_rows_csv, Aggregate,
    MetricSummary, SweepRow, SweepSpec, MAX_SAMPLES, METRICS,
};
pub use trace::{write_diagnostics_csv, write_trace_csv};
