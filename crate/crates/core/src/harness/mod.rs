//! Metrics, seed aggregation, calibration, experiment orchestration and
//! field exports.
//!
//! MAE and MAPE of a simulation are per-frame means over nodes averaged over
//! frames. RMSE is taken over all nodes and frames with errors divided by the
//! gap range of the training frames.

mod calibrate;
mod experiment;
mod export;
mod metrics;

pub use calibrate::{
    calibration_check, final_max_relative_gap, CalibrationReport, DesignGap, CALIBRATION_RANGE,
};
pub use experiment::{
    evaluate_design, gap_scaler, predict_design, run_experiment, DataSpec, DataUse, DatasetSummary,
    DesignAggregate, DesignEvaluation, ExperimentReport, ExperimentSpec, SeedReport, Status,
    REPORT_FILE, REPORT_MANIFEST_FILE,
};
pub use export::{export_csv, export_field_vtk, log10_error_field};
pub use metrics::{
    aggregate_over_seeds, error_accumulation_curve, mae, mape, max_relative_error, rmse_normalized,
    simulation_metrics, AggregateRecord, MetricRecord, Scope, Stat,
};
