use serde::{Deserialize, Serialize};

use super::metrics::max_relative_error;
use crate::datasets::DatasetBundle;
use crate::error::{Error, Result};
use crate::fem::SimulationSeries;

/// Accepted final-frame gap, percent.
pub const CALIBRATION_RANGE: (f64, f64) = (10.0, 25.0);

/// Max over nodes of `|T_GT - T_FEM| / T_GT` at the final frame, percent.
pub fn final_max_relative_gap(
    linear: &SimulationSeries,
    nonlinear: &SimulationSeries,
) -> Result<f64> {
    if linear.n_frames() != nonlinear.n_frames() || linear.n_frames() == 0 {
        return Err(Error::Data(format!(
            "series lengths differ: {} vs {}",
            linear.n_frames(),
            nonlinear.n_frames()
        )));
    }
    Ok(100.0 * max_relative_error(nonlinear.final_frame(), linear.final_frame())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignGap {
    pub design: String,
    pub gap_percent: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub dataset: String,
    pub range_percent: (f64, f64),
    pub designs: Vec<DesignGap>,
    pub passed: bool,
}

/// Passes when every design's final-frame gap lies in [`CALIBRATION_RANGE`].
pub fn calibration_check(bundle: &DatasetBundle) -> Result<CalibrationReport> {
    let (lo, hi) = CALIBRATION_RANGE;
    let designs = bundle
        .designs
        .iter()
        .map(|d| {
            let gap = final_max_relative_gap(&d.linear, &d.nonlinear)?;
            Ok(DesignGap {
                design: d.id.clone(),
                gap_percent: gap,
                passed: (lo..=hi).contains(&gap),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let passed = !designs.is_empty() && designs.iter().all(|d| d.passed);
    Ok(CalibrationReport {
        dataset: bundle.config.name.clone(),
        range_percent: CALIBRATION_RANGE,
        designs,
        passed,
    })
}
