use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::MinMaxScaler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    PerFrame,
    PerSimulation,
    PerRun,
}

/// Error metrics of one prediction against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    /// Mean absolute error, K.
    pub mae: f64,
    /// Mean absolute percentage error, percent.
    pub mape: f64,
    /// Root mean squared error in normalized gap units.
    pub rmse: f64,
    pub scope: Scope,
    pub seed: Option<u64>,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Result<Stat> {
        if values.is_empty() {
            return Err(Error::Config("statistics of an empty set".into()));
        }
        // identical values would otherwise pick up rounding in the mean
        if values.iter().all(|&v| v == values[0]) {
            return Ok(Stat {
                mean: values[0],
                std: 0.0,
            });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Stat {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub mae: Stat,
    pub mape: Stat,
    pub rmse: Stat,
    pub n_seeds: usize,
}

fn check_lengths(gt: &[f64], pred: &[f64]) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::Data(format!(
            "ground truth has {} values, prediction {}",
            gt.len(),
            pred.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::Data("empty frame".into()));
    }
    Ok(())
}

fn check_frames(gt: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<()> {
    if gt.len() != pred.len() || gt.is_empty() {
        return Err(Error::Data(format!(
            "ground truth has {} frames, prediction {}",
            gt.len(),
            pred.len()
        )));
    }
    Ok(())
}

pub fn mae(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(gt, pred)?;
    Ok(gt.iter().zip(pred).map(|(g, p)| (g - p).abs()).sum::<f64>() / gt.len() as f64)
}

/// Percent; every ground-truth value must be nonzero.
pub fn mape(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(gt, pred)?;
    if let Some(i) = gt.iter().position(|&g| g == 0.0) {
        return Err(Error::NumericDomain(format!(
            "ground truth is zero at node {i}"
        )));
    }
    Ok(100.0
        * gt.iter()
            .zip(pred)
            .map(|(g, p)| ((g - p) / g).abs())
            .sum::<f64>()
        / gt.len() as f64)
}

/// Largest `|gt - pred| / |gt|` over nodes.
pub fn max_relative_error(gt: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(gt, pred)?;
    if gt.contains(&0.0) {
        return Err(Error::NumericDomain("ground truth contains zero".into()));
    }
    Ok(gt
        .iter()
        .zip(pred)
        .map(|(g, p)| ((g - p) / g).abs())
        .fold(0.0, f64::max))
}

/// Root mean squared error over all nodes and frames, with errors divided by
/// the range of channel 0 of `scaler`.
pub fn rmse_normalized(gt: &[Vec<f64>], pred: &[Vec<f64>], scaler: &MinMaxScaler) -> Result<f64> {
    check_frames(gt, pred)?;
    let range = scaler.range(0);
    if !(range > 0.0) {
        return Err(Error::NumericDomain(format!(
            "degenerate normalization range {range}"
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (g, p) in gt.iter().zip(pred) {
        check_lengths(g, p)?;
        sum += g
            .iter()
            .zip(p)
            .map(|(a, b)| ((a - b) / range).powi(2))
            .sum::<f64>();
        count += g.len();
    }
    Ok((sum / count as f64).sqrt())
}

/// Per-frame RMSE in kelvin.
pub fn error_accumulation_curve(gt: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_frames(gt, pred)?;
    gt.iter()
        .zip(pred)
        .map(|(g, p)| {
            check_lengths(g, p)?;
            Ok(
                (g.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / g.len() as f64)
                    .sqrt(),
            )
        })
        .collect()
}

/// MAE and MAPE per frame averaged over frames; RMSE over everything.
pub fn simulation_metrics(
    gt: &[Vec<f64>],
    pred: &[Vec<f64>],
    scaler: &MinMaxScaler,
    seed: Option<u64>,
) -> Result<MetricRecord> {
    check_frames(gt, pred)?;
    let n = gt.len() as f64;
    let mut mae_sum = 0.0;
    let mut mape_sum = 0.0;
    for (g, p) in gt.iter().zip(pred) {
        mae_sum += mae(g, p)?;
        mape_sum += mape(g, p)?;
    }
    Ok(MetricRecord {
        mae: mae_sum / n,
        mape: mape_sum / n,
        rmse: rmse_normalized(gt, pred, scaler)?,
        scope: Scope::PerSimulation,
        seed,
    })
}

pub fn aggregate_over_seeds(records: &[MetricRecord]) -> Result<AggregateRecord> {
    let pick = |f: fn(&MetricRecord) -> f64| Stat::of(&records.iter().map(f).collect::<Vec<_>>());
    Ok(AggregateRecord {
        mae: pick(|r| r.mae)?,
        mape: pick(|r| r.mape)?,
        rmse: pick(|r| r.rmse)?,
        n_seeds: records.len(),
    })
}
