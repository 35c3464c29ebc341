use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel minmax normalization onto [0, 1] over the fitted range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn channels(&self) -> usize {
        self.min.len()
    }

    /// Fits on row-major samples with `channels` values per row.
    pub fn fit(data: &[f64], channels: usize) -> Result<Self> {
        if channels == 0 || data.is_empty() || data.len() % channels != 0 {
            return Err(Error::Shape(format!(
                "cannot fit {channels} channels on {} values",
                data.len()
            )));
        }
        let mut min = vec![f64::INFINITY; channels];
        let mut max = vec![f64::NEG_INFINITY; channels];
        for row in data.chunks(channels) {
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite("scaler input".into()));
                }
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Ok(MinMaxScaler { min, max })
    }

    /// Extends the fitted range with more samples.
    pub fn update(&mut self, data: &[f64]) -> Result<()> {
        let other = MinMaxScaler::fit(data, self.channels())?;
        for c in 0..self.channels() {
            self.min[c] = self.min[c].min(other.min[c]);
            self.max[c] = self.max[c].max(other.max[c]);
        }
        Ok(())
    }

    pub fn apply_value(&self, channel: usize, x: f64) -> f64 {
        let range = self.max[channel] - self.min[channel];
        if range > 0.0 {
            (x - self.min[channel]) / range
        } else {
            0.0
        }
    }

    pub fn invert_value(&self, channel: usize, y: f64) -> f64 {
        self.min[channel] + y * (self.max[channel] - self.min[channel])
    }

    /// Scale factor of the channel; a normalized difference times this is a
    /// raw difference.
    pub fn range(&self, channel: usize) -> f64 {
        self.max[channel] - self.min[channel]
    }

    pub fn apply(&self, data: &[f64]) -> Vec<f64> {
        let c = self.channels();
        data.iter()
            .enumerate()
            .map(|(i, &x)| self.apply_value(i % c, x))
            .collect()
    }

    pub fn invert(&self, data: &[f64]) -> Vec<f64> {
        let c = self.channels();
        data.iter()
            .enumerate()
            .map(|(i, &y)| self.invert_value(i % c, y))
            .collect()
    }
}

pub fn minmax_fit(data: &[f64], channels: usize) -> Result<MinMaxScaler> {
    MinMaxScaler::fit(data, channels)
}

pub fn minmax_apply(scaler: &MinMaxScaler, x: &[f64]) -> Vec<f64> {
    scaler.apply(x)
}

pub fn minmax_invert(scaler: &MinMaxScaler, y: &[f64]) -> Vec<f64> {
    scaler.invert(y)
}
