//! Per-feature z-scoring with statistics frozen on a training prefix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TimeSeriesFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_names: Vec<String>,
    pub means: Vec<f64>,
    /// Population standard deviations; a zero spread is stored as 1 so the
    /// feature is only centred.
    pub scales: Vec<f64>,
}

impl Standardizer {
    /// Fits on the first `prefix_rows` rows (all rows when larger).
    pub fn fit(frame: &TimeSeriesFrame, prefix_rows: usize) -> Result<Self> {
        let n = prefix_rows.min(frame.n_rows());
        if n == 0 {
            return Err(Error::invalid("standardizer needs at least one training row"));
        }
        let mut means = Vec::with_capacity(frame.n_features());
        let mut scales = Vec::with_capacity(frame.n_features());
        for col in frame.columns() {
            let train = &col[..n];
            let mean = train.iter().sum::<f64>() / n as f64;
            let var = train.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            means.push(mean);
            scales.push(if sd > 0.0 { sd } else { 1.0 });
        }
        Ok(Standardizer {
            feature_names: frame.feature_names().to_vec(),
            means,
            scales,
        })
    }

    pub fn apply(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        if frame.feature_names() != self.feature_names.as_slice() {
            return Err(Error::invalid("standardizer fitted on different features"));
        }
        let columns = frame
            .columns()
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(col, (m, s))| col.iter().map(|v| (v - m) / s).collect())
            .collect();
        Ok(frame.with_columns(columns))
    }
}
