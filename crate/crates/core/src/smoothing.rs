//! Per-feature Hann-window smoothing.
//!
//! Each column is convolved with a normalized Hann kernel. Near the series
//! boundaries the kernel is truncated to the samples that exist and the
//! remaining weights are rescaled to sum to one, so a constant column is a
//! fixed point everywhere (zero padding would drag the edges toward zero).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TimeSeriesFrame;

pub const DEFAULT_KERNEL_LENGTH: usize = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingConfig {
    #[serde(default = "default_kernel_length")]
    pub kernel_length: usize,
    #[serde(default)]
    pub per_feature_overrides: BTreeMap<String, usize>,
}

fn default_kernel_length() -> usize {
    DEFAULT_KERNEL_LENGTH
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            kernel_length: DEFAULT_KERNEL_LENGTH,
            per_feature_overrides: BTreeMap::new(),
        }
    }
}

impl SmoothingConfig {
    pub fn with_length(kernel_length: usize) -> Self {
        SmoothingConfig {
            kernel_length,
            ..Default::default()
        }
    }

    pub fn length_for(&self, feature: &str) -> usize {
        self.per_feature_overrides
            .get(feature)
            .copied()
            .unwrap_or(self.kernel_length)
    }
}

/// Hann weights `0.5 − 0.5·cos(2πn/(L−1))`, normalized to sum 1.
pub fn hanning_kernel(length: usize) -> Result<Vec<f64>> {
    if length == 0 || length.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "kernel length must be odd and positive, got {length}"
        )));
    }
    if length == 1 {
        return Ok(vec![1.0]);
    }
    let denom = (length - 1) as f64;
    let raw: Vec<f64> = (0..length)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / denom).cos())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Convolves one column with `kernel`, renormalizing truncated edge kernels.
pub fn smooth_column(column: &[f64], kernel: &[f64]) -> Result<Vec<f64>> {
    if kernel.len() > column.len() {
        return Err(Error::invalid(format!(
            "kernel length {} exceeds series length {}",
            kernel.len(),
            column.len()
        )));
    }
    let n = column.len();
    let half = kernel.len() / 2;
    let out = (0..n)
        .map(|i| {
            // kernel index j maps to sample i + j − half
            let j_lo = half.saturating_sub(i);
            let j_hi = (n - 1 - i + half).min(kernel.len() - 1);
            if j_lo == 0 && j_hi == kernel.len() - 1 {
                kernel.iter().enumerate().map(|(j, w)| w * column[i + j - half]).sum()
            } else {
                let mut acc = 0.0;
                let mut mass = 0.0;
                for (j, w) in kernel.iter().enumerate().take(j_hi + 1).skip(j_lo) {
                    acc += w * column[i + j - half];
                    mass += w;
                }
                acc / mass
            }
        })
        .collect();
    Ok(out)
}

/// Smooths every feature column; timestamps and shape are unchanged.
pub fn smooth(frame: &TimeSeriesFrame, config: &SmoothingConfig) -> Result<TimeSeriesFrame> {
    if frame.is_empty() {
        return Err(Error::invalid("cannot smooth an empty frame"));
    }
    let columns = frame
        .feature_names()
        .par_iter()
        .zip(frame.columns().par_iter())
        .map(|(name, col)| {
            let kernel = hanning_kernel(config.length_for(name))?;
            smooth_column(col, &kernel)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(frame.with_columns(columns))
}
