//! Pattern-similarity anomaly detection for multivariate time series.
//!
//! The pipeline smooths each feature, slices the series into overlapping
//! windows and scores every window by its distance to the closest window that
//! came before it. Scores above a threshold become alerts; alerts are
//! labelled by majority vote over similar, already-labelled alerts and
//! filtered; results are evaluated against annotated events, and the
//! framework's knobs can be tuned with Gaussian-process Bayesian optimization.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alerting;
pub mod config;
pub mod deviation;
pub mod distances;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod modes;
pub mod normalize;
pub mod pipeline;
pub mod report;
pub mod smoothing;
pub mod synthetic;
pub mod time;
pub mod tuning;
pub mod windowing;

pub use error::{Error, Result};
pub use ingest::{EventInterval, TimeSeriesFrame};
pub use time::Timestamp;
pub use windowing::{Window, WindowRef, WindowSpec};
