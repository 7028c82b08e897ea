//! Overlapping multivariate windows over a (smoothed) frame.
//!
//! A [`Window`] is a view: the parent frame is shared behind an `Arc` and the
//! window only records its row range and feature selection. Per-feature
//! traces are contiguous slices of the frame's column storage.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TimeSeriesFrame;
use crate::time::Timestamp;

/// Closed time range used for restriction masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeRange {
    pub fn new(start: Timestamp, end: Timestamp) -> Self {
        TimeRange { start, end }
    }

    pub fn contains_range(&self, start: Timestamp, end: Timestamp) -> bool {
        self.start <= start && end <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Identifier stamped on every window this spec generates.
    #[serde(default)]
    pub id: usize,
    pub length: usize,
    pub stride: usize,
    #[serde(default)]
    pub history_depth: Option<usize>,
    #[serde(default)]
    pub feature_subset: Option<Vec<String>>,
    #[serde(default)]
    pub restriction_mask: Option<Vec<TimeRange>>,
    /// Permit `stride > length` (gaps between consecutive windows).
    #[serde(default)]
    pub allow_disjoint: bool,
}

impl WindowSpec {
    pub fn new(length: usize, stride: usize) -> Self {
        WindowSpec {
            id: 0,
            length,
            stride,
            history_depth: None,
            feature_subset: None,
            restriction_mask: None,
            allow_disjoint: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::invalid("window length must be positive"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("window stride must be positive"));
        }
        if self.stride > self.length && !self.allow_disjoint {
            return Err(Error::invalid(format!(
                "stride {} exceeds length {} (set allow_disjoint to permit gaps)",
                self.stride, self.length
            )));
        }
        if self.history_depth == Some(0) {
            return Err(Error::invalid("history_depth must be at least 1"));
        }
        Ok(())
    }
}

/// Stable reference to a window: which spec produced it and where it starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WindowRef {
    pub spec_id: usize,
    pub origin: usize,
    pub origin_ts: Timestamp,
}

#[derive(Clone)]
pub struct Window {
    frame: Arc<TimeSeriesFrame>,
    features: Arc<[usize]>,
    origin: usize,
    length: usize,
    spec_id: usize,
}

impl Window {
    /// A free-standing window over the given per-feature traces, with
    /// synthetic one-second timestamps starting at zero.
    pub fn from_columns(names: &[&str], columns: Vec<Vec<f64>>) -> Result<Window> {
        let length = columns.first().map_or(0, Vec::len);
        if length == 0 {
            return Err(Error::invalid("window must have at least one sample"));
        }
        let ts = (0..length as i64).map(Timestamp::from_secs).collect();
        let names = names.iter().map(|s| s.to_string()).collect();
        let frame = Arc::new(TimeSeriesFrame::from_columns(ts, names, columns)?);
        let features: Arc<[usize]> = (0..frame.n_features()).collect();
        Ok(Window {
            frame,
            features,
            origin: 0,
            length,
            spec_id: 0,
        })
    }

    /// A copy of this window re-stamped as spec `spec_id`, with one-second
    /// timestamps starting at `origin_secs`. For hand-built windows.
    pub fn with_key(mut self, spec_id: usize, origin_secs: i64) -> Result<Window> {
        let len = self.length;
        let ts = (0..len as i64).map(|i| Timestamp::from_secs(origin_secs + i)).collect();
        let names = self.feature_names().map(str::to_string).collect();
        let cols = (0..self.n_features()).map(|d| self.trace(d).to_vec()).collect();
        self.frame = Arc::new(TimeSeriesFrame::from_columns(ts, names, cols)?);
        self.features = (0..self.frame.n_features()).collect();
        self.origin = 0;
        self.spec_id = spec_id;
        Ok(self)
    }

    /// Single-feature convenience constructor (feature named `x`).
    pub fn univariate(values: &[f64]) -> Result<Window> {
        Window::from_columns(&["x"], vec![values.to_vec()])
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    /// One past the last row index.
    pub fn end(&self) -> usize {
        self.origin + self.length
    }

    pub fn spec_id(&self) -> usize {
        self.spec_id
    }

    pub fn start_ts(&self) -> Timestamp {
        self.frame.timestamps()[self.origin]
    }

    pub fn end_ts(&self) -> Timestamp {
        self.frame.timestamps()[self.end() - 1]
    }

    pub fn key(&self) -> WindowRef {
        WindowRef {
            spec_id: self.spec_id,
            origin: self.origin,
            origin_ts: self.start_ts(),
        }
    }

    pub fn frame(&self) -> &Arc<TimeSeriesFrame> {
        &self.frame
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_names(&self) -> impl Iterator<Item = &str> + '_ {
        self.features
            .iter()
            .map(move |&i| self.frame.feature_names()[i].as_str())
    }

    pub fn feature_name(&self, d: usize) -> &str {
        &self.frame.feature_names()[self.features[d]]
    }

    /// Trace of the `d`-th selected feature.
    pub fn trace(&self, d: usize) -> &[f64] {
        &self.frame.column(self.features[d])[self.origin..self.end()]
    }

    pub fn trace_by_name(&self, name: &str) -> Option<&[f64]> {
        (0..self.n_features())
            .find(|&d| self.feature_name(d) == name)
            .map(|d| self.trace(d))
    }

    /// Row-major copy of the window values (`len × n_features`).
    pub fn values(&self) -> Vec<Vec<f64>> {
        (0..self.length)
            .map(|t| (0..self.n_features()).map(|d| self.trace(d)[t]).collect())
            .collect()
    }
}

impl fmt::Debug for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Window")
            .field("spec_id", &self.spec_id)
            .field("origin", &self.origin)
            .field("length", &self.length)
            .field("features", &self.feature_names().collect::<Vec<_>>())
            .finish()
    }
}

/// Lookup from [`WindowRef`] back to the window it names.
#[derive(Debug, Clone, Default)]
pub struct WindowCatalog {
    by_key: HashMap<(usize, Timestamp), Window>,
}

impl WindowCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_windows<'a>(windows: impl IntoIterator<Item = &'a Window>) -> Self {
        let mut catalog = Self::new();
        catalog.extend(windows);
        catalog
    }

    pub fn extend<'a>(&mut self, windows: impl IntoIterator<Item = &'a Window>) {
        for w in windows {
            self.by_key.insert((w.spec_id(), w.start_ts()), w.clone());
        }
    }

    pub fn get(&self, key: &WindowRef) -> Option<&Window> {
        self.by_key.get(&(key.spec_id, key.origin_ts))
    }

    pub fn resolve(&self, key: &WindowRef) -> Result<&Window> {
        self.get(key).ok_or_else(|| {
            Error::invalid(format!(
                "unknown window (spec {}, starting {})",
                key.spec_id, key.origin_ts
            ))
        })
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }
}

/// Windows at origins `0, stride, 2·stride, …` that fit in the frame, limited
/// to those lying entirely inside a mask interval when a mask is set.
pub fn slice_windows(frame: &Arc<TimeSeriesFrame>, spec: &WindowSpec) -> Result<Vec<Window>> {
    spec.validate()?;
    if frame.n_rows() < spec.length {
        return Err(Error::invalid(format!(
            "frame has {} rows, shorter than window length {}",
            frame.n_rows(),
            spec.length
        )));
    }
    let features: Arc<[usize]> = match &spec.feature_subset {
        None => (0..frame.n_features()).collect(),
        Some(subset) => {
            let idx: Vec<usize> = subset.iter().filter_map(|n| frame.feature_index(n)).collect();
            if idx.is_empty() {
                return Err(Error::invalid("feature_subset shares no features with the frame"));
            }
            idx.into()
        }
    };
    let ts = frame.timestamps();
    let windows = (0..=frame.n_rows() - spec.length)
        .step_by(spec.stride)
        .filter(|&origin| match &spec.restriction_mask {
            None => true,
            Some(mask) => {
                let (s, e) = (ts[origin], ts[origin + spec.length - 1]);
                mask.iter().any(|m| m.contains_range(s, e))
            }
        })
        .map(|origin| Window {
            frame: Arc::clone(frame),
            features: Arc::clone(&features),
            origin,
            length: spec.length,
            spec_id: spec.id,
        })
        .collect();
    Ok(windows)
}

/// Indices into `all` of windows that end before `target` begins, keeping the
/// most recent `history_depth` of them.
pub fn preceding_indices(target: &Window, all: &[Window], history_depth: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = all
        .iter()
        .enumerate()
        .filter(|(_, w)| w.end() <= target.origin())
        .map(|(i, _)| i)
        .collect();
    if let Some(depth) = history_depth {
        let skip = idx.len().saturating_sub(depth);
        idx.drain(..skip);
    }
    idx
}

/// Windows strictly preceding `target` (no shared rows), most recent
/// `history_depth` only.
pub fn preceding_windows<'a>(target: &Window, all: &'a [Window], history_depth: Option<usize>) -> Vec<&'a Window> {
    preceding_indices(target, all, history_depth)
        .into_iter()
        .map(|i| &all[i])
        .collect()
}
