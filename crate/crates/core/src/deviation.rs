//! Time-deviation scoring: every window is scored by its distance to the most
//! similar window that precedes it without overlap.
//!
//! A window with no predecessor is maximally novel and receives the measure's
//! ceiling (`+inf` for euclid/dtw, `+1` for xcorr). This is what produces the
//! high scores at the start of every run.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distances::{self, distance, DistanceSpec, Measure};
use crate::error::{Error, Result};
use crate::time::Timestamp;
use crate::windowing::{preceding_indices, Window, WindowRef};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentinelPolicy {
    /// No-predecessor windows score the measure's ceiling.
    #[default]
    MeasureMaximum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationEntry {
    /// Position of the entry on the time axis (the window origin, or the
    /// union grid instant after merging).
    pub timestamp: Timestamp,
    pub window: WindowRef,
    pub score: f64,
    pub best_match: Option<WindowRef>,
}

impl DeviationEntry {
    pub fn is_sentinel(&self) -> bool {
        self.best_match.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSeries {
    pub measure: Measure,
    pub sentinel_policy: SentinelPolicy,
    pub entries: Vec<DeviationEntry>,
}

impl DeviationSeries {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn timestamps(&self) -> Vec<Timestamp> {
        self.entries.iter().map(|e| e.timestamp).collect()
    }

    /// Score in force at `t` (the latest entry at or before `t`).
    pub fn value_at(&self, t: Timestamp) -> Option<f64> {
        let idx = self.entries.partition_point(|e| e.timestamp <= t);
        idx.checked_sub(1).map(|i| self.entries[i].score)
    }
}

fn check_windows(windows: &[Window], dist: &DistanceSpec) -> Result<()> {
    dist.validate()?;
    if windows.is_empty() {
        return Err(Error::invalid("no windows to score"));
    }
    if windows.windows(2).any(|p| p[1].origin() < p[0].origin()) {
        return Err(Error::invalid("windows must be sorted by origin"));
    }
    Ok(())
}

fn entry(target: &Window, measure: Measure, best: Option<(f64, &Window)>) -> DeviationEntry {
    DeviationEntry {
        timestamp: target.start_ts(),
        window: target.key(),
        score: best.map_or(measure.ceiling(), |b| b.0),
        best_match: best.map(|b| b.1.key()),
    }
}

fn score_one(
    windows: &[Window],
    l: usize,
    dist: &DistanceSpec,
    history_depth: Option<usize>,
) -> Result<DeviationEntry> {
    let target = &windows[l];
    let mut best: Option<(f64, &Window)> = None;
    for r in preceding_indices(target, &windows[..l], history_depth) {
        let d = distance(target, &windows[r], dist)?;
        if best.is_none_or(|(b, _)| d < b) {
            best = Some((d, &windows[r]));
        }
    }
    Ok(entry(target, dist.measure, best))
}

/// Scores every window against its non-overlapping predecessors (the most
/// recent `history_depth` of them). Ties resolve to the earliest predecessor.
pub fn score_windows(windows: &[Window], dist: &DistanceSpec, history_depth: Option<usize>) -> Result<DeviationSeries> {
    check_windows(windows, dist)?;
    let entries = (0..windows.len())
        .into_par_iter()
        .map(|l| score_one(windows, l, dist, history_depth))
        .collect::<Result<Vec<_>>>()?;
    Ok(DeviationSeries {
        measure: dist.measure,
        sentinel_policy: SentinelPolicy::MeasureMaximum,
        entries,
    })
}

/// Scores `windows[series.len()..]`, leaving the already-scored prefix as is.
///
/// `windows` must extend the windows that produced `series`.
pub fn extend_scores(
    series: &mut DeviationSeries,
    windows: &[Window],
    dist: &DistanceSpec,
    history_depth: Option<usize>,
) -> Result<()> {
    check_windows(windows, dist)?;
    if series.measure != dist.measure {
        return Err(Error::invalid("series was scored with a different measure"));
    }
    let done = series.len();
    if done > windows.len() || series.entries.iter().zip(windows).any(|(e, w)| e.window != w.key()) {
        return Err(Error::invalid("windows do not extend the scored prefix"));
    }
    let fresh = (done..windows.len())
        .into_par_iter()
        .map(|l| score_one(windows, l, dist, history_depth))
        .collect::<Result<Vec<_>>>()?;
    series.entries.extend(fresh);
    Ok(())
}

/// Work done by the pruned scorer, in squared-difference terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PruneStats {
    pub evaluated_ops: u64,
    /// Terms an unpruned pass over the same pairs evaluates.
    pub full_ops: u64,
}

/// [`score_windows`] for the euclid measure with early abandoning: a candidate
/// is dropped as soon as its partial distance exceeds the best so far. The
/// result is identical to the unpruned scorer.
pub fn score_windows_pruned(
    windows: &[Window],
    dist: &DistanceSpec,
    history_depth: Option<usize>,
) -> Result<DeviationSeries> {
    score_windows_pruned_with_stats(windows, dist, history_depth).map(|(s, _)| s)
}

pub fn score_windows_pruned_with_stats(
    windows: &[Window],
    dist: &DistanceSpec,
    history_depth: Option<usize>,
) -> Result<(DeviationSeries, PruneStats)> {
    check_windows(windows, dist)?;
    if dist.measure != Measure::EuclideanSlide {
        return Err(Error::invalid("pruned scoring supports only the euclid measure"));
    }
    let results = (0..windows.len())
        .into_par_iter()
        .map(|l| {
            let target = &windows[l];
            let mut stats = PruneStats::default();
            let mut best: Option<(f64, &Window)> = None;
            for r in preceding_indices(target, &windows[..l], history_depth) {
                let cand = &windows[r];
                let pairs = distances::paired_traces(target, cand, dist)?;
                stats.full_ops += full_ops(&pairs, dist);
                let bound = best.map_or(f64::INFINITY, |b| b.0);
                let d = distances::euclid_bounded(&pairs, dist, bound, &mut stats.evaluated_ops);
                if let Some(d) = d {
                    if best.is_none_or(|(b, _)| d < b) {
                        best = Some((d, cand));
                    }
                }
            }
            Ok((entry(target, dist.measure, best), stats))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = PruneStats::default();
    let mut entries = Vec::with_capacity(results.len());
    for (e, s) in results {
        total.evaluated_ops += s.evaluated_ops;
        total.full_ops += s.full_ops;
        entries.push(e);
    }
    Ok((
        DeviationSeries {
            measure: dist.measure,
            sentinel_policy: SentinelPolicy::MeasureMaximum,
            entries,
        },
        total,
    ))
}

fn full_ops(pairs: &[(&[f64], &[f64])], dist: &DistanceSpec) -> u64 {
    let (la, lb) = (pairs[0].0.len(), pairs[0].1.len());
    let (short, long) = (la.min(lb), la.max(lb));
    let offsets = (long - short) / dist.offset_step + 1;
    (pairs.len() * offsets * short) as u64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergePolicy {
    #[default]
    Max,
    Mean,
}

/// Combines series from several window specs on the union of their
/// timestamps. Each series holds its score until its next entry; a series
/// contributes nothing before its first entry.
pub fn merge_spec_scores(series: &[DeviationSeries], policy: MergePolicy) -> Result<DeviationSeries> {
    let first = series.first().ok_or_else(|| Error::invalid("no series to merge"))?;
    if series.iter().any(|s| s.measure != first.measure) {
        return Err(Error::invalid("cannot merge series scored with different measures"));
    }
    let mut grid: Vec<Timestamp> = series.iter().flat_map(|s| s.timestamps()).collect();
    grid.sort_unstable();
    grid.dedup();

    let entries = grid
        .into_iter()
        .map(|t| {
            let live: Vec<&DeviationEntry> = series
                .iter()
                .filter_map(|s| {
                    let i = s.entries.partition_point(|e| e.timestamp <= t);
                    i.checked_sub(1).map(|i| &s.entries[i])
                })
                .collect();
            // representative: highest score, earliest series on ties
            let lead = live
                .iter()
                .copied()
                .reduce(|a, b| if b.score > a.score { b } else { a })
                .expect("grid instants come from some series");
            let score = match policy {
                MergePolicy::Max => lead.score,
                MergePolicy::Mean => live.iter().map(|e| e.score).sum::<f64>() / live.len() as f64,
            };
            DeviationEntry {
                timestamp: t,
                window: lead.window,
                score,
                best_match: lead.best_match,
            }
        })
        .collect();
    Ok(DeviationSeries {
        measure: first.measure,
        sentinel_policy: first.sentinel_policy,
        entries,
    })
}

/// Target and best-match traces over the compared features, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub target: WindowRef,
    pub matched: WindowRef,
    pub features: Vec<String>,
    pub target_traces: Vec<Vec<f64>>,
    pub matched_traces: Vec<Vec<f64>>,
}

pub fn explain(target: &Window, matched: &Window, dist: &DistanceSpec) -> Result<Explanation> {
    let features = distances::select_top_features(target, matched, dist)?;
    let pick = |w: &Window| {
        features
            .iter()
            .map(|f| w.trace_by_name(f).map(<[f64]>::to_vec).unwrap_or_default())
            .collect()
    };
    Ok(Explanation {
        target: target.key(),
        matched: matched.key(),
        target_traces: pick(target),
        matched_traces: pick(matched),
        features,
    })
}
