//! Window-to-window distance measures.
//!
//! Every measure works one feature at a time and then aggregates across
//! features (mean or max). Three measures are provided:
//!
//! * `euclid`: RMS-scaled Euclidean distance; a shorter window is slid over a
//!   longer one at `offset_step` and the per-offset distances are reduced by
//!   min or mean.
//! * `dtw`: classic dynamic time warping (absolute-difference cost, full
//!   table), divided by the length of the optimal warping path.
//! * `xcorr`: negated maximum of the full cross-correlation divided by the
//!   product of the two trace norms. Lies in `[-1, 1]`; `-1` is a perfect
//!   (shifted, positively scaled) match.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Measure {
    #[serde(rename = "euclid", alias = "euclidean_slide")]
    EuclideanSlide,
    #[serde(rename = "dtw")]
    Dtw,
    #[serde(rename = "xcorr", alias = "neg_max_xcorr")]
    NegMaxXcorr,
}

impl Measure {
    /// Smallest attainable distance.
    pub fn floor(self) -> f64 {
        match self {
            Measure::EuclideanSlide | Measure::Dtw => 0.0,
            Measure::NegMaxXcorr => -1.0,
        }
    }

    /// Largest attainable distance; the score of a window with no history.
    pub fn ceiling(self) -> f64 {
        match self {
            Measure::EuclideanSlide | Measure::Dtw => f64::INFINITY,
            Measure::NegMaxXcorr => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Measure::EuclideanSlide => "euclid",
            Measure::Dtw => "dtw",
            Measure::NegMaxXcorr => "xcorr",
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclid" | "euclidean" | "euclidean_slide" => Ok(Measure::EuclideanSlide),
            "dtw" => Ok(Measure::Dtw),
            "xcorr" | "neg_max_xcorr" => Ok(Measure::NegMaxXcorr),
            other => Err(Error::invalid(format!("unknown distance measure {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlideAggregation {
    #[default]
    Min,
    Mean,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionAggregation {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRelevance {
    #[default]
    TargetWindowVariance,
    ExternalImportanceVector,
}

/// Traces at or below this length use direct cross-correlation; longer ones
/// go through the FFT.
pub const XCORR_DIRECT_MAX_LEN: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceSpec {
    #[serde(default = "default_measure")]
    pub measure: Measure,
    #[serde(default = "one")]
    pub offset_step: usize,
    #[serde(default)]
    pub slide_aggregation: SlideAggregation,
    #[serde(default)]
    pub dimension_aggregation: DimensionAggregation,
    #[serde(default)]
    pub top_k_features: Option<usize>,
    #[serde(default)]
    pub feature_relevance: FeatureRelevance,
    /// Per-feature importance, required for `external_importance_vector`.
    #[serde(default)]
    pub importance: Option<BTreeMap<String, f64>>,
    #[serde(default = "default_direct_max")]
    pub xcorr_direct_max_len: usize,
}

fn default_measure() -> Measure {
    Measure::NegMaxXcorr
}

fn one() -> usize {
    1
}

fn default_direct_max() -> usize {
    XCORR_DIRECT_MAX_LEN
}

impl Default for DistanceSpec {
    fn default() -> Self {
        DistanceSpec::new(Measure::NegMaxXcorr)
    }
}

impl DistanceSpec {
    pub fn new(measure: Measure) -> Self {
        DistanceSpec {
            measure,
            offset_step: 1,
            slide_aggregation: SlideAggregation::Min,
            dimension_aggregation: DimensionAggregation::Mean,
            top_k_features: None,
            feature_relevance: FeatureRelevance::TargetWindowVariance,
            importance: None,
            xcorr_direct_max_len: XCORR_DIRECT_MAX_LEN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.offset_step == 0 {
            return Err(Error::invalid("offset_step must be at least 1"));
        }
        if self.top_k_features == Some(0) {
            return Err(Error::invalid("top_k_features must be positive"));
        }
        if self.feature_relevance == FeatureRelevance::ExternalImportanceVector
            && self.top_k_features.is_some()
            && self.importance.is_none()
        {
            return Err(Error::invalid(
                "external_importance_vector relevance needs an importance vector",
            ));
        }
        Ok(())
    }
}

/// Shared features ranked by relevance and cut to `top_k_features`.
///
/// Relevance is the sample variance of the feature inside `target`, or the
/// external importance score. Ties go to the lexically smaller name.
pub fn select_top_features(target: &Window, candidate: &Window, spec: &DistanceSpec) -> Result<Vec<String>> {
    let shared: Vec<(usize, &str)> = (0..target.n_features())
        .map(|d| (d, target.feature_name(d)))
        .filter(|(_, n)| candidate.feature_names().any(|c| c == *n))
        .collect();
    let Some(k) = spec.top_k_features else {
        return Ok(shared.iter().map(|(_, n)| n.to_string()).collect());
    };
    let relevance = |d: usize, name: &str| -> Result<f64> {
        match spec.feature_relevance {
            FeatureRelevance::TargetWindowVariance => Ok(sample_variance(target.trace(d))),
            FeatureRelevance::ExternalImportanceVector => spec
                .importance
                .as_ref()
                .map(|m| m.get(name).copied().unwrap_or(0.0))
                .ok_or_else(|| Error::invalid("external_importance_vector relevance needs an importance vector")),
        }
    };
    let mut ranked = shared
        .iter()
        .map(|&(d, n)| Ok((relevance(d, n)?, n)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(ranked.into_iter().take(k).map(|(_, n)| n.to_string()).collect())
}

fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub(crate) type TracePair<'a> = (&'a [f64], &'a [f64]);

/// Per-feature trace pairs the distance is computed over, in aggregation order.
pub(crate) fn paired_traces<'a>(
    target: &'a Window,
    candidate: &'a Window,
    spec: &DistanceSpec,
) -> Result<Vec<TracePair<'a>>> {
    let same_layout = Arc::ptr_eq(target.frame(), candidate.frame())
        && target.n_features() == candidate.n_features()
        && (0..target.n_features()).all(|d| target.feature_name(d) == candidate.feature_name(d));
    if same_layout && spec.top_k_features.is_none() {
        return Ok((0..target.n_features())
            .map(|d| (target.trace(d), candidate.trace(d)))
            .collect());
    }
    let names = select_top_features(target, candidate, spec)?;
    if names.is_empty() {
        return Err(Error::invalid("windows share no features"));
    }
    Ok(names
        .iter()
        .filter_map(|n| Some((target.trace_by_name(n)?, candidate.trace_by_name(n)?)))
        .collect())
}

fn aggregate(values: impl IntoIterator<Item = f64>, how: DimensionAggregation) -> f64 {
    match how {
        DimensionAggregation::Mean => {
            let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            sum / n as f64
        }
        DimensionAggregation::Max => values.into_iter().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Distance between `target` and `candidate` under `spec.measure`.
pub fn distance(target: &Window, candidate: &Window, spec: &DistanceSpec) -> Result<f64> {
    match spec.measure {
        Measure::EuclideanSlide => euclidean_slide(target, candidate, spec),
        Measure::Dtw => dtw_distance(target, candidate, spec),
        Measure::NegMaxXcorr => xcorr_distance(target, candidate, spec),
    }
}

pub fn euclidean_slide(w1: &Window, w2: &Window, spec: &DistanceSpec) -> Result<f64> {
    let pairs = paired_traces(w1, w2, spec)?;
    let mut ops = 0;
    Ok(euclid_bounded(&pairs, spec, f64::INFINITY, &mut ops).unwrap_or(f64::INFINITY))
}

/// Euclidean kernel with early abandoning.
///
/// Returns `None` once the distance is known to exceed `bound`; otherwise the
/// exact value, computed with the same operation order whatever the bound.
/// `ops` counts squared-difference terms evaluated.
pub(crate) fn euclid_bounded(pairs: &[TracePair<'_>], spec: &DistanceSpec, bound: f64, ops: &mut u64) -> Option<f64> {
    let (la, lb) = (pairs[0].0.len(), pairs[0].1.len());
    if la == lb {
        return euclid_at_offset(pairs, 0, false, spec.dimension_aggregation, bound, ops);
    }
    let short_is_first = la < lb;
    let (ls, ll) = if short_is_first { (la, lb) } else { (lb, la) };
    let offsets = (0..=ll - ls).step_by(spec.offset_step);
    match spec.slide_aggregation {
        SlideAggregation::Min => {
            let mut best: Option<f64> = None;
            for off in offsets {
                let limit = best.map_or(bound, |b| b.min(bound));
                if let Some(d) = euclid_at_offset(pairs, off, short_is_first, spec.dimension_aggregation, limit, ops) {
                    if best.is_none_or(|b| d < b) {
                        best = Some(d);
                    }
                }
            }
            best.filter(|&b| b <= bound)
        }
        SlideAggregation::Mean => {
            let mut sum = 0.0;
            let mut n = 0usize;
            for off in offsets {
                sum += euclid_at_offset(
                    pairs,
                    off,
                    short_is_first,
                    spec.dimension_aggregation,
                    f64::INFINITY,
                    ops,
                )?;
                n += 1;
            }
            Some(sum / n as f64)
        }
    }
}

const ABANDON_CHECK_EVERY: usize = 8;

fn euclid_at_offset(
    pairs: &[TracePair<'_>],
    offset: usize,
    short_is_first: bool,
    how: DimensionAggregation,
    bound: f64,
    ops: &mut u64,
) -> Option<f64> {
    let k = pairs.len() as f64;
    let mut done = match how {
        DimensionAggregation::Mean => 0.0,
        DimensionAggregation::Max => f64::NEG_INFINITY,
    };
    let lower_bound = |done: f64, cur: f64| match how {
        DimensionAggregation::Mean => (done + cur) / k,
        DimensionAggregation::Max => done.max(cur),
    };
    for &(a, b) in pairs {
        let (short, long) = if short_is_first { (a, b) } else { (b, a) };
        let n = short.len().min(long.len());
        let long = &long[offset..offset + n];
        let short = &short[..n];
        let root_n = (n as f64).sqrt();
        let mut ss = 0.0;
        for (i, (x, y)) in short.iter().zip(long).enumerate() {
            let diff = x - y;
            ss += diff * diff;
            if bound.is_finite() && (i + 1) % ABANDON_CHECK_EVERY == 0 && lower_bound(done, ss.sqrt() / root_n) > bound
            {
                *ops += (i + 1) as u64;
                return None;
            }
        }
        *ops += n as u64;
        let dim = ss.sqrt() / root_n;
        done = match how {
            DimensionAggregation::Mean => done + dim,
            DimensionAggregation::Max => done.max(dim),
        };
        if bound.is_finite() && lower_bound(done, 0.0) > bound {
            return None;
        }
    }
    Some(match how {
        DimensionAggregation::Mean => done / k,
        DimensionAggregation::Max => done,
    })
}

pub fn dtw_distance(w1: &Window, w2: &Window, spec: &DistanceSpec) -> Result<f64> {
    let pairs = paired_traces(w1, w2, spec)?;
    Ok(aggregate(
        pairs.iter().map(|(a, b)| dtw_1d(a, b)),
        spec.dimension_aggregation,
    ))
}

/// DTW cost of the optimal warping path divided by that path's length.
///
/// Among equal-cost predecessors the shorter path wins, then the diagonal.
pub fn dtw_1d(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "dtw on an empty trace");
    let m = b.len();
    // (cost, path length) for the previous and current rows
    let mut prev = vec![(f64::INFINITY, 0usize); m + 1];
    let mut cur = vec![(f64::INFINITY, 0usize); m + 1];
    prev[0] = (0.0, 0);
    for &x in a {
        cur[0] = (f64::INFINITY, 0);
        for j in 1..=m {
            let local = (x - b[j - 1]).abs();
            let mut best = prev[j - 1];
            for cand in [prev[j], cur[j - 1]] {
                if cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                    best = cand;
                }
            }
            cur[j] = (local + best.0, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, len) = prev[m];
    cost / len as f64
}

pub fn xcorr_distance(w1: &Window, w2: &Window, spec: &DistanceSpec) -> Result<f64> {
    let pairs = paired_traces(w1, w2, spec)?;
    let mut per_dim = Vec::with_capacity(pairs.len());
    for (d, (a, b)) in pairs.iter().enumerate() {
        let na = norm(a);
        let nb = norm(b);
        if na == 0.0 || nb == 0.0 {
            log::warn!("xcorr: skipping zero-norm feature #{d}");
            continue;
        }
        let peak = if a.len().max(b.len()) <= spec.xcorr_direct_max_len {
            max_xcorr_direct(a, b)
        } else {
            max_xcorr_fft(a, b)
        };
        per_dim.push((-(peak / (na * nb))).clamp(-1.0, 1.0));
    }
    if per_dim.is_empty() {
        return Err(Error::invalid(
            "cross-correlation undefined: every feature has zero norm",
        ));
    }
    Ok(aggregate(per_dim, spec.dimension_aggregation))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `max_τ Σ_i a[i + τ]·b[i]` over every lag with any overlap.
pub fn max_xcorr_direct(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as isize, b.len() as isize);
    let mut best = f64::NEG_INFINITY;
    for lag in -(m - 1)..n {
        let lo = 0.max(-lag);
        let hi = m.min(n - lag);
        let s: f64 = (lo..hi).map(|i| a[(i + lag) as usize] * b[i as usize]).sum();
        best = best.max(s);
    }
    best
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Same quantity as [`max_xcorr_direct`], via zero-padded FFTs.
pub fn max_xcorr_fft(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let size = (n + m - 1).next_power_of_two();
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fa.resize(size, Complex::new(0.0, 0.0));
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fb.resize(size, Complex::new(0.0, 0.0));
    let fwd = plan(size, false);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut prod: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(x, y)| x * y.conj()).collect();
    plan(size, true).process(&mut prod);
    let scale = size as f64;
    // index τ holds lag τ for τ ≥ 0 and lag τ − size for the wrapped negatives
    let positive = (0..n).map(|i| prod[i].re / scale);
    let negative = (size - (m - 1)..size).map(|i| prod[i].re / scale);
    positive.chain(negative).fold(f64::NEG_INFINITY, f64::max)
}
