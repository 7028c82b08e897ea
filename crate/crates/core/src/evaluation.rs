//! Event recall and per-alert true/false positive rates.
//!
//! An event `[s, e]` is recalled when an alert overlaps `[s − lead, e]`; an
//! alert is true when it overlaps any such lead-extended event. Rates with an
//! empty denominator are `None`.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alerting::{extract_alerts, Alert};
use crate::deviation::DeviationSeries;
use crate::error::{Error, Result};
use crate::ingest::EventInterval;
use crate::report::opt_float_repr;
use crate::time::Timestamp;
use crate::windowing::TimeRange;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub events_total: usize,
    pub events_recalled: usize,
    pub alerts_total: usize,
    pub alerts_true: usize,
    pub alerts_false: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    #[serde(with = "opt_float_repr")]
    pub event_recall: Option<f64>,
    #[serde(with = "opt_float_repr")]
    pub alert_fpr: Option<f64>,
    #[serde(with = "opt_float_repr")]
    pub alert_tpr: Option<f64>,
    pub counts: EvalCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(with = "opt_float_repr")]
    pub event_recall: Option<f64>,
    #[serde(with = "opt_float_repr")]
    pub alert_tpr: Option<f64>,
    #[serde(with = "opt_float_repr")]
    pub alert_fpr: Option<f64>,
    pub counts: EvalCounts,
    #[serde(default)]
    pub curves: Vec<CurvePoint>,
}

impl EvalReport {
    fn from_counts(counts: EvalCounts) -> Self {
        EvalReport {
            event_recall: ratio(counts.events_recalled, counts.events_total),
            alert_tpr: ratio(counts.alerts_true, counts.alerts_total),
            alert_fpr: ratio(counts.alerts_false, counts.alerts_total),
            counts,
            curves: Vec::new(),
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn overlaps(a: &TimeRange, start: Timestamp, end: Timestamp) -> bool {
    a.start <= end && start <= a.end
}

/// Counts over bare alert intervals.
pub fn count_matches(alerts: &[TimeRange], events: &[EventInterval], lead: Duration) -> EvalCounts {
    let extended: Vec<(Timestamp, Timestamp)> = events.iter().map(|e| (e.start.saturating_sub(lead), e.end)).collect();
    let recalled = extended
        .iter()
        .filter(|&&(s, e)| alerts.iter().any(|a| overlaps(a, s, e)))
        .count();
    let alerts_true = alerts
        .iter()
        .filter(|a| extended.iter().any(|&(s, e)| overlaps(a, s, e)))
        .count();
    EvalCounts {
        events_total: events.len(),
        events_recalled: recalled,
        alerts_total: alerts.len(),
        alerts_true,
        alerts_false: alerts.len() - alerts_true,
    }
}

pub fn evaluate(alerts: &[Alert], events: &[EventInterval], lead: Duration) -> EvalReport {
    let intervals: Vec<TimeRange> = alerts.iter().map(|a| a.interval).collect();
    EvalReport::from_counts(count_matches(&intervals, events, lead))
}

/// Extracts and evaluates alerts at each threshold.
pub fn threshold_sweep(
    scores: &DeviationSeries,
    events: &[EventInterval],
    thresholds: &[f64],
    merge_gap: Duration,
    lead: Duration,
) -> Result<Vec<CurvePoint>> {
    if thresholds.is_empty() {
        return Err(Error::invalid("threshold list is empty"));
    }
    if thresholds.iter().any(|t| t.is_nan()) || thresholds.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::invalid("thresholds must be sorted ascending"));
    }
    Ok(thresholds
        .par_iter()
        .map(|&threshold| {
            let r = evaluate(&extract_alerts(scores, threshold, merge_gap), events, lead);
            CurvePoint {
                threshold,
                event_recall: r.event_recall,
                alert_fpr: r.alert_fpr,
                alert_tpr: r.alert_tpr,
                counts: r.counts,
            }
        })
        .collect())
}

/// `n` thresholds evenly spaced over the finite score range.
pub fn default_thresholds(scores: &DeviationSeries, n: usize) -> Vec<f64> {
    let finite: Vec<f64> = scores.scores().into_iter().filter(|s| s.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if finite.is_empty() || n == 0 {
        return Vec::new();
    }
    if n == 1 || lo == hi {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub timestamp: Timestamp,
    pub score_a: f64,
    pub score_b: f64,
    pub in_event: bool,
    /// Percentile rank (0–100] of `score_a` among all joined `score_a` values.
    pub percentile_a: f64,
    pub percentile_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterSummary {
    pub points: usize,
    pub in_event_points: usize,
    /// Share of in-event points ranked above the 50th percentile.
    #[serde(with = "opt_float_repr")]
    pub in_event_upper_half_a: Option<f64>,
    #[serde(with = "opt_float_repr")]
    pub in_event_upper_half_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScatter {
    pub points: Vec<ScatterPoint>,
    pub summary: ScatterSummary,
}

fn held(series: &[(Timestamp, f64)], t: Timestamp) -> f64 {
    let i = series.partition_point(|p| p.0 <= t);
    series[i - 1].1
}

/// `100 · #{v ≤ x} / n` for every `x` in `values`.
pub fn percentile_ranks(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .map(|x| {
            let le = sorted.partition_point(|v| v.total_cmp(x).is_le());
            100.0 * le as f64 / n
        })
        .collect()
}

/// Joins two score sequences on the union of their timestamps inside the
/// common span, holding each value until its next sample.
pub fn risk_scatter(
    series_a: &[(Timestamp, f64)],
    series_b: &[(Timestamp, f64)],
    events: &[EventInterval],
) -> Result<RiskScatter> {
    for s in [series_a, series_b] {
        if s.windows(2).any(|p| p[1].0 <= p[0].0) {
            return Err(Error::invalid("score sequence timestamps must be strictly increasing"));
        }
    }
    let (Some(a0), Some(b0)) = (series_a.first(), series_b.first()) else {
        return Err(Error::invalid("score sequence is empty"));
    };
    let start = a0.0.max(b0.0);
    let end = series_a[series_a.len() - 1].0.min(series_b[series_b.len() - 1].0);
    if start > end {
        return Err(Error::invalid("score sequences do not share a time span"));
    }
    let mut grid: Vec<Timestamp> = series_a
        .iter()
        .chain(series_b)
        .map(|p| p.0)
        .filter(|t| (start..=end).contains(t))
        .collect();
    grid.sort_unstable();
    grid.dedup();

    let a: Vec<f64> = grid.iter().map(|&t| held(series_a, t)).collect();
    let b: Vec<f64> = grid.iter().map(|&t| held(series_b, t)).collect();
    let (pa, pb) = (percentile_ranks(&a), percentile_ranks(&b));
    let points: Vec<ScatterPoint> = grid
        .iter()
        .enumerate()
        .map(|(i, &t)| ScatterPoint {
            timestamp: t,
            score_a: a[i],
            score_b: b[i],
            in_event: events.iter().any(|e| e.contains(t)),
            percentile_a: pa[i],
            percentile_b: pb[i],
        })
        .collect();

    let inside: Vec<&ScatterPoint> = points.iter().filter(|p| p.in_event).collect();
    let upper = |f: fn(&ScatterPoint) -> f64| ratio(inside.iter().filter(|p| f(p) > 50.0).count(), inside.len());
    let summary = ScatterSummary {
        points: points.len(),
        in_event_points: inside.len(),
        in_event_upper_half_a: upper(|p| p.percentile_a),
        in_event_upper_half_b: upper(|p| p.percentile_b),
    };
    Ok(RiskScatter { points, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deviation::{DeviationEntry, SentinelPolicy};
    use crate::distances::Measure;
    use crate::ingest::EventSource;
    use crate::time::secs;
    use crate::windowing::WindowRef;
    use proptest::prelude::*;

    fn t(s: i64) -> Timestamp {
        Timestamp::from_secs(s)
    }

    fn ev(s: i64, e: i64) -> EventInterval {
        EventInterval::new(t(s), t(e), EventSource::HumanAnnotation).unwrap()
    }

    fn r(s: i64, e: i64) -> TimeRange {
        TimeRange::new(t(s), t(e))
    }

    fn report(alerts: &[TimeRange], events: &[EventInterval], lead: Duration) -> EvalReport {
        EvalReport::from_counts(count_matches(alerts, events, lead))
    }

    #[test]
    fn direct_definitions() {
        let rep = report(&[r(12, 15), r(30, 35)], &[ev(10, 20)], Duration::ZERO);
        assert_eq!(
            (rep.event_recall, rep.alert_tpr, rep.alert_fpr),
            (Some(1.0), Some(0.5), Some(0.5))
        );
    }

    #[test]
    fn no_alerts_is_not_applicable() {
        let rep = report(&[], &[ev(10, 20)], Duration::ZERO);
        assert_eq!(rep.event_recall, Some(0.0));
        assert_eq!((rep.alert_tpr, rep.alert_fpr), (None, None));
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains(r#""alert_tpr":null"#));
    }

    #[test]
    fn lead_credits_early_alerts() {
        assert_eq!(report(&[r(8, 9)], &[ev(10, 20)], secs(2.0)).event_recall, Some(1.0));
        assert_eq!(report(&[r(8, 9)], &[ev(10, 20)], secs(0.5)).event_recall, Some(0.0));
    }

    #[test]
    fn one_alert_may_recall_several_events() {
        let rep = report(&[r(0, 100)], &[ev(10, 20), ev(30, 40)], Duration::ZERO);
        assert_eq!(rep.counts.events_recalled, 2);
        assert_eq!(rep.counts.alerts_true, 1);
    }

    fn series(scores: &[f64]) -> DeviationSeries {
        DeviationSeries {
            measure: Measure::EuclideanSlide,
            sentinel_policy: SentinelPolicy::MeasureMaximum,
            entries: scores
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let w = WindowRef {
                        spec_id: 0,
                        origin: i,
                        origin_ts: t(i as i64),
                    };
                    DeviationEntry {
                        timestamp: w.origin_ts,
                        window: w,
                        score: s,
                        best_match: None,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn sweep_extremes_and_separable_case() {
        let mut scores = vec![1.0; 40];
        scores[20..24].copy_from_slice(&[8.0, 9.0, 9.0, 8.0]);
        let s = series(&scores);
        let events = [ev(20, 23)];
        let curve = threshold_sweep(&s, &events, &[0.0, 5.0, 100.0], Duration::ZERO, Duration::ZERO).unwrap();
        assert_eq!(curve[0].counts.alerts_total, 1);
        assert_eq!(curve[0].event_recall, Some(1.0));
        assert_eq!((curve[1].event_recall, curve[1].alert_fpr), (Some(1.0), Some(0.0)));
        assert_eq!(curve[2].counts.alerts_total, 0);

        assert!(threshold_sweep(&s, &events, &[], Duration::ZERO, Duration::ZERO).is_err());
        assert!(threshold_sweep(&s, &events, &[2.0, 1.0], Duration::ZERO, Duration::ZERO).is_err());
    }

    #[test]
    fn scatter_examples() {
        let a: Vec<(Timestamp, f64)> = (0..10).map(|i| (t(i), (i * 7 % 10) as f64)).collect();
        let sc = risk_scatter(&a, &a, &[]).unwrap();
        assert!(sc.points.iter().all(|p| p.score_a == p.score_b && !p.in_event));
        assert_eq!(sc.summary.in_event_upper_half_a, None);

        let mut b: Vec<(Timestamp, f64)> = (0..10).map(|i| (t(i), i as f64 * 0.1)).collect();
        b[4].1 = 50.0;
        b[5].1 = 50.0;
        let sc = risk_scatter(&a, &b, &[ev(4, 5)]).unwrap();
        let inside: Vec<_> = sc.points.iter().filter(|p| p.in_event).collect();
        assert_eq!(inside.len(), 2);
        assert!(inside.iter().all(|p| p.percentile_b == 100.0));
        assert_eq!(sc.summary.in_event_upper_half_b, Some(1.0));

        let late: Vec<(Timestamp, f64)> = vec![(t(100), 1.0)];
        assert!(risk_scatter(&a, &late, &[]).is_err());
    }

    #[test]
    fn scatter_step_alignment() {
        let a = vec![(t(0), 1.0), (t(10), 2.0)];
        let b = vec![(t(5), 7.0), (t(6), 8.0), (t(20), 9.0)];
        let sc = risk_scatter(&a, &b, &[]).unwrap();
        let got: Vec<(Timestamp, f64, f64)> = sc.points.iter().map(|p| (p.timestamp, p.score_a, p.score_b)).collect();
        assert_eq!(got, vec![(t(5), 1.0, 7.0), (t(6), 1.0, 8.0), (t(10), 2.0, 8.0)]);
    }

    proptest! {
        #[test]
        fn recall_monotone_in_threshold(scores in prop::collection::vec(0.0f64..10.0, 5..60),
                                        ev_start in 0i64..50, ev_len in 0i64..10, gap in 0u64..4) {
            let s = series(&scores);
            let events = [ev(ev_start, ev_start + ev_len)];
            let th: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
            let curve = threshold_sweep(&s, &events, &th, secs(gap as f64), Duration::ZERO).unwrap();
            for p in curve.windows(2) {
                prop_assert!(p[1].event_recall.unwrap() <= p[0].event_recall.unwrap());
            }
            for c in &curve {
                prop_assert_eq!(c.counts.alerts_true + c.counts.alerts_false, c.counts.alerts_total);
                prop_assert!(c.counts.events_recalled <= c.counts.events_total);
            }
        }

        #[test]
        fn permutation_invariant(spans in prop::collection::vec((0i64..100, 0i64..10), 0..12), rot in 0usize..12) {
            let alerts: Vec<TimeRange> = spans.iter().map(|&(s, l)| r(s, s + l)).collect();
            let events = [ev(10, 30), ev(60, 61)];
            let mut rotated = alerts.clone();
            if !rotated.is_empty() {
                let k = rot % rotated.len();
                rotated.rotate_left(k);
                rotated.reverse();
            }
            prop_assert_eq!(count_matches(&alerts, &events, secs(3.0)), count_matches(&rotated, &events, secs(3.0)));
        }
    }
}
