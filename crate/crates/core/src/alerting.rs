//! Alerts: thresholded deviation runs, labelled by majority vote over the
//! most similar already-labelled alerts and filtered on the result.
//!
//! Two alerts are compared through their representative windows (the member
//! window with the highest score). Voting keeps only past alerts whose
//! distance is within `t_cutoff`, takes the `k` closest, and averages their
//! binary labels. An alert with fewer than `min_votes` similar predecessors
//! is novel and is labelled a true positive.

use std::io::{BufRead, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::deviation::{DeviationEntry, DeviationSeries};
use crate::distances::{distance, DistanceSpec};
use crate::error::{Error, Result};
use crate::report::float_repr;
use crate::time::{duration_nanos, Timestamp};
use crate::windowing::{TimeRange, WindowCatalog, WindowRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertLabel {
    TruePositive,
    FalsePositive,
}

impl AlertLabel {
    pub fn from_bool(anomalous: bool) -> Self {
        if anomalous {
            AlertLabel::TruePositive
        } else {
            AlertLabel::FalsePositive
        }
    }

    pub fn is_anomalous(self) -> bool {
        self == AlertLabel::TruePositive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Human,
    Propagated,
    DefaultPositive,
}

/// One ballot in a vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub alert_id: u64,
    pub distance: f64,
    pub label: AlertLabel,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub id: u64,
    pub interval: TimeRange,
    #[serde(with = "float_repr")]
    pub peak_score: f64,
    pub windows: Vec<WindowRef>,
    pub representative: WindowRef,
    #[serde(default)]
    pub label: Option<AlertLabel>,
    #[serde(default)]
    pub label_source: Option<LabelSource>,
    #[serde(default)]
    pub vote_record: Option<Vec<Vote>>,
}

impl Alert {
    pub fn start(&self) -> Timestamp {
        self.interval.start
    }

    pub fn end(&self) -> Timestamp {
        self.interval.end
    }

    fn from_run(id: u64, run: &[&DeviationEntry]) -> Alert {
        let mut peak = run[0];
        for e in &run[1..] {
            if e.score > peak.score {
                peak = e;
            }
        }
        Alert {
            id,
            interval: TimeRange::new(run[0].timestamp, run[run.len() - 1].timestamp),
            peak_score: peak.score,
            windows: run.iter().map(|e| e.window).collect(),
            representative: peak.window,
            label: None,
            label_source: None,
            vote_record: None,
        }
    }

    fn absorb(&mut self, other: Alert) {
        self.interval.end = other.interval.end;
        if other.peak_score > self.peak_score {
            self.peak_score = other.peak_score;
            self.representative = other.representative;
        }
        self.windows.extend(other.windows);
    }
}

/// Maximal runs of consecutive entries scoring at least `threshold`. Runs
/// separated by less than `merge_gap` are joined. Ids count up from zero.
pub fn extract_alerts(scores: &DeviationSeries, threshold: f64, merge_gap: Duration) -> Vec<Alert> {
    let gap = duration_nanos(merge_gap);
    let mut runs: Vec<Vec<&DeviationEntry>> = Vec::new();
    let mut current: Vec<&DeviationEntry> = Vec::new();
    for e in &scores.entries {
        if e.score >= threshold {
            current.push(e);
        } else if !current.is_empty() {
            runs.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }

    let mut alerts: Vec<Alert> = Vec::with_capacity(runs.len());
    for run in runs {
        let next = Alert::from_run(0, &run);
        match alerts.last_mut() {
            Some(prev) if next.start().nanos_since(prev.end()) < gap => prev.absorb(next),
            _ => alerts.push(next),
        }
    }
    for (i, a) in alerts.iter_mut().enumerate() {
        a.id = i as u64;
    }
    alerts
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    SimilarityWeighted,
}

/// Regularizer in the similarity weight `1 / (ε + distance − floor)`.
pub const WEIGHT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VotingConfig {
    /// Largest distance at which a past alert may vote.
    #[serde(default = "default_cutoff")]
    pub t_cutoff: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_t_anom")]
    pub t_anom: f64,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default = "default_min_votes")]
    pub min_votes: usize,
}

fn default_cutoff() -> f64 {
    -0.9
}
fn default_k() -> usize {
    3
}
fn default_t_anom() -> f64 {
    0.5
}
fn default_min_votes() -> usize {
    1
}

impl Default for VotingConfig {
    fn default() -> Self {
        VotingConfig {
            t_cutoff: default_cutoff(),
            k: default_k(),
            t_anom: default_t_anom(),
            weighting: Weighting::Uniform,
            min_votes: default_min_votes(),
        }
    }
}

impl VotingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_votes == 0 || self.k < self.min_votes {
            return Err(Error::invalid(format!(
                "need k ≥ min_votes ≥ 1 (k = {}, min_votes = {})",
                self.k, self.min_votes
            )));
        }
        if !(0.0..=1.0).contains(&self.t_anom) {
            return Err(Error::invalid(format!("t_anom {} outside [0, 1]", self.t_anom)));
        }
        if self.t_cutoff.is_nan() {
            return Err(Error::invalid("t_cutoff is NaN"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteOutcome {
    pub label: AlertLabel,
    pub source: LabelSource,
    pub votes: Vec<Vote>,
    /// Weighted mean of the ballots; `None` when too few voted.
    pub mean: Option<f64>,
}

/// Labels `new_alert` from the labels of its most similar predecessors in
/// `registry`.
pub fn vote_label(
    new_alert: &Alert,
    registry: &[Alert],
    catalog: &WindowCatalog,
    dist: &DistanceSpec,
    config: &VotingConfig,
) -> Result<VoteOutcome> {
    config.validate()?;
    let target = catalog.resolve(&new_alert.representative)?;
    let mut candidates = Vec::new();
    for past in registry {
        let label = past
            .label
            .ok_or_else(|| Error::invalid(format!("registry alert {} is unlabeled", past.id)))?;
        if past.start() >= new_alert.start() {
            return Err(Error::invalid(format!(
                "registry alert {} does not precede alert {}",
                past.id, new_alert.id
            )));
        }
        let d = distance(target, catalog.resolve(&past.representative)?, dist)?;
        if d <= config.t_cutoff {
            candidates.push((d, past.start(), past.id, label));
        }
    }
    // closest first; earlier alerts win ties
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    candidates.truncate(config.k);

    let floor = dist.measure.floor();
    let votes: Vec<Vote> = candidates
        .into_iter()
        .map(|(d, _, id, label)| Vote {
            alert_id: id,
            distance: d,
            label,
            weight: match config.weighting {
                Weighting::Uniform => 1.0,
                Weighting::SimilarityWeighted => 1.0 / (WEIGHT_EPSILON + (d - floor).max(0.0)),
            },
        })
        .collect();

    if votes.len() < config.min_votes {
        return Ok(VoteOutcome {
            label: AlertLabel::TruePositive,
            source: LabelSource::DefaultPositive,
            votes,
            mean: None,
        });
    }
    let total: f64 = votes.iter().map(|v| v.weight).sum();
    let positive: f64 = votes.iter().filter(|v| v.label.is_anomalous()).map(|v| v.weight).sum();
    let mean = positive / total;
    Ok(VoteOutcome {
        label: AlertLabel::from_bool(mean >= config.t_anom),
        source: LabelSource::Propagated,
        votes,
        mean: Some(mean),
    })
}

/// Labels `unlabeled` in time order, each against the seed alerts and the
/// alerts labelled before it. Returns seed and new alerts together, ordered by
/// start time.
pub fn bootstrap_labels(
    seed: &[Alert],
    unlabeled: &[Alert],
    catalog: &WindowCatalog,
    dist: &DistanceSpec,
    config: &VotingConfig,
) -> Result<Vec<Alert>> {
    config.validate()?;
    if let Some(a) = seed.iter().find(|a| a.label.is_none()) {
        return Err(Error::invalid(format!("seed alert {} has no label", a.id)));
    }
    if let Some(p) = unlabeled.windows(2).find(|p| p[1].start() <= p[0].start()) {
        return Err(Error::invalid(format!(
            "time-order violation: alert {} does not start after alert {}",
            p[1].id, p[0].id
        )));
    }

    let mut seeds: Vec<Alert> = seed.to_vec();
    for s in &mut seeds {
        s.label_source.get_or_insert(LabelSource::Human);
    }
    seeds.sort_by_key(|a| (a.start(), a.id));

    let mut labelled: Vec<Alert> = Vec::with_capacity(unlabeled.len());
    for alert in unlabeled {
        let registry: Vec<Alert> = merge_by_start(seeds.iter().filter(|s| s.start() < alert.start()), labelled.iter());
        let outcome = vote_label(alert, &registry, catalog, dist, config)?;
        let mut a = alert.clone();
        a.label = Some(outcome.label);
        a.label_source = Some(outcome.source);
        a.vote_record = Some(outcome.votes);
        labelled.push(a);
    }
    Ok(merge_by_start(seeds.iter(), labelled.iter()))
}

fn merge_by_start<'a>(a: impl Iterator<Item = &'a Alert>, b: impl Iterator<Item = &'a Alert>) -> Vec<Alert> {
    let mut all: Vec<Alert> = a.chain(b).cloned().collect();
    all.sort_by_key(|x| (x.start(), x.id));
    all
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub emitted: Vec<Alert>,
    /// Alerts withheld because they were labelled false positives.
    pub suppressed: Vec<Alert>,
}

pub fn filter_alerts(labeled: &[Alert]) -> Result<FilterOutcome> {
    let mut out = FilterOutcome::default();
    for a in labeled {
        match a.label {
            Some(AlertLabel::TruePositive) => out.emitted.push(a.clone()),
            Some(AlertLabel::FalsePositive) => out.suppressed.push(a.clone()),
            None => return Err(Error::invalid(format!("alert {} is unlabeled", a.id))),
        }
    }
    Ok(out)
}

/// What a seed-label row points at.
#[derive(Debug, Clone, PartialEq)]
pub enum SeedTarget {
    Id(u64),
    /// Every alert overlapping this closed interval.
    Interval(TimeRange),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedLabel {
    pub target: SeedTarget,
    pub label: AlertLabel,
}

/// Parses a two-column seed-label CSV: `alert,label` where `alert` is an alert
/// id or a `start/end` interval and `label` is 1/0, true/false or tp/fp.
pub fn read_seed_labels<R: std::io::Read>(reader: R) -> Result<Vec<SeedLabel>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let (key, raw_label) = (rec.get(0).unwrap_or(""), rec.get(1).unwrap_or(""));
        let target =
            if let Some((s, e)) = key.split_once('/') {
                let parse = |v: &str| {
                    v.parse::<Timestamp>().map_err(|_| Error::BadTimestamp {
                        row,
                        value: v.to_string(),
                    })
                };
                SeedTarget::Interval(TimeRange::new(parse(s)?, parse(e)?))
            } else {
                SeedTarget::Id(key.parse().map_err(|_| {
                    Error::invalid(format!("seed row {row}: {key:?} is neither an alert id nor start/end"))
                })?)
            };
        let label = match raw_label.to_ascii_lowercase().as_str() {
            "1" | "true" | "tp" | "true_positive" => AlertLabel::TruePositive,
            "0" | "false" | "fp" | "false_positive" => AlertLabel::FalsePositive,
            other => return Err(Error::invalid(format!("seed row {row}: bad label {other:?}"))),
        };
        out.push(SeedLabel { target, label });
    }
    Ok(out)
}

/// Writes seed labels in the format [`read_seed_labels`] accepts.
pub fn write_seed_labels<W: std::io::Write>(out: W, seeds: &[SeedLabel]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alert", "label"])?;
    for s in seeds {
        let key = match &s.target {
            SeedTarget::Id(id) => id.to_string(),
            SeedTarget::Interval(r) => format!("{}/{}", r.start, r.end),
        };
        let label = match s.label {
            AlertLabel::TruePositive => "tp",
            AlertLabel::FalsePositive => "fp",
        };
        w.write_record([key.as_str(), label])?;
    }
    w.flush()?;
    Ok(())
}

/// Splits `alerts` into human-labelled seeds and the rest. Later rows override
/// earlier ones when both match an alert.
pub fn apply_seed_labels(alerts: &[Alert], seeds: &[SeedLabel]) -> (Vec<Alert>, Vec<Alert>) {
    let mut labelled = Vec::new();
    let mut rest = Vec::new();
    for a in alerts {
        let hit = seeds.iter().rev().find(|s| match &s.target {
            SeedTarget::Id(id) => *id == a.id,
            SeedTarget::Interval(r) => a.start() <= r.end && r.start <= a.end(),
        });
        match hit {
            Some(s) => {
                let mut a = a.clone();
                a.label = Some(s.label);
                a.label_source = Some(LabelSource::Human);
                a.vote_record = None;
                labelled.push(a);
            }
            None => rest.push(a.clone()),
        }
    }
    (labelled, rest)
}

/// One JSON record per line.
pub fn write_registry<W: Write>(mut out: W, alerts: &[Alert]) -> Result<()> {
    for a in alerts {
        serde_json::to_writer(&mut out, a)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_registry<R: BufRead>(input: R) -> Result<Vec<Alert>> {
    let mut alerts = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let alert: Alert =
            serde_json::from_str(&line).map_err(|e| Error::invalid(format!("registry line {}: {e}", i + 1)))?;
        alerts.push(alert);
    }
    Ok(alerts)
}
