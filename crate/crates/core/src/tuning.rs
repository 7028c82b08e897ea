//! Parameter tuning by Gaussian-process Bayesian optimization, with an
//! exhaustive grid search as a reference.
//!
//! The objective is the best ratio of event recall to false-alert rate over a
//! sweep of the alert decision criterion. Here the criterion is a cut on alert
//! peak score: after voting, the emitted alerts are the true-positive-labelled
//! ones whose peak reaches the cut. The false-alert rate is floored at
//! `1 / (total alerts + 1)`, so a perfect configuration scores `total + 1`.
//!
//! Optimization works in the unit cube. Observations are standardized, the
//! kernel is squared-exponential with per-dimension length scales picked from
//! a fixed grid by marginal likelihood, and expected improvement is maximized
//! over seeded random candidates.

use std::fmt;
use std::time::Duration;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alerting::{bootstrap_labels, Alert, VotingConfig};
use crate::distances::DistanceSpec;
use crate::error::{Error, Result};
use crate::evaluation::count_matches;
use crate::ingest::EventInterval;
use crate::report::opt_float_repr;
use crate::windowing::{TimeRange, WindowCatalog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Continuous,
    Integer,
}

/// One tuned parameter, named by its config key path (e.g. `alerting.k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimension {
    pub name: String,
    pub kind: ParamKind,
    pub lo: f64,
    pub hi: f64,
}

impl Dimension {
    pub fn continuous(name: &str, lo: f64, hi: f64) -> Self {
        Dimension {
            name: name.into(),
            kind: ParamKind::Continuous,
            lo,
            hi,
        }
    }

    pub fn integer(name: &str, lo: i64, hi: i64) -> Self {
        Dimension {
            name: name.into(),
            kind: ParamKind::Integer,
            lo: lo as f64,
            hi: hi as f64,
        }
    }

    /// Maps `u ∈ [0, 1]` into the bounds, rounding integer parameters.
    pub fn from_unit(&self, u: f64) -> f64 {
        let x = self.lo + u.clamp(0.0, 1.0) * (self.hi - self.lo);
        match self.kind {
            ParamKind::Continuous => x,
            ParamKind::Integer => x.round().clamp(self.lo, self.hi),
        }
    }

    pub fn to_unit(&self, x: f64) -> f64 {
        (x - self.lo) / (self.hi - self.lo)
    }
}

pub const MAX_DIMENSIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSpace {
    pub dimensions: Vec<Dimension>,
    /// Total objective evaluations for [`gp_optimize`].
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TuningSpace {
    pub fn validate(&self) -> Result<()> {
        let d = self.dimensions.len();
        if d == 0 || d > MAX_DIMENSIONS {
            return Err(Error::invalid(format!(
                "tune 1 to {MAX_DIMENSIONS} parameters at a time, not {d}"
            )));
        }
        for (i, dim) in self.dimensions.iter().enumerate() {
            if !(dim.lo < dim.hi) || !dim.lo.is_finite() || !dim.hi.is_finite() {
                return Err(Error::invalid(format!("{}: need finite lo < hi", dim.name)));
            }
            if dim.kind == ParamKind::Integer && (dim.lo.fract() != 0.0 || dim.hi.fract() != 0.0) {
                return Err(Error::invalid(format!("{}: integer bounds must be whole", dim.name)));
            }
            if self.dimensions[..i].iter().any(|o| o.name == dim.name) {
                return Err(Error::invalid(format!("{} listed twice", dim.name)));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.dimensions.iter().map(|d| d.name.clone()).collect()
    }

    fn unit_to_point(&self, u: &[f64]) -> Vec<f64> {
        self.dimensions.iter().zip(u).map(|(d, &u)| d.from_unit(u)).collect()
    }

    fn point_to_unit(&self, x: &[f64]) -> Vec<f64> {
        self.dimensions.iter().zip(x).map(|(d, &x)| d.to_unit(x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub value: f64,
    /// Peak-score cut attaining `value`; `None` when nothing was emitted.
    #[serde(with = "opt_float_repr")]
    pub at_threshold: Option<f64>,
    pub event_recall: f64,
    pub false_alert_rate: f64,
    /// Why the value is zero when the pipeline failed under these parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl ObjectiveValue {
    pub fn failed(reason: impl fmt::Display) -> Self {
        ObjectiveValue {
            value: 0.0,
            at_threshold: None,
            event_recall: 0.0,
            false_alert_rate: 0.0,
            diagnostic: Some(reason.to_string()),
        }
    }
}

/// Sweeps the peak-score cut over labelled alerts and returns the best
/// recall / max(fpr, 1 / (alerts + 1)).
pub fn decision_sweep(labeled: &[Alert], events: &[EventInterval], lead: Duration) -> ObjectiveValue {
    if events.is_empty() {
        return ObjectiveValue::failed("no events to recall");
    }
    let eps = 1.0 / (labeled.len() + 1) as f64;
    let positives: Vec<&Alert> = labeled
        .iter()
        .filter(|a| a.label.is_some_and(|l| l.is_anomalous()))
        .collect();
    let mut cuts: Vec<f64> = positives.iter().map(|a| a.peak_score).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut best = ObjectiveValue {
        value: 0.0,
        at_threshold: None,
        event_recall: 0.0,
        false_alert_rate: 0.0,
        diagnostic: None,
    };
    for &cut in &cuts {
        let emitted: Vec<TimeRange> = positives
            .iter()
            .filter(|a| a.peak_score >= cut)
            .map(|a| a.interval)
            .collect();
        let c = count_matches(&emitted, events, lead);
        let recall = c.events_recalled as f64 / c.events_total as f64;
        let fpr = c.alerts_false as f64 / c.alerts_total as f64;
        let value = recall / fpr.max(eps);
        if value > best.value {
            best = ObjectiveValue {
                value,
                at_threshold: Some(cut),
                event_recall: recall,
                false_alert_rate: fpr,
                diagnostic: None,
            };
        }
    }
    best
}

/// Fixed alerts, seed labels and events; only the voting parameters vary.
#[derive(Debug, Clone)]
pub struct LabelingScenario {
    pub seed: Vec<Alert>,
    pub unlabeled: Vec<Alert>,
    pub catalog: WindowCatalog,
    pub events: Vec<EventInterval>,
    pub dist: DistanceSpec,
    pub lead: Duration,
}

impl LabelingScenario {
    pub fn objective(&self, config: &VotingConfig) -> ObjectiveValue {
        match bootstrap_labels(&self.seed, &self.unlabeled, &self.catalog, &self.dist, config) {
            Ok(labeled) => decision_sweep(&labeled, &self.events, self.lead),
            Err(e) => ObjectiveValue::failed(e),
        }
    }
}

/// `base` with the `alerting.*` parameters in `names` set from `point`.
pub fn voting_config_with(base: &VotingConfig, names: &[String], point: &[f64]) -> Result<VotingConfig> {
    let mut c = base.clone();
    for (name, &v) in names.iter().zip(point) {
        match name.as_str() {
            "alerting.t_cutoff" => c.t_cutoff = v,
            "alerting.t_anom" => c.t_anom = v,
            "alerting.k" => c.k = v.round().max(0.0) as usize,
            "alerting.min_votes" => c.min_votes = v.round().max(0.0) as usize,
            other => return Err(Error::config(other, "not a voting parameter")),
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    Acquisition,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub phase: Phase,
    pub params: Vec<f64>,
    pub objective: ObjectiveValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub names: Vec<String>,
    pub best_params: Vec<f64>,
    pub best: ObjectiveValue,
    /// Every evaluation in order (for a grid, the whole surface).
    pub trace: Vec<TraceEntry>,
}

fn incumbent(names: Vec<String>, trace: Vec<TraceEntry>) -> TuningResult {
    let mut best = 0;
    for (i, t) in trace.iter().enumerate() {
        if t.objective.value > trace[best].objective.value {
            best = i;
        }
    }
    TuningResult {
        names,
        best_params: trace[best].params.clone(),
        best: trace[best].objective.clone(),
        trace,
    }
}

pub const ACQUISITION_CANDIDATES: usize = 2048;
pub const LENGTH_SCALE_GRID: [f64; 5] = [0.05, 0.1, 0.2, 0.5, 1.0];
pub const OBSERVATION_NOISE: f64 = 1e-6;

struct Gp {
    x: Vec<Vec<f64>>,
    scales: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn se_kernel(a: &[f64], b: &[f64], scales: &[f64]) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(scales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    (-0.5 * r2).exp()
}

fn factorize(x: &[Vec<f64>], scales: &[f64]) -> Option<Cholesky<f64, Dyn>> {
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| se_kernel(&x[i], &x[j], scales));
    let mut jitter = OBSERVATION_NOISE;
    for _ in 0..8 {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = kj.cholesky() {
            return Some(c);
        }
        jitter *= 10.0;
    }
    None
}

impl Gp {
    /// Fits on unit-cube inputs and standardized outputs, choosing the
    /// length-scale combination with the highest log marginal likelihood.
    fn fit(x: &[Vec<f64>], y: &[f64]) -> Option<Gp> {
        let d = x[0].len();
        let yv = DVector::from_column_slice(y);
        let mut best: Option<(f64, Gp)> = None;
        for combo in 0..LENGTH_SCALE_GRID.len().pow(d as u32) {
            let scales: Vec<f64> = (0..d)
                .map(|j| LENGTH_SCALE_GRID[combo / LENGTH_SCALE_GRID.len().pow(j as u32) % LENGTH_SCALE_GRID.len()])
                .collect();
            let Some(chol) = factorize(x, &scales) else { continue };
            let alpha = chol.solve(&yv);
            let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
            let lml = -0.5 * yv.dot(&alpha) - log_det;
            if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((
                    lml,
                    Gp {
                        x: x.to_vec(),
                        scales,
                        chol,
                        alpha,
                    },
                ));
            }
        }
        best.map(|b| b.1)
    }

    fn predict(&self, u: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| se_kernel(xi, u, &self.scales)));
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&ks)
            .unwrap_or_else(|| DVector::zeros(self.x.len()));
        let var = (1.0 - v.dot(&v)).max(1e-12);
        (mean, var.sqrt())
    }
}

fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let z = (mean - best) / sd;
    let cdf = 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (mean - best) * cdf + sd * pdf
}

fn latin_hypercube(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (i, p) in pts.iter_mut().enumerate() {
            p[j] = (strata[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

fn standardize(y: &[f64]) -> (Vec<f64>, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    let z: Vec<f64> = y.iter().map(|v| (v - mean) / sd).collect();
    let best = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (z, best)
}

/// Maximizes `objective` over `space`. The initial Latin-hypercube design is
/// evaluated in parallel; acquisitions are sequential.
pub fn gp_optimize<F>(space: &TuningSpace, objective: F) -> Result<TuningResult>
where
    F: Fn(&[f64]) -> ObjectiveValue + Sync,
{
    space.validate()?;
    let d = space.dimensions.len();
    if space.budget < d + 2 {
        return Err(Error::invalid(format!(
            "budget {} is below dimensions + 2 = {}",
            space.budget,
            d + 2
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(space.seed);
    let n0 = (2 * d).max(4).min(space.budget);
    let design: Vec<Vec<f64>> = latin_hypercube(n0, d, &mut rng)
        .iter()
        .map(|u| space.unit_to_point(u))
        .collect();
    let values: Vec<ObjectiveValue> = design.par_iter().map(|x| objective(x)).collect();
    let mut trace: Vec<TraceEntry> = design
        .into_iter()
        .zip(values)
        .enumerate()
        .map(|(iteration, (params, objective))| TraceEntry {
            iteration,
            phase: Phase::Initial,
            params,
            objective,
        })
        .collect();

    while trace.len() < space.budget {
        let xs: Vec<Vec<f64>> = trace.iter().map(|t| space.point_to_unit(&t.params)).collect();
        let (ys, y_best) = standardize(&trace.iter().map(|t| t.objective.value).collect::<Vec<_>>());
        let gp = Gp::fit(&xs, &ys);

        let mut chosen: Option<(f64, Vec<f64>)> = None;
        let mut fallback: Option<Vec<f64>> = None;
        for _ in 0..ACQUISITION_CANDIDATES {
            let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let x = space.unit_to_point(&u);
            fallback.get_or_insert_with(|| x.clone());
            // integer rounding can land on a point already evaluated
            if trace.iter().any(|t| t.params == x) {
                continue;
            }
            let ei = match &gp {
                Some(gp) => {
                    let (m, s) = gp.predict(&space.point_to_unit(&x));
                    expected_improvement(m, s, y_best)
                }
                None => 0.0,
            };
            if chosen.as_ref().is_none_or(|(b, _)| ei > *b) {
                chosen = Some((ei, x));
            }
        }
        let params = chosen.map(|c| c.1).or(fallback).expect("at least one candidate");
        let value = objective(&params);
        trace.push(TraceEntry {
            iteration: trace.len(),
            phase: Phase::Acquisition,
            params,
            objective: value,
        });
    }
    Ok(incumbent(space.names(), trace))
}

/// Grid values for one dimension: `n` evenly spaced points, or every integer
/// in range when `n` covers it. A single point is the midpoint.
pub fn grid_axis(dim: &Dimension, n: usize) -> Vec<f64> {
    if dim.kind == ParamKind::Integer && n as f64 >= dim.hi - dim.lo + 1.0 {
        return (dim.lo as i64..=dim.hi as i64).map(|v| v as f64).collect();
    }
    let mut axis: Vec<f64> = if n <= 1 {
        vec![dim.from_unit(0.5)]
    } else {
        (0..n).map(|i| dim.from_unit(i as f64 / (n - 1) as f64)).collect()
    };
    axis.dedup();
    axis
}

/// Evaluates every grid point (in parallel). Errors when the grid has more
/// than `cap` points.
pub fn grid_search<F>(space: &TuningSpace, resolution: &[usize], cap: usize, objective: F) -> Result<TuningResult>
where
    F: Fn(&[f64]) -> ObjectiveValue + Sync,
{
    space.validate()?;
    if resolution.len() != space.dimensions.len() || resolution.contains(&0) {
        return Err(Error::invalid("need one positive resolution per dimension"));
    }
    let axes: Vec<Vec<f64>> = space
        .dimensions
        .iter()
        .zip(resolution)
        .map(|(d, &n)| grid_axis(d, n))
        .collect();
    let total = axes
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.len()))
        .unwrap_or(usize::MAX);
    if total > cap {
        return Err(Error::invalid(format!(
            "grid of {total} points exceeds the cap of {cap}; use a coarser resolution"
        )));
    }
    // first dimension varies slowest
    let points: Vec<Vec<f64>> = (0..total)
        .map(|mut i| {
            let mut p = vec![0.0; axes.len()];
            for j in (0..axes.len()).rev() {
                p[j] = axes[j][i % axes[j].len()];
                i /= axes[j].len();
            }
            p
        })
        .collect();
    let values: Vec<ObjectiveValue> = points.par_iter().map(|p| objective(p)).collect();
    let trace = points
        .into_iter()
        .zip(values)
        .enumerate()
        .map(|(iteration, (params, objective))| TraceEntry {
            iteration,
            phase: Phase::Grid,
            params,
            objective,
        })
        .collect();
    Ok(incumbent(space.names(), trace))
}

/// Trace as CSV rows: iteration, phase, one column per parameter, then the
/// objective fields.
pub fn trace_table(result: &TuningResult) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["iteration".to_string(), "phase".to_string()];
    header.extend(result.names.iter().cloned());
    header.extend(["value", "at_threshold", "event_recall", "false_alert_rate"].map(String::from));
    let rows = result
        .trace
        .iter()
        .map(|t| {
            let mut row = vec![
                t.iteration.to_string(),
                serde_json::to_value(t.phase)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
            ];
            row.extend(t.params.iter().map(f64::to_string));
            row.push(t.objective.value.to_string());
            row.push(t.objective.at_threshold.map(|v| v.to_string()).unwrap_or_default());
            row.push(t.objective.event_recall.to_string());
            row.push(t.objective.false_alert_rate.to_string());
            row
        })
        .collect();
    (header, rows)
}
