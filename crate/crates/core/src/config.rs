//! Pipeline configuration: a versioned TOML document with one section per
//! stage.
//!
//! Overlay files are deep-merged over the base document and `--set`
//! assignments (`section.key=value`) are applied last, all before the document
//! is parsed, so every error names the dotted key it came from. Relative paths
//! are resolved against the directory of the base config file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::alerting::{VotingConfig, Weighting};
use crate::deviation::MergePolicy;
use crate::distances::DistanceSpec;
use crate::error::{Error, Result};
use crate::ingest::{CsvOptions, MissingPolicy};
use crate::smoothing::SmoothingConfig;
use crate::time::secs;
use crate::tuning::{Dimension, TuningSpace};
use crate::windowing::{TimeRange, WindowSpec};

pub const CONFIG_VERSION: u32 = 1;

/// Pipeline stages in execution order.
pub const STAGES: [&str; 6] = ["score", "alerts", "vote", "eval", "modes", "tune"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub config_version: u32,
    #[serde(default)]
    pub run: RunConfig,
    pub ingest: IngestConfig,
    #[serde(default)]
    pub smoothing: SmoothingConfig,
    pub windowing: WindowingConfig,
    #[serde(default)]
    pub distance: DistanceSpec,
    #[serde(default)]
    pub deviation: DeviationConfig,
    pub alerting: AlertingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub tuning: Option<TuningConfig>,
    #[serde(default)]
    pub modes: ModesConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses one per core.
    #[serde(default)]
    pub workers: usize,
    /// Stages run by `pipeline`.
    #[serde(default = "default_stages")]
    pub stages: Vec<String>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_stages() -> Vec<String> {
    ["score", "alerts", "vote", "eval", "modes"].map(String::from).to_vec()
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: default_output_dir(),
            workers: 0,
            stages: default_stages(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub path: PathBuf,
    #[serde(default = "default_ts_column")]
    pub timestamp_column: String,
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
    #[serde(default)]
    pub missing: MissingPolicy,
    /// Resample onto a regular grid with this period.
    #[serde(default)]
    pub resample_seconds: Option<f64>,
    /// z-score every feature with statistics from the first N rows.
    #[serde(default)]
    pub standardize_rows: Option<usize>,
    /// Ground-truth events (`start,end` intervals or `timestamp,label` points).
    #[serde(default)]
    pub events: Option<PathBuf>,
}

fn default_ts_column() -> String {
    "timestamp".into()
}

impl IngestConfig {
    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            timestamp_column: self.timestamp_column.clone(),
            feature_columns: self.feature_columns.clone(),
            missing: self.missing,
        }
    }
}

/// The primary window spec plus any additional specs scored alongside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowingConfig {
    pub length: usize,
    pub stride: usize,
    #[serde(default)]
    pub history_depth: Option<usize>,
    #[serde(default)]
    pub feature_subset: Option<Vec<String>>,
    #[serde(default)]
    pub restriction_mask: Option<Vec<TimeRange>>,
    #[serde(default)]
    pub allow_disjoint: bool,
    #[serde(default)]
    pub additional: Vec<WindowSpec>,
}

impl WindowingConfig {
    /// All specs, numbered from 0 in declaration order.
    pub fn specs(&self) -> Vec<WindowSpec> {
        let primary = WindowSpec {
            id: 0,
            length: self.length,
            stride: self.stride,
            history_depth: self.history_depth,
            feature_subset: self.feature_subset.clone(),
            restriction_mask: self.restriction_mask.clone(),
            allow_disjoint: self.allow_disjoint,
        };
        std::iter::once(primary)
            .chain(self.additional.iter().cloned())
            .enumerate()
            .map(|(i, mut s)| {
                s.id = i;
                s
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationConfig {
    /// Use early-abandoning search (euclid only).
    #[serde(default)]
    pub pruned: bool,
    #[serde(default)]
    pub merge_policy: MergePolicy,
    /// Number of top-scoring windows to export match explanations for.
    #[serde(default = "default_explain_top")]
    pub explain_top: usize,
}

fn default_explain_top() -> usize {
    3
}

impl Default for DeviationConfig {
    fn default() -> Self {
        DeviationConfig {
            pruned: false,
            merge_policy: MergePolicy::Max,
            explain_top: default_explain_top(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertingConfig {
    pub threshold: f64,
    #[serde(default)]
    pub merge_gap_seconds: f64,
    /// Leave windows without history (scored at the ceiling) out of alerts.
    #[serde(default = "yes")]
    pub skip_sentinels: bool,
    /// Human labels for some alerts (`alert,label` CSV).
    #[serde(default)]
    pub seed_labels: Option<PathBuf>,
    #[serde(default = "default_t_cutoff")]
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

fn yes() -> bool {
    true
}
fn default_t_cutoff() -> f64 {
    VotingConfig::default().t_cutoff
}
fn default_k() -> usize {
    VotingConfig::default().k
}
fn default_t_anom() -> f64 {
    VotingConfig::default().t_anom
}
fn default_min_votes() -> usize {
    VotingConfig::default().min_votes
}

impl AlertingConfig {
    pub fn voting(&self) -> VotingConfig {
        VotingConfig {
            t_cutoff: self.t_cutoff,
            k: self.k,
            t_anom: self.t_anom,
            weighting: self.weighting,
            min_votes: self.min_votes,
        }
    }

    pub fn merge_gap(&self) -> Duration {
        secs(self.merge_gap_seconds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default)]
    pub lead_seconds: f64,
    /// Explicit sweep thresholds; when empty, `sweep_points` evenly spaced
    /// thresholds over the finite score range are used.
    #[serde(default)]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_sweep_points")]
    pub sweep_points: usize,
}

fn default_sweep_points() -> usize {
    50
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            lead_seconds: 0.0,
            thresholds: Vec::new(),
            sweep_points: default_sweep_points(),
        }
    }
}

impl EvaluationConfig {
    pub fn lead(&self) -> Duration {
        secs(self.lead_seconds)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningMethod {
    #[default]
    Gp,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    #[serde(default)]
    pub method: TuningMethod,
    pub dimensions: Vec<Dimension>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Points per dimension for grid search.
    #[serde(default)]
    pub grid_resolution: Vec<usize>,
    #[serde(default = "default_grid_cap")]
    pub grid_cap: usize,
}

fn default_budget() -> usize {
    25
}

fn default_grid_cap() -> usize {
    10_000
}

impl TuningConfig {
    pub fn space(&self, seed: u64) -> TuningSpace {
        TuningSpace {
            dimensions: self.dimensions.clone(),
            budget: self.budget,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesConfig {
    #[serde(default = "default_radius")]
    pub codebook_radius: f64,
    #[serde(default = "default_block_seconds")]
    pub block_seconds: f64,
    #[serde(default = "default_clusters")]
    pub k: usize,
}

fn default_radius() -> f64 {
    0.5
}
fn default_block_seconds() -> f64 {
    3600.0
}
fn default_clusters() -> usize {
    2
}

impl Default for ModesConfig {
    fn default() -> Self {
        ModesConfig {
            codebook_radius: default_radius(),
            block_seconds: default_block_seconds(),
            k: default_clusters(),
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.into())),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Sets the dotted key `path` in `doc`, creating tables along the way.
pub fn set_path(doc: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(path, "malformed key path"));
    }
    let mut table = doc;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(parts[..=i].join("."), "is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Applies one `section.key=value` assignment.
pub fn apply_assignment(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(assignment, "expected key=value"))?;
    set_path(doc, key.trim(), parse_value(value.trim()))
}

/// Recursively merges `over` into `base`; tables merge, other values replace.
pub fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::config(origin, e.message().to_string()))
}

fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    parse_table(&text, &path.display().to_string())
}

impl PipelineConfig {
    /// Parses a merged document and validates it.
    pub fn from_table(doc: toml::Table, base_dir: &Path) -> Result<Self> {
        let de = toml::Value::Table(doc);
        let mut cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::config(if key == "." { String::new() } else { key }, e.into_inner().to_string())
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path, assignments: &[String]) -> Result<Self> {
        let mut doc = parse_table(text, "<config>")?;
        for a in assignments {
            apply_assignment(&mut doc, a)?;
        }
        Self::from_table(doc, base_dir)
    }

    /// Loads `path`, merges `overlays` in order, then applies `assignments`.
    pub fn load(path: &Path, overlays: &[PathBuf], assignments: &[String]) -> Result<Self> {
        Ok(Self::load_document(path, overlays, assignments)?.0)
    }

    /// Like [`PipelineConfig::load`], also returning the merged document.
    pub fn load_document(path: &Path, overlays: &[PathBuf], assignments: &[String]) -> Result<(Self, toml::Table)> {
        let mut doc = read_table(path)?;
        for o in overlays {
            merge_tables(&mut doc, read_table(o)?);
        }
        for a in assignments {
            apply_assignment(&mut doc, a)?;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cfg = Self::from_table(doc.clone(), &base)?;
        Ok((cfg, doc))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.run.output_dir)
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(Error::config(
                "config_version",
                format!(
                    "unsupported version {} (expected {CONFIG_VERSION})",
                    self.config_version
                ),
            ));
        }
        for (i, s) in self.run.stages.iter().enumerate() {
            if !STAGES.contains(&s.as_str()) {
                return Err(Error::config(
                    format!("run.stages[{i}]"),
                    format!("unknown stage {s:?}"),
                ));
            }
        }
        let data = self.resolve(&self.ingest.path);
        if !data.is_file() {
            return Err(Error::config(
                "ingest.path",
                format!("{} does not exist", data.display()),
            ));
        }
        if let Some(e) = &self.ingest.events {
            if !self.resolve(e).is_file() {
                return Err(Error::config(
                    "ingest.events",
                    format!("{} does not exist", self.resolve(e).display()),
                ));
            }
        }
        if let Some(s) = &self.alerting.seed_labels {
            if !self.resolve(s).is_file() {
                return Err(Error::config(
                    "alerting.seed_labels",
                    format!("{} does not exist", self.resolve(s).display()),
                ));
            }
        }
        if self.ingest.resample_seconds.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::config("ingest.resample_seconds", "must be positive"));
        }
        if self.ingest.standardize_rows == Some(0) {
            return Err(Error::config("ingest.standardize_rows", "must be positive"));
        }
        if self.smoothing.kernel_length == 0 {
            return Err(Error::config("smoothing.kernel_length", "must be positive"));
        }
        if let Some((f, _)) = self.smoothing.per_feature_overrides.iter().find(|(_, &l)| l == 0) {
            return Err(Error::config(
                format!("smoothing.per_feature_overrides.{f}"),
                "must be positive",
            ));
        }
        for (i, spec) in self.windowing.specs().iter().enumerate() {
            let key = if i == 0 {
                "windowing".to_string()
            } else {
                format!("windowing.additional[{}]", i - 1)
            };
            spec.validate().map_err(|e| Error::config(key, strip(e)))?;
        }
        self.distance
            .validate()
            .map_err(|e| Error::config("distance", strip(e)))?;
        if self.deviation.pruned && self.distance.measure != crate::distances::Measure::EuclideanSlide {
            return Err(Error::config("deviation.pruned", "pruning requires the euclid measure"));
        }
        if self.alerting.threshold.is_nan() {
            return Err(Error::config("alerting.threshold", "is NaN"));
        }
        if !(self.alerting.merge_gap_seconds >= 0.0) {
            return Err(Error::config("alerting.merge_gap_seconds", "must be non-negative"));
        }
        validate_voting(&self.alerting)?;
        if !(self.evaluation.lead_seconds >= 0.0) {
            return Err(Error::config("evaluation.lead_seconds", "must be non-negative"));
        }
        if self.evaluation.thresholds.windows(2).any(|p| !(p[0] <= p[1])) {
            return Err(Error::config("evaluation.thresholds", "must be sorted ascending"));
        }
        if self.evaluation.thresholds.is_empty() && self.evaluation.sweep_points == 0 {
            return Err(Error::config("evaluation.sweep_points", "must be positive"));
        }
        if let Some(t) = &self.tuning {
            self.validate_tuning(t)?;
        }
        if !(self.modes.codebook_radius >= 0.0) {
            return Err(Error::config("modes.codebook_radius", "must be non-negative"));
        }
        if !(self.modes.block_seconds > 0.0) {
            return Err(Error::config("modes.block_seconds", "must be positive"));
        }
        if self.modes.k == 0 {
            return Err(Error::config("modes.k", "must be positive"));
        }
        Ok(())
    }

    fn validate_tuning(&self, t: &TuningConfig) -> Result<()> {
        t.space(self.run.seed)
            .validate()
            .map_err(|e| Error::config("tuning.dimensions", strip(e)))?;
        let doc = toml::Value::try_from(self).map_err(|e| Error::config("tuning", e.to_string()))?;
        for (i, d) in t.dimensions.iter().enumerate() {
            if lookup(&doc, &d.name).is_none() && !TUNABLE_DEFAULTED.contains(&d.name.as_str()) {
                return Err(Error::config(
                    format!("tuning.dimensions[{i}].name"),
                    format!("{} is not a config key", d.name),
                ));
            }
        }
        if t.method == TuningMethod::Grid && t.grid_resolution.len() != t.dimensions.len() {
            return Err(Error::config("tuning.grid_resolution", "need one entry per dimension"));
        }
        if t.method == TuningMethod::Gp && t.budget < t.dimensions.len() + 2 {
            return Err(Error::config("tuning.budget", "must be at least dimensions + 2"));
        }
        Ok(())
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("", e.to_string()))
    }
}

/// Optional keys that may be tuned even when absent from the document.
const TUNABLE_DEFAULTED: [&str; 1] = ["windowing.history_depth"];

fn lookup<'a>(doc: &'a toml::Value, path: &str) -> Option<&'a toml::Value> {
    path.split('.').try_fold(doc, |v, part| v.get(part))
}

fn strip(e: Error) -> String {
    match e {
        Error::InvalidInput(m) => m,
        other => other.to_string(),
    }
}

fn validate_voting(a: &AlertingConfig) -> Result<()> {
    if a.min_votes == 0 {
        return Err(Error::config("alerting.min_votes", "must be at least 1"));
    }
    if a.k < a.min_votes {
        return Err(Error::config(
            "alerting.k",
            format!("must be at least min_votes ({})", a.min_votes),
        ));
    }
    if !(0.0..=1.0).contains(&a.t_anom) {
        return Err(Error::config("alerting.t_anom", "must lie in [0, 1]"));
    }
    if a.t_cutoff.is_nan() {
        return Err(Error::config("alerting.t_cutoff", "is NaN"));
    }
    Ok(())
}

/// A TOML overlay setting each named key to the given value. Integer
/// dimensions are written as integers.
pub fn overlay_document(dimensions: &[Dimension], values: &[f64]) -> Result<String> {
    let mut doc = toml::Table::new();
    for (d, &v) in dimensions.iter().zip(values) {
        let value = match d.kind {
            crate::tuning::ParamKind::Integer => toml::Value::Integer(v.round() as i64),
            crate::tuning::ParamKind::Continuous => toml::Value::Float(v),
        };
        set_path(&mut doc, &d.name, value)?;
    }
    toml::to_string(&doc).map_err(|e| Error::config("", e.to_string()))
}

/// Restriction-mask intervals from a `start,end` CSV, as a config value for
/// `windowing.restriction_mask`.
pub fn mask_file_value(path: &Path) -> Result<toml::Value> {
    let ranges = crate::ingest::load_events(path)?
        .into_iter()
        .map(|e| {
            let mut t = toml::Table::new();
            t.insert("start".into(), toml::Value::String(e.start.to_string()));
            t.insert("end".into(), toml::Value::String(e.end.to_string()));
            toml::Value::Table(t)
        })
        .collect();
    Ok(toml::Value::Array(ranges))
}

/// Per-feature importances from a headed `feature,importance` CSV, as a
/// config value for `distance.importance`.
pub fn importance_file_value(path: &Path) -> Result<toml::Value> {
    let read = || -> Result<toml::Table> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(std::fs::File::open(path)?);
        let mut t = toml::Table::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let (name, raw) = (rec.get(0).unwrap_or(""), rec.get(1).unwrap_or(""));
            let v: f64 = raw.parse().map_err(|_| Error::NonNumeric {
                row: i + 1,
                column: "importance".into(),
                value: raw.into(),
            })?;
            t.insert(name.to_string(), toml::Value::Float(v));
        }
        Ok(t)
    };
    read().map(toml::Value::Table).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(dir: &Path) -> String {
        std::fs::write(dir.join("d.csv"), "timestamp,a\n0,1\n").unwrap();
        r#"
config_version = 1
[ingest]
path = "d.csv"
[windowing]
length = 10
stride = 5
[alerting]
threshold = 0.5
"#
        .to_string()
    }

    #[test]
    fn defaults_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let text = base(dir.path());
        let cfg = PipelineConfig::from_toml_str(&text, dir.path(), &[]).unwrap();
        assert_eq!(cfg.alerting.k, 3);
        assert_eq!(cfg.smoothing.kernel_length, 11);
        let cfg = PipelineConfig::from_toml_str(
            &text,
            dir.path(),
            &[
                "alerting.k=5".into(),
                "distance.measure=dtw".into(),
                "run.output_dir=res".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.alerting.k, 5);
        assert_eq!(cfg.distance.measure, crate::distances::Measure::Dtw);
        assert_eq!(cfg.output_dir(), dir.path().join("res"));
    }

    #[test]
    fn errors_name_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let text = base(dir.path());
        let key = |sets: &[&str]| {
            let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
            PipelineConfig::from_toml_str(&text, dir.path(), &sets)
                .unwrap_err()
                .config_key()
                .map(String::from)
        };
        assert_eq!(key(&["alerting.k=\"many\""]).as_deref(), Some("alerting.k"));
        assert_eq!(key(&["alerting.t_anom=1.5"]).as_deref(), Some("alerting.t_anom"));
        assert_eq!(key(&["windowing.stride=50"]).as_deref(), Some("windowing"));
        assert_eq!(key(&["ingest.path=missing.csv"]).as_deref(), Some("ingest.path"));
        assert_eq!(key(&["config_version=9"]).as_deref(), Some("config_version"));
        assert_eq!(key(&["alerting.bogus=1"]).as_deref(), Some("alerting.bogus"));
        assert_eq!(key(&["distance.measure=cosine"]).as_deref(), Some("distance.measure"));
    }

    #[test]
    fn overlay_round_trip() {
        let dims = vec![
            Dimension::continuous("alerting.t_anom", 0.0, 1.0),
            Dimension::integer("alerting.k", 1, 9),
        ];
        let t_anom = 0.1f64 + 0.2;
        let text = overlay_document(&dims, &[t_anom, 4.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut doc: toml::Table = base(dir.path()).parse().unwrap();
        merge_tables(&mut doc, text.parse().unwrap());
        let cfg = PipelineConfig::from_table(doc, dir.path()).unwrap();
        assert_eq!(cfg.alerting.t_anom.to_bits(), t_anom.to_bits());
        assert_eq!(cfg.alerting.k, 4);
        assert_eq!(cfg.alerting.threshold, 0.5);
    }

    #[test]
    fn tuned_keys_must_exist() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = base(dir.path());
        text.push_str(
            "[tuning]\ndimensions = [{ name = \"alerting.nope\", kind = \"continuous\", lo = 0.0, hi = 1.0 }]\n",
        );
        let err = PipelineConfig::from_toml_str(&text, dir.path(), &[]).unwrap_err();
        assert_eq!(err.config_key(), Some("tuning.dimensions[0].name"));
    }

    #[test]
    fn file_values_render_as_assignments() {
        let dir = tempfile::tempdir().unwrap();
        let mask = dir.path().join("mask.csv");
        std::fs::write(&mask, "start,end\n0,3\n5.5,8\n").unwrap();
        let imp = dir.path().join("imp.csv");
        std::fs::write(&imp, "feature,importance\na,2\nb c,0.5\n").unwrap();
        let text = base(dir.path());
        let sets = vec![
            format!("windowing.restriction_mask={}", mask_file_value(&mask).unwrap()),
            format!("distance.importance={}", importance_file_value(&imp).unwrap()),
        ];
        let cfg = PipelineConfig::from_toml_str(&text, dir.path(), &sets).unwrap();
        let m = cfg.windowing.restriction_mask.unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[1].start.to_string(), "5.5");
        assert_eq!(cfg.distance.importance.unwrap()["b c"], 0.5);
    }
}
