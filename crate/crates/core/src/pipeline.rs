//! Stage functions behind the CLI subcommands.
//!
//! Each file-based stage reads its inputs from, and writes its artifacts to,
//! the configured output directory, so `pipeline` is literally the
//! subcommands run in sequence. The in-memory helpers (`prepare`,
//! `compute_scores`, ...) are what the stages and the tuner share.

use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::alerting::{
    apply_seed_labels, bootstrap_labels, extract_alerts, filter_alerts, read_registry, read_seed_labels,
    write_registry, Alert, SeedLabel,
};
use crate::config::{overlay_document, set_path, PipelineConfig, TuningMethod};
use crate::deviation::{explain, merge_spec_scores, score_windows, score_windows_pruned, DeviationSeries};
use crate::error::{Error, Result};
use crate::evaluation::{default_thresholds, evaluate, risk_scatter, threshold_sweep, EvalReport, RiskScatter};
use crate::ingest::{self, resample_linear, EventInterval, TimeSeriesFrame};
use crate::modes::{build_codebook, cluster_modes, word_frequencies};
use crate::normalize::Standardizer;
use crate::report::{self, create, open, write_json, write_table};
use crate::smoothing::smooth;
use crate::time::secs;
use crate::tuning::{
    decision_sweep, gp_optimize, grid_search, trace_table, voting_config_with, LabelingScenario, ObjectiveValue,
    ParamKind, TuningResult,
};
use crate::windowing::{slice_windows, Window, WindowCatalog, WindowSpec};

/// Artifact file names inside the output directory.
pub mod artifacts {
    pub const SCORES: &str = "scores.csv";
    pub const EXPLANATIONS: &str = "explanations.csv";
    pub const EXPLANATION_DIR: &str = "explanations";
    pub const ALERTS: &str = "alerts.jsonl";
    pub const LABELED: &str = "labeled.jsonl";
    pub const EMITTED: &str = "emitted.jsonl";
    pub const SUPPRESSED: &str = "suppressed.jsonl";
    pub const EVAL: &str = "eval.json";
    pub const CURVES: &str = "curves.csv";
    pub const CODEBOOK: &str = "codebook.csv";
    pub const HISTOGRAM: &str = "histogram.csv";
    pub const MODES: &str = "modes.csv";
    pub const TUNE_TRACE: &str = "tune_trace.csv";
    pub const TUNE_RESULT: &str = "tune.json";
    pub const TUNED_OVERLAY: &str = "tuned.toml";
    pub const SCATTER: &str = "scatter.csv";
    pub const SCATTER_SUMMARY: &str = "scatter_summary.json";
    pub const EFFECTIVE_CONFIG: &str = "config.effective.toml";
}

/// Smoothed frame and its windows, one list per window spec.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub frame: Arc<TimeSeriesFrame>,
    pub specs: Vec<WindowSpec>,
    pub windows: Vec<Vec<Window>>,
    pub catalog: WindowCatalog,
}

pub fn load_frame(cfg: &PipelineConfig) -> Result<TimeSeriesFrame> {
    let mut frame = ingest::load_csv(cfg.resolve(&cfg.ingest.path), &cfg.ingest.csv_options())?;
    if let Some(period) = cfg.ingest.resample_seconds {
        frame = resample_linear(&frame, secs(period))?;
    }
    if let Some(rows) = cfg.ingest.standardize_rows {
        frame = Standardizer::fit(&frame, rows)?.apply(&frame)?;
    }
    Ok(frame)
}

fn check_against_data(cfg: &PipelineConfig, frame: &TimeSeriesFrame) -> Result<()> {
    for (i, spec) in cfg.windowing.specs().iter().enumerate() {
        let key = if i == 0 {
            "windowing.feature_subset".into()
        } else {
            format!("windowing.additional[{}].feature_subset", i - 1)
        };
        let n = match &spec.feature_subset {
            Some(subset) => {
                if let Some(f) = subset.iter().find(|f| frame.feature_index(f).is_none()) {
                    return Err(Error::config(key, format!("unknown feature {f:?}")));
                }
                subset.len()
            }
            None => frame.n_features(),
        };
        if cfg.distance.top_k_features.is_some_and(|k| k > n) {
            return Err(Error::config(
                "distance.top_k_features",
                format!("exceeds the {n} features available to window spec {i}"),
            ));
        }
    }
    for f in cfg.smoothing.per_feature_overrides.keys() {
        if frame.feature_index(f).is_none() {
            return Err(Error::config(
                format!("smoothing.per_feature_overrides.{f}"),
                "unknown feature",
            ));
        }
    }
    Ok(())
}

pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    let raw = load_frame(cfg)?;
    check_against_data(cfg, &raw)?;
    let frame = Arc::new(smooth(&raw, &cfg.smoothing)?);
    let specs = cfg.windowing.specs();
    let windows = specs
        .iter()
        .map(|s| slice_windows(&frame, s))
        .collect::<Result<Vec<_>>>()?;
    if windows.iter().all(Vec::is_empty) {
        return Err(Error::invalid("the series is shorter than every window"));
    }
    let catalog = WindowCatalog::from_windows(windows.iter().flatten());
    Ok(Prepared {
        frame,
        specs,
        windows,
        catalog,
    })
}

pub fn compute_scores(cfg: &PipelineConfig, p: &Prepared) -> Result<DeviationSeries> {
    let series = p
        .specs
        .iter()
        .zip(&p.windows)
        .filter(|(_, w)| !w.is_empty())
        .map(|(spec, ws)| {
            if cfg.deviation.pruned {
                score_windows_pruned(ws, &cfg.distance, spec.history_depth)
            } else {
                score_windows(ws, &cfg.distance, spec.history_depth)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if series.len() == 1 {
        Ok(series.into_iter().next().expect("one series"))
    } else {
        merge_spec_scores(&series, cfg.deviation.merge_policy)
    }
}

/// The series alerts are extracted from (sentinels dropped when configured).
pub fn alert_series(cfg: &PipelineConfig, scores: &DeviationSeries) -> DeviationSeries {
    let mut s = scores.clone();
    if cfg.alerting.skip_sentinels {
        s.entries.retain(|e| !e.is_sentinel());
    }
    s
}

pub fn compute_alerts(cfg: &PipelineConfig, scores: &DeviationSeries) -> Vec<Alert> {
    extract_alerts(
        &alert_series(cfg, scores),
        cfg.alerting.threshold,
        cfg.alerting.merge_gap(),
    )
}

pub fn load_events(cfg: &PipelineConfig) -> Result<Vec<EventInterval>> {
    match &cfg.ingest.events {
        Some(p) => ingest::load_events(cfg.resolve(p)),
        None => Ok(Vec::new()),
    }
}

pub fn load_seed_labels(cfg: &PipelineConfig) -> Result<Vec<SeedLabel>> {
    match &cfg.alerting.seed_labels {
        Some(p) => {
            let path = cfg.resolve(p);
            read_seed_labels(open(&path)?).map_err(|e| e.in_file(path))
        }
        None => Ok(Vec::new()),
    }
}

/// Seed-labelled alerts and the rest, ready for bootstrapping.
pub fn split_seed(cfg: &PipelineConfig, alerts: &[Alert]) -> Result<(Vec<Alert>, Vec<Alert>)> {
    Ok(apply_seed_labels(alerts, &load_seed_labels(cfg)?))
}

pub fn label_alerts(cfg: &PipelineConfig, alerts: &[Alert], catalog: &WindowCatalog) -> Result<Vec<Alert>> {
    let (seed, rest) = split_seed(cfg, alerts)?;
    bootstrap_labels(&seed, &rest, catalog, &cfg.distance, &cfg.alerting.voting())
}

/// The tuning objective for `cfg`, computed from scratch.
pub fn evaluate_config(cfg: &PipelineConfig) -> Result<ObjectiveValue> {
    let p = prepare(cfg)?;
    let scores = compute_scores(cfg, &p)?;
    let alerts = compute_alerts(cfg, &scores);
    let labeled = label_alerts(cfg, &alerts, &p.catalog)?;
    Ok(decision_sweep(&labeled, &load_events(cfg)?, cfg.evaluation.lead()))
}

fn out(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.output_dir().join(name)
}

fn read_registry_file(path: &Path) -> Result<Vec<Alert>> {
    read_registry(BufReader::new(open(path)?)).map_err(|e| e.in_file(path))
}

fn write_registry_file(path: &Path, alerts: &[Alert]) -> Result<()> {
    let mut w = create(path)?;
    write_registry(&mut w, alerts)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

pub fn read_scores_file(cfg: &PipelineConfig, path: &Path) -> Result<DeviationSeries> {
    report::read_scores(open(path)?, cfg.distance.measure).map_err(|e| e.in_file(path))
}

/// `score`: deviation scores plus match explanations for the top windows.
pub fn stage_score(cfg: &PipelineConfig) -> Result<DeviationSeries> {
    let p = prepare(cfg)?;
    let scores = compute_scores(cfg, &p)?;
    report::write_scores(create(&out(cfg, artifacts::SCORES))?, &scores)?;

    let mut ranked: Vec<usize> = (0..scores.len())
        .filter(|&i| !scores.entries[i].is_sentinel())
        .collect();
    ranked.sort_by(|&a, &b| {
        scores.entries[b]
            .score
            .total_cmp(&scores.entries[a].score)
            .then(a.cmp(&b))
    });
    ranked.truncate(cfg.deviation.explain_top);
    let mut index = Vec::new();
    for (rank, &i) in ranked.iter().enumerate() {
        let e = &scores.entries[i];
        let matched = e.best_match.expect("non-sentinel");
        let ex = explain(
            p.catalog.resolve(&e.window)?,
            p.catalog.resolve(&matched)?,
            &cfg.distance,
        )?;
        let name = format!("{}/explain_{}.csv", artifacts::EXPLANATION_DIR, rank + 1);
        report::write_explanation(create(&out(cfg, &name))?, &ex)?;
        index.push(vec![
            (rank + 1).to_string(),
            e.timestamp.to_string(),
            e.score.to_string(),
            e.window.origin_ts.to_string(),
            matched.origin_ts.to_string(),
            name,
        ]);
    }
    write_table(
        create(&out(cfg, artifacts::EXPLANATIONS))?,
        &["rank", "timestamp", "score", "window_start", "match_start", "file"],
        index,
    )?;
    Ok(scores)
}

/// `alerts`: thresholded runs of the stored scores.
pub fn stage_alerts(cfg: &PipelineConfig) -> Result<Vec<Alert>> {
    let scores = read_scores_file(cfg, &out(cfg, artifacts::SCORES))?;
    let alerts = compute_alerts(cfg, &scores);
    write_registry_file(&out(cfg, artifacts::ALERTS), &alerts)?;
    Ok(alerts)
}

/// `vote`: seed labels plus majority-vote propagation, then filtering.
pub fn stage_vote(cfg: &PipelineConfig) -> Result<Vec<Alert>> {
    let alerts = read_registry_file(&out(cfg, artifacts::ALERTS))?;
    let p = prepare(cfg)?;
    let labeled = label_alerts(cfg, &alerts, &p.catalog)?;
    let f = filter_alerts(&labeled)?;
    write_registry_file(&out(cfg, artifacts::LABELED), &labeled)?;
    write_registry_file(&out(cfg, artifacts::EMITTED), &f.emitted)?;
    write_registry_file(&out(cfg, artifacts::SUPPRESSED), &f.suppressed)?;
    Ok(labeled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    /// All thresholded alerts, with the threshold-sweep curves.
    pub raw: EvalReport,
    /// Alerts left after vote filtering.
    pub filtered: Option<EvalReport>,
    /// Tuning objective of the labelled alerts.
    pub objective: Option<ObjectiveValue>,
}

/// `eval`: reports for raw and filtered alerts, plus threshold curves.
pub fn stage_eval(cfg: &PipelineConfig) -> Result<EvalOutput> {
    let scores = read_scores_file(cfg, &out(cfg, artifacts::SCORES))?;
    let alerts = read_registry_file(&out(cfg, artifacts::ALERTS))?;
    let events = load_events(cfg)?;
    let lead = cfg.evaluation.lead();

    let series = alert_series(cfg, &scores);
    let thresholds = if cfg.evaluation.thresholds.is_empty() {
        default_thresholds(&series, cfg.evaluation.sweep_points)
    } else {
        cfg.evaluation.thresholds.clone()
    };
    let mut raw = evaluate(&alerts, &events, lead);
    if !thresholds.is_empty() {
        raw.curves = threshold_sweep(&series, &events, &thresholds, cfg.alerting.merge_gap(), lead)?;
    }

    let labeled_path = out(cfg, artifacts::LABELED);
    let (filtered, objective) = if labeled_path.is_file() {
        let labeled = read_registry_file(&labeled_path)?;
        let emitted = filter_alerts(&labeled)?.emitted;
        let objective = (!events.is_empty()).then(|| decision_sweep(&labeled, &events, lead));
        (Some(evaluate(&emitted, &events, lead)), objective)
    } else {
        (None, None)
    };

    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    write_table(
        create(&out(cfg, artifacts::CURVES))?,
        &[
            "threshold",
            "event_recall",
            "alert_fpr",
            "alert_tpr",
            "alerts",
            "true_alerts",
            "false_alerts",
            "events_recalled",
        ],
        raw.curves.iter().map(|c| {
            vec![
                c.threshold.to_string(),
                opt(c.event_recall),
                opt(c.alert_fpr),
                opt(c.alert_tpr),
                c.counts.alerts_total.to_string(),
                c.counts.alerts_true.to_string(),
                c.counts.alerts_false.to_string(),
                c.counts.events_recalled.to_string(),
            ]
        }),
    )?;
    let result = EvalOutput {
        raw,
        filtered,
        objective,
    };
    write_json(&out(cfg, artifacts::EVAL), &result)?;
    Ok(result)
}

/// `modes`: codebook over the primary spec's windows, per-block word counts
/// and their k-means clustering.
pub fn stage_modes(cfg: &PipelineConfig) -> Result<()> {
    let p = prepare(cfg)?;
    let windows = &p.windows[0];
    let codebook = build_codebook(windows, &cfg.distance, cfg.modes.codebook_radius)?;
    let blocks = word_frequencies(windows, &codebook, secs(cfg.modes.block_seconds))?;
    let modes = cluster_modes(&blocks, cfg.modes.k, cfg.run.seed)?;

    write_table(
        create(&out(cfg, artifacts::CODEBOOK))?,
        &["word", "window_start", "window_end"],
        codebook
            .exemplars
            .iter()
            .enumerate()
            .map(|(i, w)| vec![i.to_string(), w.start_ts().to_string(), w.end_ts().to_string()]),
    )?;
    let mut header: Vec<String> = vec!["block_start".into(), "block_end".into()];
    header.extend((0..codebook.exemplars.len()).map(|i| format!("word_{i}")));
    header.push("overflow".into());
    let hist_header: Vec<&str> = header.iter().map(String::as_str).collect();
    let row = |b: &crate::modes::FrequencyBlock| {
        let mut r = vec![b.interval.start.to_string(), b.interval.end.to_string()];
        r.extend(b.counts.iter().map(usize::to_string));
        r.push(b.overflow.to_string());
        r
    };
    write_table(
        create(&out(cfg, artifacts::HISTOGRAM))?,
        &hist_header,
        blocks.iter().map(row),
    )?;
    let mut mode_header = hist_header.clone();
    mode_header.push("cluster");
    write_table(
        create(&out(cfg, artifacts::MODES))?,
        &mode_header,
        blocks.iter().zip(&modes.blocks).map(|(b, m)| {
            let mut r = row(b);
            r.push(m.cluster.to_string());
            r
        }),
    )?;
    Ok(())
}

const VOTING_KEYS: [&str; 4] = [
    "alerting.t_cutoff",
    "alerting.k",
    "alerting.t_anom",
    "alerting.min_votes",
];

/// Runs the configured optimizer. When only voting parameters are tuned the
/// scores and alerts are computed once; otherwise every evaluation reruns the
/// pipeline on the document with the parameters substituted.
pub fn tune(cfg: &PipelineConfig, doc: &toml::Table) -> Result<TuningResult> {
    let t = cfg
        .tuning
        .as_ref()
        .ok_or_else(|| Error::config("tuning", "section is missing"))?;
    let space = t.space(cfg.run.seed);
    let names = space.names();

    let run = |objective: &(dyn Fn(&[f64]) -> ObjectiveValue + Sync)| match t.method {
        TuningMethod::Gp => gp_optimize(&space, objective),
        TuningMethod::Grid => grid_search(&space, &t.grid_resolution, t.grid_cap, objective),
    };

    if names.iter().all(|n| VOTING_KEYS.contains(&n.as_str())) {
        let p = prepare(cfg)?;
        let scores = compute_scores(cfg, &p)?;
        let alerts = compute_alerts(cfg, &scores);
        let (seed, unlabeled) = split_seed(cfg, &alerts)?;
        let scenario = LabelingScenario {
            seed,
            unlabeled,
            catalog: p.catalog,
            events: load_events(cfg)?,
            dist: cfg.distance.clone(),
            lead: cfg.evaluation.lead(),
        };
        let base = cfg.alerting.voting();
        run(&|x: &[f64]| match voting_config_with(&base, &names, x) {
            Ok(v) => scenario.objective(&v),
            Err(e) => ObjectiveValue::failed(e),
        })
    } else {
        run(&|x: &[f64]| {
            let attempt = || -> Result<ObjectiveValue> {
                let mut d = doc.clone();
                for (dim, &v) in space.dimensions.iter().zip(x) {
                    let value = match dim.kind {
                        ParamKind::Integer => toml::Value::Integer(v.round() as i64),
                        ParamKind::Continuous => toml::Value::Float(v),
                    };
                    set_path(&mut d, &dim.name, value)?;
                }
                evaluate_config(&PipelineConfig::from_table(d, &cfg.base_dir)?)
            };
            attempt().unwrap_or_else(ObjectiveValue::failed)
        })
    }
}

/// `tune`: trace CSV, result JSON and an overlay with the incumbent.
pub fn stage_tune(cfg: &PipelineConfig, doc: &toml::Table) -> Result<TuningResult> {
    let result = tune(cfg, doc)?;
    let (header, rows) = trace_table(&result);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(create(&out(cfg, artifacts::TUNE_TRACE))?, &header, rows)?;
    write_json(&out(cfg, artifacts::TUNE_RESULT), &result)?;
    let dims = &cfg.tuning.as_ref().expect("checked by tune").dimensions;
    let overlay = overlay_document(dims, &result.best_params)?;
    let mut w = create(&out(cfg, artifacts::TUNED_OVERLAY))?;
    std::io::Write::write_all(&mut w, overlay.as_bytes())?;
    std::io::Write::flush(&mut w)?;
    Ok(result)
}

/// `scatter`: two score files joined on a common time axis.
pub fn stage_scatter(
    series_a: &Path,
    series_b: &Path,
    events: &[EventInterval],
    out_dir: &Path,
) -> Result<RiskScatter> {
    let read = |p: &Path| report::read_score_sequence(open(p)?).map_err(|e| e.in_file(p));
    let sc = risk_scatter(&read(series_a)?, &read(series_b)?, events)?;
    write_table(
        create(&out_dir.join(artifacts::SCATTER))?,
        &[
            "timestamp",
            "score_a",
            "score_b",
            "in_event",
            "percentile_a",
            "percentile_b",
        ],
        sc.points.iter().map(|p| {
            vec![
                p.timestamp.to_string(),
                p.score_a.to_string(),
                p.score_b.to_string(),
                p.in_event.to_string(),
                p.percentile_a.to_string(),
                p.percentile_b.to_string(),
            ]
        }),
    )?;
    write_json(&out_dir.join(artifacts::SCATTER_SUMMARY), &sc.summary)?;
    Ok(sc)
}

/// Runs `cfg.run.stages` in order and records the effective config.
pub fn run_pipeline(cfg: &PipelineConfig, doc: &toml::Table) -> Result<()> {
    let effective = cfg.to_toml()?;
    let mut w = create(&out(cfg, artifacts::EFFECTIVE_CONFIG))?;
    std::io::Write::write_all(&mut w, effective.as_bytes())?;
    std::io::Write::flush(&mut w)?;
    for stage in &cfg.run.stages {
        log::info!("stage {stage}");
        match stage.as_str() {
            "score" => stage_score(cfg).map(drop)?,
            "alerts" => stage_alerts(cfg).map(drop)?,
            "vote" => stage_vote(cfg).map(drop)?,
            "eval" => stage_eval(cfg).map(drop)?,
            "modes" => stage_modes(cfg)?,
            "tune" => stage_tune(cfg, doc).map(drop)?,
            other => return Err(Error::config("run.stages", format!("unknown stage {other:?}"))),
        }
    }
    Ok(())
}
