use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use contour_core::config::{importance_file_value, mask_file_value, PipelineConfig};
use contour_core::error::Error;
use contour_core::ingest::load_events;
use contour_core::pipeline;
use contour_core::synthetic::{write_alert_scenario, AlertScenarioParams};

#[derive(Parser)]
#[command(
    name = "contour",
    version,
    about = "Pattern-similarity anomaly detection for multivariate time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every window by its distance to the closest preceding window.
    Score(ConfigArgs),
    /// Threshold stored scores into an alert registry.
    Alerts(ConfigArgs),
    /// Label alerts from seed labels by nearest-neighbour voting.
    Vote(ConfigArgs),
    /// Evaluate alerts against annotated events.
    Eval(ConfigArgs),
    /// Join two score files into a risk scatter.
    Scatter(ScatterArgs),
    /// Optimize the configured tuning space.
    Tune(ConfigArgs),
    /// Pattern-word histograms and operating-mode clusters.
    Modes(ConfigArgs),
    /// Run the configured stages in order.
    Pipeline(ConfigArgs),
    /// Write a synthetic dataset with a matching config.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Euclid,
    Dtw,
    Xcorr,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline config file (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overlay file deep-merged over the config; repeatable.
    #[arg(long, value_name = "PATH")]
    overlay: Vec<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (run.output_dir).
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// run.seed
    #[arg(long)]
    seed: Option<u64>,
    /// run.workers
    #[arg(long)]
    workers: Option<usize>,
    /// smoothing.kernel_length
    #[arg(long)]
    smooth_length: Option<usize>,
    /// windowing.length
    #[arg(long)]
    window_length: Option<usize>,
    /// windowing.stride
    #[arg(long)]
    stride: Option<usize>,
    /// windowing.history_depth
    #[arg(long)]
    history_depth: Option<usize>,
    /// Restriction mask as a start,end interval CSV.
    #[arg(long, value_name = "PATH")]
    mask_file: Option<PathBuf>,
    /// distance.measure
    #[arg(long, value_enum)]
    distance: Option<DistanceArg>,
    /// distance.offset_step
    #[arg(long)]
    offset_step: Option<usize>,
    /// distance.top_k_features
    #[arg(long)]
    top_k_features: Option<usize>,
    /// Feature importances as a feature,importance CSV.
    #[arg(long, value_name = "PATH")]
    importance_file: Option<PathBuf>,
    /// alerting.threshold
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct ScatterArgs {
    /// First score file (timestamp,score columns).
    a: PathBuf,
    /// Second score file.
    b: PathBuf,
    /// Event file marking in-event points.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(short, long, default_value = ".")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(short, long)]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 17)]
    seed: u64,
}

/// Failure with its exit status: 2 for configuration problems, 1 otherwise.
struct Failure {
    error: Error,
    config: bool,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let config = error.config_key().is_some();
        Failure { error, config }
    }
}

fn absolute(p: &Path) -> Result<PathBuf, Error> {
    Ok(if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir()?.join(p)
    })
}

impl ConfigArgs {
    fn assignments(&self) -> Result<Vec<String>, Error> {
        let mut out = Vec::new();
        let mut put = |key: &str, value: String| out.push(format!("{key}={value}"));
        if let Some(p) = &self.output_dir {
            let p = absolute(p)?;
            put("run.output_dir", toml_string(&p.to_string_lossy()));
        }
        if let Some(v) = self.seed {
            put("run.seed", v.to_string());
        }
        if let Some(v) = self.workers {
            put("run.workers", v.to_string());
        }
        if let Some(v) = self.smooth_length {
            put("smoothing.kernel_length", v.to_string());
        }
        if let Some(v) = self.window_length {
            put("windowing.length", v.to_string());
        }
        if let Some(v) = self.stride {
            put("windowing.stride", v.to_string());
        }
        if let Some(v) = self.history_depth {
            put("windowing.history_depth", v.to_string());
        }
        if let Some(p) = &self.mask_file {
            put("windowing.restriction_mask", mask_file_value(p)?.to_string());
        }
        if let Some(d) = self.distance {
            let name = match d {
                DistanceArg::Euclid => "euclid",
                DistanceArg::Dtw => "dtw",
                DistanceArg::Xcorr => "xcorr",
            };
            put("distance.measure", toml_string(name));
        }
        if let Some(v) = self.offset_step {
            put("distance.offset_step", v.to_string());
        }
        if let Some(v) = self.top_k_features {
            put("distance.top_k_features", v.to_string());
        }
        if let Some(p) = &self.importance_file {
            put("distance.importance", importance_file_value(p)?.to_string());
        }
        if let Some(v) = self.threshold {
            put("alerting.threshold", format!("{v:?}"));
        }
        // explicit --set wins over the shorthand flags
        out.extend(self.set.iter().cloned());
        Ok(out)
    }

    fn load(&self) -> Result<(PipelineConfig, toml::Table), Failure> {
        let loaded = self
            .assignments()
            .and_then(|sets| PipelineConfig::load_document(&self.config, &self.overlay, &sets));
        let (cfg, doc) = loaded.map_err(|error| Failure { error, config: true })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.workers)
            .build_global()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        std::fs::create_dir_all(cfg.output_dir()).map_err(Error::from)?;
        Ok((cfg, doc))
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn run(cli: Cli) -> Result<String, Failure> {
    let done = |cfg: &PipelineConfig| format!("wrote {}", cfg.output_dir().display());
    Ok(match cli.command {
        Command::Score(a) => {
            let (cfg, _) = a.load()?;
            let s = pipeline::stage_score(&cfg)?;
            format!("{} windows scored; {}", s.len(), done(&cfg))
        }
        Command::Alerts(a) => {
            let (cfg, _) = a.load()?;
            let alerts = pipeline::stage_alerts(&cfg)?;
            format!("{} alerts; {}", alerts.len(), done(&cfg))
        }
        Command::Vote(a) => {
            let (cfg, _) = a.load()?;
            let labeled = pipeline::stage_vote(&cfg)?;
            let tp = labeled
                .iter()
                .filter(|a| a.label.is_some_and(|l| l.is_anomalous()))
                .count();
            format!("{tp} of {} alerts labelled anomalous; {}", labeled.len(), done(&cfg))
        }
        Command::Eval(a) => {
            let (cfg, _) = a.load()?;
            pipeline::stage_eval(&cfg)?;
            done(&cfg)
        }
        Command::Tune(a) => {
            let (cfg, doc) = a.load()?;
            let r = pipeline::stage_tune(&cfg, &doc)?;
            format!(
                "best objective {} after {} evaluations; {}",
                r.best.value,
                r.trace.len(),
                done(&cfg)
            )
        }
        Command::Modes(a) => {
            let (cfg, _) = a.load()?;
            pipeline::stage_modes(&cfg)?;
            done(&cfg)
        }
        Command::Pipeline(a) => {
            let (cfg, doc) = a.load()?;
            pipeline::run_pipeline(&cfg, &doc)?;
            done(&cfg)
        }
        Command::Scatter(a) => {
            let events = match &a.events {
                Some(p) => load_events(p)?,
                None => Vec::new(),
            };
            std::fs::create_dir_all(&a.output_dir).map_err(Error::from)?;
            let sc = pipeline::stage_scatter(&a.a, &a.b, &events, &a.output_dir)?;
            format!("{} points; wrote {}", sc.points.len(), a.output_dir.display())
        }
        Command::Synth(a) => {
            let params = AlertScenarioParams {
                seed: a.seed,
                ..AlertScenarioParams::default()
            };
            let config = write_alert_scenario(&a.output_dir, &params)?;
            format!("wrote {}", config.display())
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure { error, config }) => {
            let record = serde_json::json!({
                "error": if config { "config" } else { "data" },
                "key": error.config_key(),
                "message": error.to_string(),
            });
            eprintln!("{record}");
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
