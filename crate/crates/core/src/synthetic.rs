//! Seeded synthetic datasets with known anomalies, used by the acceptance
//! tests and the bundled example data.
//!
//! All generators sample at one-second spacing from t = 0.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alerting::{write_seed_labels, AlertLabel, SeedLabel, SeedTarget};
use crate::error::Result;
use crate::ingest::{EventInterval, EventSource, TimeSeriesFrame};
use crate::report::{write_events, write_frame};
use crate::time::Timestamp;
use crate::windowing::TimeRange;

fn frame(columns: Vec<Vec<f64>>) -> TimeSeriesFrame {
    let n = columns[0].len();
    let names = (0..columns.len()).map(|j| format!("f{j}")).collect();
    let ts = (0..n as i64).map(Timestamp::from_secs).collect();
    TimeSeriesFrame::from_columns(ts, names, columns).expect("generated columns are valid")
}

fn event(start: usize, end: usize) -> EventInterval {
    EventInterval::new(
        Timestamp::from_secs(start as i64),
        Timestamp::from_secs(end as i64),
        EventSource::HumanAnnotation,
    )
    .expect("start ≤ end")
}

fn noise(rng: &mut ChaCha8Rng, amplitude: f64) -> f64 {
    amplitude * (2.0 * rng.random::<f64>() - 1.0)
}

/// Two periodic features (sine and half-amplitude cosine of `period`) with
/// uniform noise.
fn periodic_base(n: usize, period: f64, noise_amp: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut f0 = Vec::with_capacity(n);
    let mut f1 = Vec::with_capacity(n);
    for i in 0..n {
        let phase = TAU * i as f64 / period;
        f0.push(phase.sin() + noise(rng, noise_amp));
        f1.push(0.5 * phase.cos() + noise(rng, noise_amp));
    }
    vec![f0, f1]
}

#[derive(Debug, Clone)]
pub struct InjectedInterval {
    pub frame: TimeSeriesFrame,
    pub event: EventInterval,
}

/// 1000 samples of period-20 oscillation with a 30-sample burst of a faster,
/// larger oscillation starting at sample 600.
pub fn periodic_with_anomaly(seed: u64) -> InjectedInterval {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = periodic_base(1000, 20.0, 0.02, &mut rng);
    let (start, len) = (600, 30);
    for i in 0..len {
        let burst = 1.5 * (TAU * i as f64 / 6.0).sin();
        cols[0][start + i] += burst;
        cols[1][start + i] -= 0.5 * burst;
    }
    InjectedInterval {
        frame: frame(cols),
        event: event(start, start + len - 1),
    }
}

/// Layout of [`alert_scenario`].
#[derive(Debug, Clone, PartialEq)]
pub struct AlertScenarioParams {
    pub true_anomalies: usize,
    pub spurious: usize,
    /// Samples between consecutive injections.
    pub spacing: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for AlertScenarioParams {
    fn default() -> Self {
        AlertScenarioParams {
            true_anomalies: 10,
            spurious: 10,
            spacing: 400,
            noise: 0.01,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlertScenario {
    pub frame: TimeSeriesFrame,
    /// One event per true anomaly.
    pub events: Vec<EventInterval>,
    /// Where the recurring glitches were injected.
    pub spurious: Vec<TimeRange>,
    /// The first glitch, marked false.
    pub seed_labels: Vec<SeedLabel>,
}

/// Period-20 two-feature oscillation with alternating injections every
/// `spacing` samples: true anomalies are bursts on `f1`, each with its own
/// frequency and amplitude; spurious glitches are one identical bump on `f0`.
///
/// With a bounded history depth each glitch looks novel, so a detector alerts
/// on all of them; they are only recognizable as harmless by their similarity
/// to each other.
pub fn alert_scenario(p: &AlertScenarioParams) -> AlertScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let slots = p.true_anomalies + p.spurious;
    let n = (slots + 1) * p.spacing;
    let mut cols = periodic_base(n, 20.0, p.noise, &mut rng);
    let mut events = Vec::new();
    let mut spurious = Vec::new();
    let (mut t_done, mut s_done) = (0, 0);
    for slot in 0..slots {
        let start = (slot + 1) * p.spacing;
        let take_true = (slot % 2 == 0 && t_done < p.true_anomalies) || s_done >= p.spurious;
        if take_true {
            let len = 30;
            // amplitudes alternate around the glitch's score level
            let amp = if t_done % 2 == 0 {
                1.2 + 0.1 * t_done as f64
            } else {
                0.8 + 0.03 * t_done as f64
            };
            let period = 9.0 + t_done as f64;
            for i in 0..len {
                cols[1][start + i] += amp * (TAU * i as f64 / period).sin();
            }
            events.push(event(start, start + len - 1));
            t_done += 1;
        } else {
            let len = 10;
            for i in 0..len {
                cols[0][start + i] += 1.2;
            }
            spurious.push(TimeRange::new(
                Timestamp::from_secs(start as i64),
                Timestamp::from_secs((start + len - 1) as i64),
            ));
            s_done += 1;
        }
    }
    let seed_labels = spurious
        .first()
        .map(|r| SeedLabel {
            target: SeedTarget::Interval(*r),
            label: AlertLabel::FalsePositive,
        })
        .into_iter()
        .collect();
    AlertScenario {
        frame: frame(cols),
        events,
        spurious,
        seed_labels,
    }
}

#[derive(Debug, Clone)]
pub struct PlantedEvents {
    pub frame: TimeSeriesFrame,
    pub events: Vec<EventInterval>,
}

/// 2000 samples of noisy period-25 oscillation with five 40-sample events of
/// different kinds: level shift, frequency change, spike train, flatline and
/// amplitude burst.
pub fn planted_events(seed: u64) -> PlantedEvents {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = periodic_base(2000, 25.0, 0.05, &mut rng);
    let len = 40;
    let starts = [300, 650, 1000, 1350, 1700];
    for (kind, &s) in starts.iter().enumerate() {
        for i in 0..len {
            let t = s + i;
            match kind {
                0 => cols[0][t] += 1.5,
                1 => cols[0][t] = (TAU * t as f64 / 5.0).sin(),
                2 => {
                    if i % 5 == 0 {
                        cols[1][t] += 3.0;
                    }
                }
                3 => {
                    cols[0][t] = 0.0;
                    cols[1][t] = 0.0;
                }
                _ => cols[1][t] *= 4.0,
            }
        }
    }
    PlantedEvents {
        frame: frame(cols),
        events: starts.iter().map(|&s| event(s, s + len - 1)).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct TwoRegime {
    pub frame: TimeSeriesFrame,
    pub block_len: usize,
    /// Planted regime (0 or 1) per block.
    pub regimes: Vec<usize>,
}

/// Blocks of `block_len` samples alternating between a fast sine on `f0`
/// (regime 0) and a slow triangle wave on `f1` (regime 1), in a seeded
/// random order with both regimes present.
pub fn two_regime(blocks: usize, block_len: usize, seed: u64) -> TwoRegime {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut regimes: Vec<usize> = (0..blocks).map(|b| b % 2).collect();
    // perturb the strict alternation while keeping both regimes
    for b in (2..blocks).step_by(3) {
        if rng.random::<bool>() {
            regimes[b] = 1 - regimes[b];
        }
    }
    let n = blocks * block_len;
    let mut f0 = Vec::with_capacity(n);
    let mut f1 = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = match regimes[i / block_len] {
            0 => ((TAU * i as f64 / 10.0).sin(), 0.0),
            _ => (0.0, 2.0 * ((i % 40) as f64 / 40.0 - 0.5).abs() * 2.0 - 1.0),
        };
        f0.push(a + noise(&mut rng, 0.05));
        f1.push(b + noise(&mut rng, 0.05));
    }
    TwoRegime {
        frame: frame(vec![f0, f1]),
        block_len,
        regimes,
    }
}

/// Pipeline config for the files written by [`write_alert_scenario`].
pub const ALERT_SCENARIO_CONFIG: &str = r#"config_version = 1

[run]
seed = 7
output_dir = "out"

[ingest]
path = "series.csv"
events = "events.csv"

[smoothing]
kernel_length = 11

[windowing]
length = 20
stride = 5
history_depth = 30

[distance]
measure = "euclid"

[deviation]
explain_top = 3

[alerting]
threshold = 0.1
merge_gap_seconds = 30.0
seed_labels = "seed_labels.csv"
t_cutoff = 0.1
k = 3
t_anom = 0.5

[evaluation]
lead_seconds = 0.0
sweep_points = 50

[modes]
codebook_radius = 0.5
block_seconds = 400.0
k = 2

[tuning]
method = "gp"
budget = 25
dimensions = [
  { name = "alerting.t_anom", kind = "continuous", lo = 0.0, hi = 1.0 },
  { name = "alerting.k", kind = "integer", lo = 1.0, hi = 20.0 },
]
"#;

/// Writes `series.csv`, `events.csv`, `seed_labels.csv` and `config.toml`
/// for [`alert_scenario`] into `dir`; returns the config path.
pub fn write_alert_scenario(dir: &Path, p: &AlertScenarioParams) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let s = alert_scenario(p);
    let file = |name: &str| -> Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
    let flush = |mut w: BufWriter<File>| -> Result<()> { Ok(w.flush()?) };
    let mut w = file("series.csv")?;
    write_frame(&mut w, &s.frame)?;
    flush(w)?;
    let mut w = file("events.csv")?;
    write_events(&mut w, &s.events)?;
    flush(w)?;
    let mut w = file("seed_labels.csv")?;
    write_seed_labels(&mut w, &s.seed_labels)?;
    flush(w)?;
    let config = dir.join("config.toml");
    std::fs::write(&config, ALERT_SCENARIO_CONFIG)?;
    Ok(config)
}
