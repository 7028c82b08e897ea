//! Plain CSV/JSON artifacts. Floats are written with Rust's shortest
//! round-trip formatting, so reading a file back yields the same bits.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::deviation::{DeviationEntry, DeviationSeries, Explanation, SentinelPolicy};
use crate::distances::Measure;
use crate::error::{Error, Result};
use crate::ingest::{EventInterval, TimeSeriesFrame};
use crate::time::Timestamp;
use crate::windowing::WindowRef;

/// Serde adapter for `f64` fields that may be infinite (sentinel scores).
/// Finite values are JSON numbers; `inf`, `-inf` and `NaN` are strings.
pub mod float_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Same as [`float_repr`] for optional values.
pub mod opt_float_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::float_repr")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::from(e).in_file(path))
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::from(e).in_file(path))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

const SCORE_HEADER: [&str; 8] = [
    "timestamp",
    "score",
    "spec_id",
    "origin",
    "window_start",
    "match_spec_id",
    "match_origin",
    "match_start",
];

/// One row per entry. Sentinel rows leave the match columns empty.
pub fn write_scores<W: Write>(out: W, series: &DeviationSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORE_HEADER)?;
    for e in &series.entries {
        let m = e.best_match;
        w.write_record([
            e.timestamp.to_string(),
            e.score.to_string(),
            e.window.spec_id.to_string(),
            e.window.origin.to_string(),
            e.window.origin_ts.to_string(),
            opt(m.map(|m| m.spec_id)),
            opt(m.map(|m| m.origin)),
            opt(m.map(|m| m.origin_ts)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field(rec: &csv::StringRecord, i: usize, row: usize) -> Result<&str> {
    rec.get(i)
        .ok_or_else(|| Error::invalid(format!("scores row {row}: missing column {}", SCORE_HEADER[i])))
}

fn num<T: std::str::FromStr>(s: &str, row: usize, col: &str) -> Result<T> {
    s.parse().map_err(|_| Error::NonNumeric {
        row,
        column: col.to_string(),
        value: s.to_string(),
    })
}

fn ts(s: &str, row: usize) -> Result<Timestamp> {
    s.parse().map_err(|_| Error::BadTimestamp {
        row,
        value: s.to_string(),
    })
}

/// Reads a file written by [`write_scores`].
pub fn read_scores<R: Read>(input: R, measure: Measure) -> Result<DeviationSeries> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().ne(SCORE_HEADER) {
        return Err(Error::invalid(format!(
            "scores file must have header {}",
            SCORE_HEADER.join(",")
        )));
    }
    let mut entries = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let window = WindowRef {
            spec_id: num(field(&rec, 2, row)?, row, "spec_id")?,
            origin: num(field(&rec, 3, row)?, row, "origin")?,
            origin_ts: ts(field(&rec, 4, row)?, row)?,
        };
        let best_match = if field(&rec, 5, row)?.is_empty() {
            None
        } else {
            Some(WindowRef {
                spec_id: num(field(&rec, 5, row)?, row, "match_spec_id")?,
                origin: num(field(&rec, 6, row)?, row, "match_origin")?,
                origin_ts: ts(field(&rec, 7, row)?, row)?,
            })
        };
        entries.push(DeviationEntry {
            timestamp: ts(field(&rec, 0, row)?, row)?,
            window,
            score: num(field(&rec, 1, row)?, row, "score")?,
            best_match,
        });
    }
    if entries.windows(2).any(|p| p[1].timestamp <= p[0].timestamp) {
        return Err(Error::invalid("scores file timestamps must be strictly increasing"));
    }
    Ok(DeviationSeries {
        measure,
        sentinel_policy: SentinelPolicy::MeasureMaximum,
        entries,
    })
}

/// Reads the `timestamp` and `score` columns of any CSV (extra columns are
/// ignored), e.g. an external risk-score export.
pub fn read_score_sequence<R: Read>(input: R) -> Result<Vec<(Timestamp, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let (ti, si) = (find("timestamp")?, find("score")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        out.push((
            ts(rec.get(ti).unwrap_or(""), row)?,
            num(rec.get(si).unwrap_or(""), row, "score")?,
        ));
    }
    if out.windows(2).any(|p| p[1].0 <= p[0].0) {
        return Err(Error::invalid("score timestamps must be strictly increasing"));
    }
    Ok(out)
}

/// Long format: `feature,step,target,matched`.
pub fn write_explanation<W: Write>(out: W, e: &Explanation) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "step", "target", "matched"])?;
    for (f, name) in e.features.iter().enumerate() {
        let (t, m) = (&e.target_traces[f], &e.matched_traces[f]);
        for i in 0..t.len().max(m.len()) {
            w.write_record([name.clone(), i.to_string(), opt(t.get(i)), opt(m.get(i))])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a header and rows of pre-formatted fields.
pub fn write_table<W: Write, I, R>(out: W, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a frame as `timestamp,<features...>` CSV, readable by the ingester.
pub fn write_frame<W: Write>(out: W, frame: &TimeSeriesFrame) -> Result<()> {
    let mut header = vec!["timestamp"];
    header.extend(frame.feature_names().iter().map(String::as_str));
    write_table(
        out,
        &header,
        frame
            .timestamps()
            .iter()
            .enumerate()
            .map(|(i, t)| std::iter::once(t.to_string()).chain(frame.row(i).into_iter().map(|v| v.to_string()))),
    )
}

/// Writes events as a `start,end` interval CSV.
pub fn write_events<W: Write>(out: W, events: &[EventInterval]) -> Result<()> {
    write_table(
        out,
        &["start", "end"],
        events.iter().map(|e| [e.start.to_string(), e.end.to_string()]),
    )
}
