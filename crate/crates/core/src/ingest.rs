//! Loading, validating and resampling multivariate time series, and turning
//! point labels into event intervals.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{duration_nanos, Timestamp};

/// A timestamped `rows × k` matrix of reals with named columns.
///
/// Logically row-major (one row per instant); stored column-major so that a
/// window's per-feature trace is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    timestamps: Vec<Timestamp>,
    columns: Vec<Vec<f64>>,
    feature_names: Vec<String>,
}

impl TimeSeriesFrame {
    /// Builds a frame from rows. Rows must already be strictly time-ordered.
    pub fn from_rows(timestamps: Vec<Timestamp>, feature_names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != timestamps.len() {
            return Err(Error::invalid(format!(
                "{} timestamps but {} rows",
                timestamps.len(),
                rows.len()
            )));
        }
        let k = feature_names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); k];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(format!(
                    "row {i} has {} values, expected {k}",
                    row.len()
                )));
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Self::from_columns(timestamps, feature_names, columns)
    }

    pub fn from_columns(
        timestamps: Vec<Timestamp>,
        feature_names: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if columns.len() != feature_names.len() {
            return Err(Error::invalid(format!(
                "{} feature names but {} columns",
                feature_names.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate feature name {name:?}")));
            }
        }
        for (name, col) in feature_names.iter().zip(&columns) {
            if col.len() != timestamps.len() {
                return Err(Error::invalid(format!(
                    "column {name:?} has {} values, expected {}",
                    col.len(),
                    timestamps.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("column {name:?} has non-finite values")));
            }
        }
        for pair in timestamps.windows(2) {
            if pair[1] == pair[0] {
                return Err(Error::DuplicateTimestamp(pair[0]));
            }
            if pair[1] < pair[0] {
                return Err(Error::invalid(format!("timestamps not increasing at {}", pair[1])));
            }
        }
        Ok(TimeSeriesFrame {
            timestamps,
            columns,
            feature_names,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[Timestamp] {
        &self.timestamps
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn column(&self, feature: usize) -> &[f64] {
        &self.columns[feature]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature][row]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    /// First `n` rows.
    pub fn prefix(&self, n: usize) -> TimeSeriesFrame {
        let n = n.min(self.n_rows());
        TimeSeriesFrame {
            timestamps: self.timestamps[..n].to_vec(),
            columns: self.columns.iter().map(|c| c[..n].to_vec()).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Same timestamps and names, new column data.
    pub(crate) fn with_columns(&self, columns: Vec<Vec<f64>>) -> TimeSeriesFrame {
        debug_assert_eq!(columns.len(), self.n_features());
        TimeSeriesFrame {
            timestamps: self.timestamps.clone(),
            columns,
            feature_names: self.feature_names.clone(),
        }
    }
}

/// What to do with empty cells.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Linear interpolation in time between the nearest observed neighbours.
    Interpolate,
    DropRow,
    #[default]
    Error,
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub timestamp_column: String,
    /// Columns to keep, in this order. `None` keeps every non-timestamp column.
    pub feature_columns: Option<Vec<String>>,
    pub missing: MissingPolicy,
}

impl CsvOptions {
    pub fn new(timestamp_column: impl Into<String>) -> Self {
        CsvOptions {
            timestamp_column: timestamp_column.into(),
            feature_columns: None,
            missing: MissingPolicy::Error,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<TimeSeriesFrame> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::from(e).in_file(path))?;
    read_csv(file, options).map_err(|e| e.in_file(path))
}

/// Parses a frame from CSV text. Rows are sorted by timestamp; duplicate
/// instants are rejected.
pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<TimeSeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let ts_idx = find(&options.timestamp_column)?;
    let feature_names: Vec<String> = match &options.feature_columns {
        Some(cols) => cols.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != ts_idx)
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let feature_idx = feature_names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;

    // (timestamp, row values, 1-based data row number)
    let mut rows: Vec<(Timestamp, Vec<Option<f64>>, usize)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let raw_ts = record.get(ts_idx).unwrap_or("");
        let ts: Timestamp = raw_ts.parse().map_err(|_| Error::BadTimestamp {
            row: row_no,
            value: raw_ts.to_string(),
        })?;
        let mut values = Vec::with_capacity(feature_idx.len());
        for (&ci, name) in feature_idx.iter().zip(&feature_names) {
            let cell = record.get(ci).unwrap_or("");
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell.eq_ignore_ascii_case("na") {
                values.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row: row_no,
                column: name.clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonNumeric {
                    row: row_no,
                    column: name.clone(),
                    value: cell.to_string(),
                });
            }
            values.push(Some(v));
        }
        rows.push((ts, values, row_no));
    }

    rows.sort_by_key(|r| r.0);
    if let Some(pair) = rows.windows(2).find(|p| p[0].0 == p[1].0) {
        return Err(Error::DuplicateTimestamp(pair[0].0));
    }

    match options.missing {
        MissingPolicy::Error => {
            for (_, values, row_no) in &rows {
                if let Some(j) = values.iter().position(Option::is_none) {
                    return Err(Error::MissingValue {
                        row: *row_no,
                        column: feature_names[j].clone(),
                    });
                }
            }
        }
        MissingPolicy::DropRow => rows.retain(|r| r.1.iter().all(Option::is_some)),
        MissingPolicy::Interpolate => {}
    }

    let timestamps: Vec<Timestamp> = rows.iter().map(|r| r.0).collect();
    let mut columns = Vec::with_capacity(feature_names.len());
    for (j, name) in feature_names.iter().enumerate() {
        let raw: Vec<Option<f64>> = rows.iter().map(|r| r.1[j]).collect();
        let col = fill_gaps(&timestamps, &raw).map_err(|i| Error::MissingValue {
            row: rows[i].2,
            column: name.clone(),
        })?;
        columns.push(col);
    }
    TimeSeriesFrame::from_columns(timestamps, feature_names, columns)
}

/// Linear interpolation of interior gaps. Returns the index of the first
/// missing value that has no observation on one side.
fn fill_gaps(timestamps: &[Timestamp], raw: &[Option<f64>]) -> std::result::Result<Vec<f64>, usize> {
    let mut out = Vec::with_capacity(raw.len());
    let mut prev: Option<usize> = None;
    for i in 0..raw.len() {
        match raw[i] {
            Some(v) => {
                out.push(v);
                prev = Some(i);
            }
            None => {
                let left = prev.ok_or(i)?;
                let right = (i + 1..raw.len()).find(|&j| raw[j].is_some()).ok_or(i)?;
                let (a, b) = (raw[left].unwrap_or_default(), raw[right].unwrap_or_default());
                let frac = timestamps[i].nanos_since(timestamps[left]) as f64
                    / timestamps[right].nanos_since(timestamps[left]) as f64;
                out.push(a + (b - a) * frac);
            }
        }
    }
    Ok(out)
}

/// Resamples onto the grid `first, first + period, …` clipped to the last
/// observed instant. Values are linearly interpolated between the two
/// bracketing rows; rows that fall on the grid are copied exactly.
pub fn resample_linear(frame: &TimeSeriesFrame, period: Duration) -> Result<TimeSeriesFrame> {
    let step = duration_nanos(period);
    if step <= 0 {
        return Err(Error::invalid("resample period must be positive"));
    }
    if frame.n_rows() < 2 {
        return Err(Error::invalid("resampling needs at least two rows"));
    }
    let ts = frame.timestamps();
    let first = ts[0];
    let last = ts[ts.len() - 1];
    let n_grid = (last.nanos_since(first) / step) as usize + 1;

    let mut grid = Vec::with_capacity(n_grid);
    // (left bracket index, fraction toward the right bracket)
    let mut brackets = Vec::with_capacity(n_grid);
    let mut left = 0usize;
    for g in 0..n_grid {
        let t = Timestamp(first.nanos() + g as i64 * step);
        while left + 1 < ts.len() && ts[left + 1] <= t {
            left += 1;
        }
        let frac = if ts[left] == t || left + 1 == ts.len() {
            0.0
        } else {
            t.nanos_since(ts[left]) as f64 / ts[left + 1].nanos_since(ts[left]) as f64
        };
        grid.push(t);
        brackets.push((left, frac));
    }

    let columns = frame
        .columns()
        .iter()
        .map(|col| {
            brackets
                .iter()
                .map(|&(l, frac)| {
                    if frac == 0.0 {
                        col[l]
                    } else {
                        col[l] + (col[l + 1] - col[l]) * frac
                    }
                })
                .collect()
        })
        .collect();
    TimeSeriesFrame::from_columns(grid, frame.feature_names().to_vec(), columns)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSource {
    HumanAnnotation,
    DerivedFromPointLabels,
}

/// A closed ground-truth interval `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventInterval {
    pub start: Timestamp,
    pub end: Timestamp,
    pub source: EventSource,
}

impl EventInterval {
    pub fn new(start: Timestamp, end: Timestamp, source: EventSource) -> Result<Self> {
        if start > end {
            return Err(Error::invalid(format!("event start {start} after end {end}")));
        }
        Ok(EventInterval { start, end, source })
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t <= self.end
    }
}

/// One interval per maximal run of positive labels.
pub fn events_from_point_labels(labels: &[bool], timestamps: &[Timestamp]) -> Result<Vec<EventInterval>> {
    if labels.len() != timestamps.len() {
        return Err(Error::invalid(format!(
            "{} labels but {} timestamps",
            labels.len(),
            timestamps.len()
        )));
    }
    let mut events = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, &label) in labels.iter().enumerate() {
        match (label, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(s)) => {
                events.push(EventInterval {
                    start: timestamps[s],
                    end: timestamps[i - 1],
                    source: EventSource::DerivedFromPointLabels,
                });
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        events.push(EventInterval {
            start: timestamps[s],
            end: timestamps[labels.len() - 1],
            source: EventSource::DerivedFromPointLabels,
        });
    }
    Ok(events)
}

/// Point labels: true where an instant falls inside any event.
pub fn rasterize_events(events: &[EventInterval], timestamps: &[Timestamp]) -> Vec<bool> {
    timestamps
        .iter()
        .map(|&t| events.iter().any(|e| e.contains(t)))
        .collect()
}

/// Sorts intervals by start and rejects overlaps.
pub fn normalize_events(mut events: Vec<EventInterval>) -> Result<Vec<EventInterval>> {
    events.sort_by_key(|e| (e.start, e.end));
    for pair in events.windows(2) {
        if pair[1].start <= pair[0].end {
            return Err(Error::invalid(format!(
                "event intervals [{}, {}] and [{}, {}] overlap",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            )));
        }
    }
    Ok(events)
}

/// Reads an event file: either a `start,end` interval CSV or a
/// `timestamp,label` point-label CSV (detected from the header).
pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<EventInterval>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::from(e).in_file(path))?;
    read_events(file).map_err(|e| e.in_file(path))
}

pub fn read_events<R: Read>(reader: R) -> Result<Vec<EventInterval>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let lower: Vec<String> = headers.iter().map(str::to_ascii_lowercase).collect();
    let is_interval = lower.iter().any(|h| h == "start") && lower.iter().any(|h| h == "end");
    let records = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;

    let parse_ts = |row: usize, raw: &str| {
        raw.parse::<Timestamp>().map_err(|_| Error::BadTimestamp {
            row,
            value: raw.to_string(),
        })
    };

    if is_interval {
        let si = lower.iter().position(|h| h == "start").unwrap_or(0);
        let ei = lower.iter().position(|h| h == "end").unwrap_or(1);
        let mut events = Vec::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let start = parse_ts(i + 1, rec.get(si).unwrap_or(""))?;
            let end = parse_ts(i + 1, rec.get(ei).unwrap_or(""))?;
            events.push(EventInterval::new(start, end, EventSource::HumanAnnotation)?);
        }
        return normalize_events(events);
    }

    if headers.len() < 2 {
        return Err(Error::invalid(
            "event file needs (start,end) or (timestamp,label) columns",
        ));
    }
    let mut points = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let ts = parse_ts(i + 1, rec.get(0).unwrap_or(""))?;
        let raw = rec.get(1).unwrap_or("");
        let label = match raw {
            "1" | "true" | "True" | "TRUE" => true,
            "0" | "false" | "False" | "FALSE" => false,
            _ => {
                return Err(Error::NonNumeric {
                    row: i + 1,
                    column: headers.get(1).unwrap_or("label").to_string(),
                    value: raw.to_string(),
                })
            }
        };
        points.push((ts, label));
    }
    points.sort_by_key(|p| p.0);
    if let Some(pair) = points.windows(2).find(|p| p[0].0 == p[1].0) {
        return Err(Error::DuplicateTimestamp(pair[0].0));
    }
    let (timestamps, labels): (Vec<_>, Vec<_>) = points.into_iter().unzip();
    events_from_point_labels(&labels, &timestamps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::secs;

    fn t(s: i64) -> Timestamp {
        Timestamp::from_secs(s)
    }

    fn opts() -> CsvOptions {
        CsvOptions::new("ts")
    }

    #[test]
    fn loads_three_rows() {
        let csv = "ts,a,b\n0,1,2\n1,3,4\n2,5,6\n";
        let f = read_csv(csv.as_bytes(), &opts()).unwrap();
        assert_eq!(f.n_features(), 2);
        assert_eq!(f.n_rows(), 3);
        assert_eq!(f.column(1), &[2.0, 4.0, 6.0]);
        assert_eq!(f.row(2), vec![5.0, 6.0]);
    }

    #[test]
    fn sorts_rows_by_time() {
        let csv = "ts,a\n2,30\n0,10\n1,20\n";
        let f = read_csv(csv.as_bytes(), &opts()).unwrap();
        assert_eq!(f.timestamps(), &[t(0), t(1), t(2)]);
        assert_eq!(f.column(0), &[10.0, 20.0, 30.0]);
    }

    #[test]
    fn rejects_duplicate_timestamp() {
        let csv = "ts,a\n5,1\n6,2\n5,3\n";
        let err = read_csv(csv.as_bytes(), &opts()).unwrap_err();
        assert!(matches!(err, Error::DuplicateTimestamp(ts) if ts == t(5)));
        assert!(err.to_string().contains('5'));
    }

    #[test]
    fn rejects_bad_cells() {
        let err = read_csv("ts,a\n0,1\nnoon,2\n".as_bytes(), &opts()).unwrap_err();
        assert!(matches!(err, Error::BadTimestamp { row: 2, .. }));
        let err = read_csv("ts,a,b\n0,1,x\n".as_bytes(), &opts()).unwrap_err();
        assert!(matches!(err, Error::NonNumeric { row: 1, ref column, .. } if column == "b"));
    }

    #[test]
    fn selects_columns_in_declared_order() {
        let mut o = opts();
        o.feature_columns = Some(vec!["c".into(), "a".into()]);
        let f = read_csv("ts,a,b,c\n0,1,2,3\n".as_bytes(), &o).unwrap();
        assert_eq!(f.feature_names(), &["c".to_string(), "a".to_string()]);
        assert_eq!(f.row(0), vec![3.0, 1.0]);
        o.feature_columns = Some(vec!["zz".into()]);
        assert!(matches!(
            read_csv("ts,a\n0,1\n".as_bytes(), &o),
            Err(Error::UnknownColumn(_))
        ));
    }

    #[test]
    fn missing_value_policies() {
        let csv = "ts,a\n0,0\n1,\n3,6\n";
        let err = read_csv(csv.as_bytes(), &opts()).unwrap_err();
        assert!(matches!(err, Error::MissingValue { row: 2, .. }));

        let mut o = opts();
        o.missing = MissingPolicy::DropRow;
        let f = read_csv(csv.as_bytes(), &o).unwrap();
        assert_eq!(f.n_rows(), 2);

        o.missing = MissingPolicy::Interpolate;
        let f = read_csv(csv.as_bytes(), &o).unwrap();
        assert_eq!(f.column(0), &[0.0, 2.0, 6.0]);

        let err = read_csv("ts,a\n0,\n1,1\n".as_bytes(), &o).unwrap_err();
        assert!(matches!(err, Error::MissingValue { row: 1, .. }));
    }

    fn single(ts: Vec<i64>, vals: Vec<f64>) -> TimeSeriesFrame {
        TimeSeriesFrame::from_columns(ts.into_iter().map(t).collect(), vec!["x".into()], vec![vals]).unwrap()
    }

    #[test]
    fn resample_upsamples_linearly() {
        let f = single(vec![0, 300], vec![0.0, 5.0]);
        let r = resample_linear(&f, secs(60.0)).unwrap();
        assert_eq!(r.column(0), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(r.timestamps()[5], t(300));
    }

    #[test]
    fn resample_identity_and_constant() {
        let f = single(vec![0, 60, 120, 180], vec![3.0, -1.0, 7.5, 2.0]);
        assert_eq!(resample_linear(&f, secs(60.0)).unwrap(), f);

        let f = single(vec![0, 120], vec![2.0, 2.0]);
        assert_eq!(resample_linear(&f, secs(60.0)).unwrap().column(0), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn resample_never_extrapolates() {
        let f = single(vec![0, 150], vec![0.0, 15.0]);
        let r = resample_linear(&f, secs(60.0)).unwrap();
        assert_eq!(r.timestamps(), &[t(0), t(60), t(120)]);
        assert!(resample_linear(&single(vec![0], vec![1.0]), secs(60.0)).is_err());
        assert!(resample_linear(&f, Duration::ZERO).is_err());
    }

    #[test]
    fn point_labels_to_events() {
        let ts: Vec<_> = (0..5).map(t).collect();
        let ev = events_from_point_labels(&[false, true, true, false, true], &ts).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!((ev[0].start, ev[0].end), (t(1), t(2)));
        assert_eq!((ev[1].start, ev[1].end), (t(4), t(4)));

        assert!(events_from_point_labels(&[false; 5], &ts).unwrap().is_empty());
        let all = events_from_point_labels(&[true; 5], &ts).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!((all[0].start, all[0].end), (t(0), t(4)));

        assert!(events_from_point_labels(&[true], &ts).is_err());
    }

    #[test]
    fn reads_both_event_formats() {
        let ev = read_events("start,end\n10,20\n0,5\n".as_bytes()).unwrap();
        assert_eq!(ev[0].start, t(0));
        assert_eq!(ev[1].end, t(20));
        assert!(read_events("start,end\n0,10\n5,20\n".as_bytes()).is_err());

        let ev = read_events("ts,label\n0,0\n1,1\n2,1\n3,0\n".as_bytes()).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].source, EventSource::DerivedFromPointLabels);
    }
}
