//! Dataset loading and synthetic corpus generation.
//!
//! Supported CSV layouts (header required, extra columns ignored):
//!
//! * NAB: `timestamp,value`
//! * Yahoo S5 A1/A2: `timestamp,value,is_anomaly`
//! * Yahoo S5 A3/A4: `timestamps,value,anomaly,...`
//!
//! Timestamps are opaque ordered keys. They must strictly increase, compared
//! numerically when both parse as numbers and lexicographically otherwise.
//! All windowing downstream happens in row-index space.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::nab::probation_length;
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub name: String,
    pub timestamps: Vec<String>,
    pub values: Vec<f64>,
    /// Row indices of labeled anomalies, ascending.
    pub labels: Vec<usize>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn compare_timestamps(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads a NAB or Yahoo S5 CSV file. The series is named after the file stem.
pub fn load_series(path: &Path) -> Result<TimeSeries> {
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let headers = reader
        .headers()
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    if headers.len() < 2 {
        return Err(parse_err(
            1,
            "expected at least `timestamp,value` columns".into(),
        ));
    }
    let column = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
    };
    let ts_col = column(&["timestamp", "timestamps"]).unwrap_or(0);
    let value_col = column(&["value"]).unwrap_or(1);
    let label_col = column(&["is_anomaly", "anomaly"]);

    let mut series = TimeSeries {
        name,
        timestamps: Vec::new(),
        values: Vec::new(),
        labels: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |col: usize| {
            record
                .get(col)
                .ok_or_else(|| parse_err(line, format!("missing column {col}")))
        };
        let ts = field(ts_col)?.to_string();
        let raw_value = field(value_col)?;
        let value: f64 = raw_value
            .parse()
            .map_err(|_| parse_err(line, format!("value {raw_value:?} is not a number")))?;
        if let Some(prev) = series.timestamps.last() {
            if compare_timestamps(prev, &ts) != Ordering::Less {
                return Err(Error::NonMonotoneTimestamps {
                    path: path.to_path_buf(),
                    line,
                    timestamp: ts,
                });
            }
        }
        if let Some(col) = label_col {
            let flag = field(col)?;
            let anomalous = match flag {
                "0" | "0.0" | "false" | "" => false,
                "1" | "1.0" | "true" => true,
                other => {
                    return Err(parse_err(line, format!("label {other:?} is not 0 or 1")));
                }
            };
            if anomalous {
                series.labels.push(series.values.len());
            }
        }
        series.timestamps.push(ts);
        series.values.push(value);
    }
    Ok(series)
}

/// Writes `timestamp,value`, plus `is_anomaly` when the series has labels.
pub fn write_series(series: &TimeSeries, path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let labeled = !series.labels.is_empty();
    if labeled {
        w.write_record(["timestamp", "value", "is_anomaly"])
            .map_err(csv_err)?;
    } else {
        w.write_record(["timestamp", "value"]).map_err(csv_err)?;
    }
    let mut next_label = series.labels.iter().peekable();
    for (i, (ts, v)) in series.timestamps.iter().zip(&series.values).enumerate() {
        let value = v.to_string();
        if labeled {
            let flag = if next_label.peek() == Some(&&i) {
                next_label.next();
                "1"
            } else {
                "0"
            };
            w.write_record([ts.as_str(), &value, flag])
                .map_err(csv_err)?;
        } else {
            w.write_record([ts.as_str(), &value]).map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Canonical key for timestamp matching: trailing fractional zeros
/// (`.000000`) are dropped, nothing else is altered.
fn timestamp_key(ts: &str) -> &str {
    let ts = ts.trim();
    match ts.rfind('.') {
        Some(dot) if ts[dot + 1..].bytes().all(|b| b == b'0') => &ts[..dot],
        _ => ts,
    }
}

/// NAB `combined_labels.json`: dataset path → anomaly timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelsFile {
    entries: BTreeMap<String, Vec<String>>,
}

impl LabelsFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let raw: BTreeMap<String, Vec<serde_json::Value>> =
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
        let entries = raw
            .into_iter()
            .map(|(k, v)| {
                let stamps = v
                    .into_iter()
                    .map(|s| match s {
                        serde_json::Value::String(s) => s,
                        other => other.to_string(),
                    })
                    .collect();
                (k, stamps)
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn from_entries(entries: BTreeMap<String, Vec<String>>) -> Self {
        Self { entries }
    }

    pub fn contains(&self, dataset: &str) -> bool {
        self.entries.contains_key(dataset)
    }

    pub fn datasets(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Resolves the dataset's label timestamps to row indices by exact match.
    pub fn resolve(&self, dataset: &str, series: &TimeSeries) -> Result<Vec<usize>> {
        let stamps = self
            .entries
            .get(dataset)
            .ok_or_else(|| Error::MissingDataset(dataset.to_string()))?;
        let index: BTreeMap<&str, usize> = series
            .timestamps
            .iter()
            .enumerate()
            .map(|(i, ts)| (timestamp_key(ts), i))
            .collect();
        let mut labels = Vec::with_capacity(stamps.len());
        let mut unmatched = Vec::new();
        for s in stamps {
            match index.get(timestamp_key(s)) {
                Some(&i) => labels.push(i),
                None => unmatched.push(s.clone()),
            }
        }
        if !unmatched.is_empty() {
            return Err(Error::UnmatchedLabels {
                dataset: dataset.to_string(),
                unmatched,
            });
        }
        labels.sort_unstable();
        labels.dedup();
        Ok(labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.entries).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text + "\n").map_err(io_err(path))
    }
}

/// Label row indices of `dataset_name` from a labels file.
pub fn load_labels(path: &Path, dataset_name: &str, series: &TimeSeries) -> Result<Vec<usize>> {
    LabelsFile::load(path)?.resolve(dataset_name, series)
}

/// All `*.csv` files below `dir`, as (relative path with `/` separators,
/// absolute path), sorted by relative path.
pub fn list_datasets(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let entry = entry.map_err(io_err(dir))?;
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
            {
                let rel = path
                    .strip_prefix(root)
                    .unwrap_or(&path)
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                out.push((rel, path));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Adds the magnitude at a single row.
    Spike,
    /// Adds the magnitude from the row onward.
    LevelShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedAnomaly {
    pub index: usize,
    pub kind: AnomalyKind,
    pub magnitude: f64,
}

/// Parameters of one synthetic series:
/// `x_t = trend·t + sin(2πt / period) + noise_sd·N(0, 1)` plus anomalies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub name: String,
    pub length: usize,
    pub period: f64,
    pub noise_sd: f64,
    #[serde(default)]
    pub trend: f64,
    #[serde(default)]
    pub anomalies: Vec<InjectedAnomaly>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::invalid(format!(
                "{}: length must be positive",
                self.name
            )));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::invalid(format!(
                "{}: period must be positive",
                self.name
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) || !self.trend.is_finite() {
            return Err(Error::invalid(format!(
                "{}: noise_sd must be nonnegative and trend finite",
                self.name
            )));
        }
        let probation = probation_length(self.length);
        for a in &self.anomalies {
            if a.index < probation || a.index >= self.length {
                return Err(Error::invalid(format!(
                    "{}: anomaly at {} outside [{probation}, {})",
                    self.name, a.index, self.length
                )));
            }
            if !a.magnitude.is_finite() {
                return Err(Error::invalid(format!(
                    "{}: non-finite magnitude",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic synthetic series; timestamps are the row indices.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<TimeSeries> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let mut values: Vec<f64> = (0..spec.length)
        .map(|t| {
            let t = t as f64;
            spec.trend * t
                + (2.0 * std::f64::consts::PI * t / spec.period).sin()
                + spec.noise_sd * rng.normal()
        })
        .collect();
    for a in &spec.anomalies {
        match a.kind {
            AnomalyKind::Spike => values[a.index] += a.magnitude,
            AnomalyKind::LevelShift => values[a.index..].iter_mut().for_each(|v| *v += a.magnitude),
        }
    }
    let mut labels: Vec<usize> = spec.anomalies.iter().map(|a| a.index).collect();
    labels.sort_unstable();
    labels.dedup();
    Ok(TimeSeries {
        name: format!("{}.csv", spec.name),
        timestamps: (0..spec.length).map(|t| t.to_string()).collect(),
        values,
        labels,
    })
}

/// A reproducible corpus of `count` noisy periodic series with drifting
/// level, each carrying one to three spikes or level shifts placed after the
/// detector warm-up region (the first 35% of the series).
pub fn quasi_periodic_corpus(count: usize, length: usize, seed: u64) -> Vec<SyntheticSpec> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|i| {
            let n_anomalies = 1 + rng.below(3) as usize;
            let start = (0.35 * length as f64) as usize;
            let segment = (length - start) / n_anomalies;
            let anomalies = (0..n_anomalies)
                .map(|j| {
                    let lo = start + j * segment + segment / 5;
                    let index = lo + rng.below((segment * 3 / 5).max(1) as u64) as usize;
                    let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
                    if rng.bernoulli(0.7) {
                        InjectedAnomaly {
                            index,
                            kind: AnomalyKind::Spike,
                            magnitude: sign * rng.uniform_range(1.5, 3.0),
                        }
                    } else {
                        InjectedAnomaly {
                            index,
                            kind: AnomalyKind::LevelShift,
                            magnitude: sign * rng.uniform_range(1.0, 2.0),
                        }
                    }
                })
                .collect();
            SyntheticSpec {
                name: format!("synthetic_{i:02}"),
                length,
                period: rng.uniform_range(30.0, 90.0),
                noise_sd: rng.uniform_range(0.05, 0.2),
                trend: rng.uniform_range(-2e-4, 2e-4),
                anomalies,
                seed: rng.next_u64(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn nab_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "a.csv",
            "timestamp,value\n2014-04-01 00:00:00,1.5\n2014-04-01 00:05:00,2\n2014-04-01 00:10:00,-3e2\n",
        );
        let s = load_series(&p).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.values, vec![1.5, 2.0, -300.0]);
        assert!(s.labels.is_empty());
        assert_eq!(s.name, "a.csv");
    }

    #[test]
    fn yahoo_inline_labels() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("timestamp,value,is_anomaly\n");
        for i in 1..=10 {
            body += &format!("{i},{},{}\n", i as f64 * 0.5, if i == 7 { 1 } else { 0 });
        }
        let s = load_series(&write(dir.path(), "real_1.csv", &body)).unwrap();
        assert_eq!(s.labels, vec![6]);
        // Numeric timestamps compare as numbers, so 9 < 10 is monotone.
        assert_eq!(s.timestamps[9], "10");
    }

    #[test]
    fn yahoo_a3_extra_columns() {
        let dir = tempfile::tempdir().unwrap();
        let body = "timestamps,value,anomaly,changepoint,trend,noise\n1,0.5,0,0,0.1,0.2\n2,0.7,1,0,0.1,0.2\n";
        let s = load_series(&write(dir.path(), "A3.csv", body)).unwrap();
        assert_eq!(s.values, vec![0.5, 0.7]);
        assert_eq!(s.labels, vec![1]);
    }

    #[test]
    fn shuffled_timestamps_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = "timestamp,value\n2014-01-01 00:00:00,1\n2014-01-01 00:10:00,1\n2014-01-01 00:05:00,1\n";
        match load_series(&write(dir.path(), "x.csv", body)) {
            Err(Error::NonMonotoneTimestamps { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = "timestamp,value\n1,1.0\n2,abc\n";
        match load_series(&write(dir.path(), "x.csv", body)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn series_with(stamps: &[&str]) -> TimeSeries {
        TimeSeries {
            name: "d.csv".into(),
            timestamps: stamps.iter().map(|s| s.to_string()).collect(),
            values: vec![0.0; stamps.len()],
            labels: vec![],
        }
    }

    #[test]
    fn label_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "labels.json",
            r#"{"cat/d.csv": ["2014-01-01 00:05:00.000000"], "cat/e.csv": [], "cat/f.csv": ["2014-01-01 00:05:01"]}"#,
        );
        let s = series_with(&[
            "2014-01-01 00:00:00",
            "2014-01-01 00:05:00",
            "2014-01-01 00:10:00",
        ]);
        assert_eq!(load_labels(&p, "cat/d.csv", &s).unwrap(), vec![1]);
        assert!(load_labels(&p, "cat/e.csv", &s).unwrap().is_empty());
        assert!(matches!(
            load_labels(&p, "cat/f.csv", &s),
            Err(Error::UnmatchedLabels { .. })
        ));
        assert!(matches!(
            load_labels(&p, "cat/zzz.csv", &s),
            Err(Error::MissingDataset(_))
        ));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec {
            name: "s".into(),
            length: 500,
            period: 50.0,
            noise_sd: 0.0,
            trend: 0.0,
            anomalies: vec![],
            seed: 9,
        };
        let s = generate_synthetic(&spec).unwrap();
        for (t, v) in s.values.iter().enumerate() {
            assert_eq!(*v, (2.0 * std::f64::consts::PI * t as f64 / 50.0).sin());
        }
        let noisy = SyntheticSpec {
            noise_sd: 0.3,
            ..spec.clone()
        };
        assert_eq!(
            generate_synthetic(&noisy).unwrap(),
            generate_synthetic(&noisy).unwrap()
        );
    }

    #[test]
    fn synthetic_anomalies_and_validation() {
        let spec = SyntheticSpec {
            name: "s".into(),
            length: 200,
            period: 20.0,
            noise_sd: 0.0,
            trend: 0.0,
            anomalies: vec![
                InjectedAnomaly {
                    index: 150,
                    kind: AnomalyKind::LevelShift,
                    magnitude: 2.0,
                },
                InjectedAnomaly {
                    index: 100,
                    kind: AnomalyKind::Spike,
                    magnitude: 5.0,
                },
            ],
            seed: 1,
        };
        let s = generate_synthetic(&spec).unwrap();
        assert_eq!(s.labels, vec![100, 150]);
        let base = |t: usize| (2.0 * std::f64::consts::PI * t as f64 / 20.0).sin();
        assert_eq!(s.values[100], base(100) + 5.0);
        assert_eq!(s.values[199], base(199) + 2.0);
        assert_eq!(s.values[149], base(149));
        let bad = SyntheticSpec {
            anomalies: vec![InjectedAnomaly {
                index: 10,
                kind: AnomalyKind::Spike,
                magnitude: 1.0,
            }],
            ..spec
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn injected_spike_is_the_window_maximum() {
        use crate::detector::{detect_series, DetectorConfig};
        use crate::nab::{build_windows, DEFAULT_WINDOW_FRACTION};

        let spec = SyntheticSpec {
            name: "spike".into(),
            length: 1000,
            period: 40.0,
            noise_sd: 0.1,
            trend: 0.0,
            anomalies: vec![InjectedAnomaly {
                index: 400,
                kind: AnomalyKind::Spike,
                magnitude: 1.0,
            }],
            seed: 5,
        };
        let s = generate_synthetic(&spec).unwrap();
        let config = DetectorConfig::for_series_len(3, 4, s.len());
        let scored = detect_series(&s.timestamps, &s.values, &config).unwrap();
        let w = build_windows(&s.labels, s.len(), DEFAULT_WINDOW_FRACTION).unwrap()[0];
        let top = (w.left..=w.right)
            .map(|t| scored[t].abnormality)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(scored[400].abnormality, top);
        assert!(top > 0.99);
    }

    #[test]
    fn preset_corpus_is_valid_and_reproducible() {
        let a = quasi_periodic_corpus(20, 2000, 3);
        assert_eq!(a, quasi_periodic_corpus(20, 2000, 3));
        for spec in &a {
            spec.validate().unwrap();
            assert!(spec.anomalies.iter().all(|x| x.index >= 700));
        }
    }

    #[test]
    fn listing_is_sorted_and_relative() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("b")).unwrap();
        write(dir.path(), "z.csv", "timestamp,value\n");
        write(&dir.path().join("b"), "a.csv", "timestamp,value\n");
        write(dir.path(), "notes.txt", "");
        let names: Vec<String> = list_datasets(dir.path())
            .unwrap()
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        assert_eq!(names, vec!["b/a.csv", "z.csv"]);
    }

    proptest! {
        #[test]
        fn write_then_load_round_trips(
            values in prop::collection::vec(-1e9f64..1e9, 1..50),
            flags in prop::collection::vec(any::<bool>(), 50),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let labels: Vec<usize> = (0..values.len()).filter(|&i| flags[i]).collect();
            let s = TimeSeries {
                name: "r.csv".into(),
                timestamps: (0..values.len()).map(|t| (1000 + t).to_string()).collect(),
                values,
                labels,
            };
            let p = dir.path().join("r.csv");
            write_series(&s, &p).unwrap();
            prop_assert_eq!(load_series(&p).unwrap(), s);
        }
    }
}
