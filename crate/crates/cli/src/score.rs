use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use ldcd_core::nab::{score_corpus, LabeledScores, ProfileScore};
use ldcd_core::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::datasets::{Corpus, Dataset, Skipped};
use crate::manifest::{DetectorSpec, RunManifest};

#[derive(Debug, Serialize)]
pub struct Report {
    pub profiles: Vec<String>,
    pub detectors: Vec<DetectorReport>,
    /// Datasets that could not be loaded at all.
    pub unreadable: Vec<Skipped>,
}

#[derive(Debug, Serialize)]
pub struct DetectorReport {
    pub name: String,
    pub config: DetectorSpec,
    pub datasets_scored: usize,
    pub skipped: Vec<Skipped>,
    pub scores: Vec<ProfileScore>,
    /// Profiles whose normalization is undefined because the corpus has no
    /// labeled windows (perfect and null baselines coincide).
    pub undefined: Vec<String>,
}

impl Report {
    pub fn skipped_count(&self) -> usize {
        self.unreadable.len()
            + self
                .detectors
                .iter()
                .map(|d| d.skipped.len())
                .sum::<usize>()
    }

    /// Detectors as rows, profiles as columns, normalized scores to two decimals.
    pub fn table(&self) -> String {
        let name_width = self
            .detectors
            .iter()
            .map(|d| d.name.len())
            .chain(std::iter::once("detector".len()))
            .max()
            .unwrap_or(8);
        let mut out = format!("{:<name_width$}", "detector");
        for p in &self.profiles {
            let _ = write!(out, "  {p:>9}");
        }
        out.push('\n');
        for d in &self.detectors {
            let _ = write!(out, "{:<name_width$}", d.name);
            for p in &self.profiles {
                match d.scores.iter().find(|s| &s.profile == p) {
                    Some(s) => {
                        let _ = write!(out, "  {:>9.2}", s.normalized);
                    }
                    None => {
                        let _ = write!(out, "  {:>9}", "n/a");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, output_dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(output_dir)?;
        let json = serde_json::to_string_pretty(self)? + "\n";
        fs::write(output_dir.join("report.json"), json)?;
        fs::write(output_dir.join("report.txt"), self.table())?;
        Ok(())
    }
}

/// Reads a score CSV and checks it lines up row for row with the dataset.
fn read_scores(path: &Path, dataset: &Dataset) -> anyhow::Result<Vec<f64>> {
    if !path.exists() {
        bail!("missing score file {}", path.display());
    }
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{}: no {name} column", path.display()))
    };
    let (ts_col, score_col) = (col("timestamp")?, col("abnormality")?);
    let series = &dataset.series;
    let mut scores = Vec::with_capacity(series.len());
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let ts = record.get(ts_col).unwrap_or_default();
        if series.timestamps.get(i).map(String::as_str) != Some(ts) {
            bail!(
                "{} line {line}: timestamp {ts:?} does not match the dataset",
                path.display()
            );
        }
        let raw = record.get(score_col).unwrap_or_default();
        let v: f64 = raw
            .parse()
            .with_context(|| format!("{} line {line}: bad abnormality {raw:?}", path.display()))?;
        scores.push(v);
    }
    if scores.len() != series.len() {
        bail!(
            "{}: {} score rows for {} data rows",
            path.display(),
            scores.len(),
            series.len()
        );
    }
    Ok(scores)
}

/// Scores each detector's CSVs against the corpus labels with one optimized
/// threshold per (detector, profile), or the fixed threshold if configured.
pub fn cmd_score(
    manifest: &RunManifest,
    corpus: &Corpus,
    pool: &rayon::ThreadPool,
) -> anyhow::Result<Report> {
    let mut report = Report {
        profiles: manifest.profiles.iter().map(|p| p.name.clone()).collect(),
        detectors: Vec::new(),
        unreadable: corpus.skipped.clone(),
    };
    for detector in &manifest.detectors {
        let dir = manifest.scores_dir(detector);
        let loaded: Vec<Result<LabeledScores, Skipped>> = pool.install(|| {
            corpus
                .datasets
                .par_iter()
                .map(|d| {
                    read_scores(&dir.join(&d.name), d)
                        .and_then(|s| Ok(LabeledScores::new(d.name.clone(), s, &d.series.labels)?))
                        .map_err(|e| Skipped {
                            dataset: d.name.clone(),
                            reason: format!("{e:#}"),
                        })
                })
                .collect()
        });
        let mut scored = Vec::new();
        let mut skipped = Vec::new();
        for r in loaded {
            match r {
                Ok(s) => scored.push(s),
                Err(s) => {
                    eprintln!(
                        "warning: {}: skipping {}: {}",
                        detector.name(),
                        s.dataset,
                        s.reason
                    );
                    skipped.push(s);
                }
            }
        }

        let mut scores = Vec::new();
        let mut undefined = Vec::new();
        if !scored.is_empty() {
            for profile in &manifest.profiles {
                match score_corpus(&scored, profile, manifest.threshold) {
                    Ok(s) => scores.push(s),
                    Err(Error::UndefinedCorpus(_)) => undefined.push(profile.name.clone()),
                    Err(e) => return Err(e.into()),
                }
            }
        }
        if !undefined.is_empty() {
            eprintln!(
                "warning: {}: corpus has no labeled windows; normalized score undefined",
                detector.name()
            );
        }
        report.detectors.push(DetectorReport {
            name: detector.name(),
            config: detector.clone(),
            datasets_scored: scored.len(),
            skipped,
            scores,
            undefined,
        });
    }
    Ok(report)
}
