use std::fs;
use std::path::Path;

use anyhow::Context;
use ldcd_core::detector::detect_series;
use rayon::prelude::*;

use crate::datasets::{Corpus, Dataset, Skipped};
use crate::manifest::{DetectorSpec, RunManifest};

/// Runs every detector over every dataset and writes one score CSV per
/// (detector, dataset) under `output_dir/scores/<detector>/<dataset>`.
/// Returns the (detector, dataset) pairs that failed.
pub fn cmd_detect(
    manifest: &RunManifest,
    corpus: &Corpus,
    pool: &rayon::ThreadPool,
) -> anyhow::Result<Vec<(String, Skipped)>> {
    let mut failures = Vec::new();
    for detector in &manifest.detectors {
        let dir = manifest.scores_dir(detector);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let results: Vec<Option<Skipped>> = pool.install(|| {
            corpus
                .datasets
                .par_iter()
                .map(|d| {
                    run_one(detector, d, &dir).err().map(|e| Skipped {
                        dataset: d.name.clone(),
                        reason: format!("{e:#}"),
                    })
                })
                .collect()
        });
        for skipped in results.into_iter().flatten() {
            eprintln!(
                "warning: {} failed on {}: {}",
                detector.name(),
                skipped.dataset,
                skipped.reason
            );
            failures.push((detector.name(), skipped));
        }
    }
    Ok(failures)
}

fn run_one(detector: &DetectorSpec, dataset: &Dataset, dir: &Path) -> anyhow::Result<()> {
    let series = &dataset.series;
    let config = detector.config_for(series.len());
    let scored = detect_series(&series.timestamps, &series.values, &config)?;

    let path = dir.join(&dataset.name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["timestamp", "value", "abnormality"])?;
    for (p, v) in scored.iter().zip(&series.values) {
        w.write_record([
            p.timestamp.as_str(),
            &v.to_string(),
            &p.abnormality.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
