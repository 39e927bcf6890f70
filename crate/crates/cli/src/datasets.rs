use std::path::PathBuf;

use anyhow::Context;
use ldcd_core::corpus::{list_datasets, load_series, LabelsFile, TimeSeries};
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::RunManifest;

/// A dataset that could not be processed, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub dataset: String,
    pub reason: String,
}

pub struct Dataset {
    /// Path relative to the corpus directory, `/`-separated.
    pub name: String,
    pub series: TimeSeries,
}

pub struct Corpus {
    pub datasets: Vec<Dataset>,
    pub skipped: Vec<Skipped>,
}

/// Loads every CSV under the corpus directory, resolving labels from the
/// labels file when one is configured and from inline columns otherwise.
/// Results are ordered by dataset name.
pub fn load_corpus(manifest: &RunManifest, pool: &rayon::ThreadPool) -> anyhow::Result<Corpus> {
    let files = list_datasets(&manifest.corpus_dir)
        .with_context(|| format!("listing corpus {}", manifest.corpus_dir.display()))?;
    let labels = manifest
        .labels_path
        .as_deref()
        .map(LabelsFile::load)
        .transpose()?;

    let loaded: Vec<(String, Result<TimeSeries, String>)> = pool.install(|| {
        files
            .into_par_iter()
            .map(|(name, path): (String, PathBuf)| {
                let result = load_series(&path).and_then(|mut series| {
                    if let Some(labels) = &labels {
                        series.labels = labels.resolve(&name, &series)?;
                    }
                    Ok(series)
                });
                (name, result.map_err(|e| e.to_string()))
            })
            .collect()
    });

    let mut corpus = Corpus {
        datasets: Vec::new(),
        skipped: Vec::new(),
    };
    for (name, result) in loaded {
        match result {
            Ok(series) => corpus.datasets.push(Dataset { name, series }),
            Err(reason) => {
                eprintln!("warning: skipping {name}: {reason}");
                corpus.skipped.push(Skipped {
                    dataset: name,
                    reason,
                });
            }
        }
    }
    Ok(corpus)
}
