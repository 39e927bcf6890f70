use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use ldcd_core::corpus::{generate_synthetic, write_series, LabelsFile, SyntheticSpec};
use serde::{Deserialize, Serialize};

/// `{"datasets": [SyntheticSpec, ...]}`; written back out next to the
/// generated files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthManifest {
    pub datasets: Vec<SyntheticSpec>,
}

impl SynthManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Rejects the whole batch before anything is written.
    pub fn validate(&self) -> anyhow::Result<()> {
        let mut names = BTreeSet::new();
        for spec in &self.datasets {
            spec.validate()?;
            if spec.name.is_empty() || spec.name.contains(['/', '\\']) {
                bail!("dataset name {:?} is not a plain file name", spec.name);
            }
            if !names.insert(&spec.name) {
                bail!("duplicate dataset name {:?}", spec.name);
            }
        }
        Ok(())
    }
}

/// Writes `<name>.csv` per spec (NAB layout), `labels.json` and
/// `manifest.json` into `out`.
pub fn cmd_synth(manifest: &SynthManifest, out: &Path) -> anyhow::Result<()> {
    manifest.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut labels = BTreeMap::new();
    for spec in &manifest.datasets {
        let mut series = generate_synthetic(spec)?;
        labels.insert(
            series.name.clone(),
            series
                .labels
                .iter()
                .map(|&i| series.timestamps[i].clone())
                .collect(),
        );
        series.labels.clear();
        write_series(&series, &out.join(&series.name))?;
    }
    LabelsFile::from_entries(labels).save(&out.join("labels.json"))?;
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(manifest)? + "\n",
    )?;
    Ok(())
}
