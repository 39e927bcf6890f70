use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ldcd_core::detector::{DetectorConfig, Method};
use ldcd_core::nab::ApplicationProfile;
use serde::{Deserialize, Serialize};

pub const DEFAULT_K: usize = 27;
pub const DEFAULT_EMBED_DIM: usize = 19;
pub const DEFAULT_TRAIN_FRAC: f64 = 0.15;
pub const DEFAULT_CALIB_FRAC: f64 = 0.15;

fn default_k() -> usize {
    DEFAULT_K
}
fn default_embed_dim() -> usize {
    DEFAULT_EMBED_DIM
}
fn default_train_frac() -> f64 {
    DEFAULT_TRAIN_FRAC
}
fn default_calib_frac() -> f64 {
    DEFAULT_CALIB_FRAC
}
fn default_pruning() -> bool {
    true
}

/// One detector row of a run. Training and calibration sizes are fractions
/// of each dataset's length, so one spec serves corpora of mixed lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default = "default_calib_frac")]
    pub calib_frac: f64,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_pruning")]
    pub pruning: bool,
}

impl DetectorSpec {
    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!(
                "{}-k{}-l{}-{}",
                self.method.as_str(),
                self.k,
                self.embed_dim,
                if self.pruning { "pruning" } else { "nopruning" }
            )
        })
    }

    /// Window sizes for a dataset of `len` rows.
    pub fn config_for(&self, len: usize) -> DetectorConfig {
        let n = ((self.train_frac * len as f64).floor() as usize).max(1);
        let m = ((self.calib_frac * len as f64).floor() as usize).max(1);
        DetectorConfig::new(self.k, self.embed_dim, n, m)
            .with_method(self.method)
            .with_pruning(self.pruning)
    }

    fn validate(&self) -> anyhow::Result<()> {
        let name = self.name();
        if self.k == 0 || self.embed_dim == 0 {
            bail!("detector {name}: k and embed_dim must be at least 1");
        }
        for (label, f) in [
            ("train_frac", self.train_frac),
            ("calib_frac", self.calib_frac),
        ] {
            if !(f > 0.0 && f < 1.0) {
                bail!("detector {name}: {label} must lie in (0, 1), got {f}");
            }
        }
        if self.train_frac + self.calib_frac >= 1.0 {
            bail!("detector {name}: train_frac + calib_frac must be below 1");
        }
        if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
            bail!("detector name {name:?} is not usable as a directory name");
        }
        Ok(())
    }
}

/// Manifest as written on disk; every field is optional and falls back to
/// the command-line value. Relative paths are resolved against the
/// manifest's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    corpus_dir: Option<PathBuf>,
    labels_path: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    detectors: Option<Vec<DetectorSpec>>,
    profiles: Option<Vec<String>>,
    parallelism: Option<usize>,
    threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub corpus_dir: PathBuf,
    pub labels_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub detectors: Vec<DetectorSpec>,
    pub profiles: Vec<ApplicationProfile>,
    /// Worker threads; 0 lets the pool pick.
    pub parallelism: usize,
    /// Fixed detection threshold; `None` optimizes one per profile.
    pub threshold: Option<f64>,
}

/// Values gathered from the command line before the manifest is applied.
#[derive(Debug, Default)]
pub struct FlagValues {
    pub corpus_dir: Option<PathBuf>,
    pub labels_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub detector: Option<DetectorSpec>,
    pub profiles: Vec<String>,
    pub threads: Option<usize>,
    pub threshold: Option<f64>,
}

impl RunManifest {
    pub fn resolve(manifest_path: Option<&Path>, flags: FlagValues) -> anyhow::Result<Self> {
        let (file, base) = match manifest_path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading manifest {}", p.display()))?;
                let file: ManifestFile = serde_json::from_str(&text)
                    .with_context(|| format!("parsing manifest {}", p.display()))?;
                (file, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (ManifestFile::default(), PathBuf::new()),
        };
        let rebase = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let corpus_dir = file
            .corpus_dir
            .map(rebase)
            .or(flags.corpus_dir)
            .context("no corpus directory given (--corpus or manifest corpus_dir)")?;
        let output_dir = file
            .output_dir
            .map(rebase)
            .or(flags.output_dir)
            .context("no output directory given (--output or manifest output_dir)")?;
        let labels_path = file.labels_path.map(rebase).or(flags.labels_path);
        let detectors = file
            .detectors
            .or_else(|| flags.detector.map(|d| vec![d]))
            .unwrap_or_default();
        let profile_names = file.profiles.unwrap_or(flags.profiles);
        let profiles = if profile_names.is_empty() {
            ApplicationProfile::builtins()
        } else {
            profile_names
                .iter()
                .map(|n| ApplicationProfile::by_name(n))
                .collect::<Result<Vec<_>, _>>()?
        };
        let manifest = Self {
            corpus_dir,
            labels_path,
            output_dir,
            detectors,
            profiles,
            parallelism: file.parallelism.or(flags.threads).unwrap_or(0),
            threshold: file.threshold.or(flags.threshold),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if self.detectors.is_empty() {
            bail!("at least one detector is required");
        }
        if self.profiles.is_empty() {
            bail!("at least one profile is required");
        }
        if self.threshold.is_some_and(|t| !t.is_finite()) {
            bail!("threshold must be finite");
        }
        let mut names = BTreeSet::new();
        for d in &self.detectors {
            d.validate()?;
            if !names.insert(d.name()) {
                bail!("duplicate detector name {:?}", d.name());
            }
        }
        let mut profiles = BTreeSet::new();
        for p in &self.profiles {
            if !profiles.insert(&p.name) {
                bail!("profile {} listed twice", p.name);
            }
        }
        Ok(())
    }

    pub fn scores_dir(&self, detector: &DetectorSpec) -> PathBuf {
        self.output_dir.join("scores").join(detector.name())
    }

    pub fn thread_pool(&self) -> anyhow::Result<rayon::ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism)
            .build()?)
    }
}
