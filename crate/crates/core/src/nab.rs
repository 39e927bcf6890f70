//! Numenta Anomaly Benchmark scoring.
//!
//! A detection is any row at or after the probationary period whose
//! abnormality exceeds the threshold. Detections are weighted by a sigmoid of
//! their position `τ` relative to the right end of an anomaly window, in
//! units of the window width, so the window interior is `τ ∈ [-1, 0]`:
//!
//! ```text
//! σ(τ) = A_FP                                        τ < -1
//! σ(τ) = (A_TP - A_FP) / (1 + e^{5τ}) + A_FP          otherwise
//! ```
//!
//! Only the earliest detection inside a window counts; later ones in the same
//! window contribute nothing. A detection outside every window is a false
//! positive. It is matched to the closest window ending before it and, being
//! tardy (`τ > 0`), weighted `A_FP (1 - 2 / (1 + e^{5τ}))`: close to zero just
//! past the window and decaying to `A_FP`, so every false positive lowers the
//! score. With no preceding window it scores `A_FP`. Each window without a detection
//! costs `A_FN`. Raw scores are normalized against a perfect detector (one
//! detection at the earliest eligible row of every window) and a silent one:
//! `100 (S - S_null) / (S_perfect - S_null)`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Share of each series reserved as the probationary period.
pub const PROBATION_FRACTION: f64 = 0.15;

/// Share of each series covered by anomaly windows.
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.10;

/// Sigmoid steepness in window-width units.
const SIGMOID_SCALE: f64 = 5.0;

/// Probationary period of a series of `len` rows: `floor(0.15 · len)`.
pub fn probation_length(len: usize) -> usize {
    (PROBATION_FRACTION * len as f64).floor() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationProfile {
    pub name: String,
    pub a_tp: f64,
    pub a_fp: f64,
    pub a_tn: f64,
    pub a_fn: f64,
}

impl ApplicationProfile {
    pub fn standard() -> Self {
        Self::builtin("Standard", -0.11, -1.0)
    }

    pub fn low_fp() -> Self {
        Self::builtin("LowFP", -0.22, -1.0)
    }

    pub fn low_fn() -> Self {
        Self::builtin("LowFN", -0.11, -2.0)
    }

    fn builtin(name: &str, a_fp: f64, a_fn: f64) -> Self {
        Self {
            name: name.to_string(),
            a_tp: 1.0,
            a_fp,
            a_tn: 1.0,
            a_fn,
        }
    }

    /// Built-in profiles in report column order.
    pub fn builtins() -> Vec<Self> {
        vec![Self::low_fn(), Self::low_fp(), Self::standard()]
    }

    /// Case-insensitive lookup; accepts `standard`, `lowfp`/`low_fp`/`reward_low_fp_rate`
    /// and the FN equivalents.
    pub fn by_name(name: &str) -> Result<Self> {
        let key: String = name
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "standard" => Ok(Self::standard()),
            "lowfp" | "rewardlowfprate" => Ok(Self::low_fp()),
            "lowfn" | "rewardlowfnrate" => Ok(Self::low_fn()),
            _ => Err(Error::invalid(format!(
                "unknown application profile {name:?}"
            ))),
        }
    }
}

/// Inclusive row interval around a labeled anomaly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyWindow {
    pub left: usize,
    pub right: usize,
    pub center: usize,
}

impl AnomalyWindow {
    pub fn contains(&self, t: usize) -> bool {
        self.left <= t && t <= self.right
    }

    /// Width used to normalize `τ`; never zero.
    pub fn width(&self) -> f64 {
        (self.right - self.left).max(1) as f64
    }
}

/// Builds one window per label, `width = round(fraction · len / #labels)`
/// rows wide, centered on the label (the odd row goes right), clipped to the
/// series and with overlapping windows merged into the earlier one.
pub fn build_windows(
    labels: &[usize],
    series_len: usize,
    fraction: f64,
) -> Result<Vec<AnomalyWindow>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= series_len) {
        return Err(Error::invalid(format!(
            "label {bad} outside series of length {series_len}"
        )));
    }
    if labels.is_empty() {
        return Ok(Vec::new());
    }
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let width = ((fraction * series_len as f64 / sorted.len() as f64).round() as usize).max(1);
    let (half_left, half_right) = (width / 2, width - width / 2);

    let mut windows: Vec<AnomalyWindow> = Vec::with_capacity(sorted.len());
    for c in sorted {
        let left = c.saturating_sub(half_left);
        let right = (c + half_right).min(series_len - 1);
        match windows.last_mut() {
            Some(prev) if left <= prev.right => prev.right = prev.right.max(right),
            _ => windows.push(AnomalyWindow {
                left,
                right,
                center: c,
            }),
        }
    }
    Ok(windows)
}

/// Detection weight at normalized position `tau` (window interior is `[-1, 0]`).
pub fn sigma(tau: f64, profile: &ApplicationProfile) -> f64 {
    if tau < -1.0 {
        profile.a_fp
    } else {
        (profile.a_tp - profile.a_fp) / (1.0 + (SIGMOID_SCALE * tau).exp()) + profile.a_fp
    }
}

/// Weight of a false positive `tau > 0` window widths past the end of the
/// window it is matched to; always strictly between `A_FP` and zero.
pub fn tardy_weight(tau: f64, profile: &ApplicationProfile) -> f64 {
    profile.a_fp * (1.0 - 2.0 / (1.0 + (SIGMOID_SCALE * tau).exp()))
}

/// Where a row falls relative to the windows of its series.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Placement {
    /// Inside window `w`, with the weight it would earn as the earliest.
    Inside { window: usize, weight: f64 },
    /// Outside every window; a false positive of the given weight.
    Outside { weight: f64 },
}

fn place(t: usize, windows: &[AnomalyWindow], profile: &ApplicationProfile) -> Placement {
    // Windows are sorted and disjoint: the candidate is the last one
    // starting at or before `t`.
    let idx = windows.partition_point(|w| w.left <= t);
    if idx == 0 {
        return Placement::Outside {
            weight: profile.a_fp,
        };
    }
    let w = &windows[idx - 1];
    let tau = (t as f64 - w.right as f64) / w.width();
    if w.contains(t) {
        Placement::Inside {
            window: idx - 1,
            weight: sigma(tau, profile),
        }
    } else {
        Placement::Outside {
            weight: tardy_weight(tau, profile),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetScore {
    pub raw: f64,
    /// Counted detections and their weights; ignored in-window repeats are
    /// not listed.
    pub per_detection: Vec<(usize, f64)>,
    pub missed_windows: usize,
}

/// Raw NAB score of one dataset at a fixed threshold.
pub fn score_dataset(
    abnormality: &[f64],
    threshold: f64,
    windows: &[AnomalyWindow],
    profile: &ApplicationProfile,
    probation_len: usize,
) -> DatasetScore {
    let mut hit = vec![false; windows.len()];
    let mut per_detection = Vec::new();
    for (t, &a) in abnormality.iter().enumerate().skip(probation_len) {
        if !(a > threshold) {
            continue;
        }
        match place(t, windows, profile) {
            Placement::Inside { window, weight } => {
                if !hit[window] {
                    hit[window] = true;
                    per_detection.push((t, weight));
                }
            }
            Placement::Outside { weight } => per_detection.push((t, weight)),
        }
    }
    let missed_windows = hit.iter().filter(|&&h| !h).count();
    let raw =
        per_detection.iter().map(|(_, w)| w).sum::<f64>() + profile.a_fn * missed_windows as f64;
    DatasetScore {
        raw,
        per_detection,
        missed_windows,
    }
}

/// `100 (raw - null) / (perfect - null)`.
pub fn nab_normalize(raw: f64, perfect: f64, null: f64) -> Result<f64> {
    if perfect == null {
        return Err(Error::UndefinedCorpus(perfect));
    }
    if perfect < null {
        return Err(Error::invalid(format!(
            "perfect score {perfect} is below the null score {null}"
        )));
    }
    Ok(100.0 * (raw - null) / (perfect - null))
}

/// Binary detection sequence of the perfect detector: one detection at the
/// earliest post-probation row of every window.
pub fn oracle_detections(len: usize, windows: &[AnomalyWindow], probation_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for w in windows {
        let first = w.left.max(probation_len);
        if first <= w.right && first < len {
            out[first] = 1.0;
        }
    }
    out
}

/// One dataset's detector output prepared for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    pub name: String,
    pub abnormality: Vec<f64>,
    pub windows: Vec<AnomalyWindow>,
    pub probation_len: usize,
}

impl LabeledScores {
    /// Builds default windows and probation for `labels` over the scores.
    pub fn new(name: impl Into<String>, abnormality: Vec<f64>, labels: &[usize]) -> Result<Self> {
        let len = abnormality.len();
        Ok(Self {
            name: name.into(),
            windows: build_windows(labels, len, DEFAULT_WINDOW_FRACTION)?,
            probation_len: probation_length(len),
            abnormality,
        })
    }

    pub fn score(&self, threshold: f64, profile: &ApplicationProfile) -> DatasetScore {
        score_dataset(
            &self.abnormality,
            threshold,
            &self.windows,
            profile,
            self.probation_len,
        )
    }

    pub fn perfect(&self, profile: &ApplicationProfile) -> f64 {
        let oracle = oracle_detections(self.abnormality.len(), &self.windows, self.probation_len);
        score_dataset(&oracle, 0.5, &self.windows, profile, self.probation_len).raw
    }

    pub fn null(&self, profile: &ApplicationProfile) -> f64 {
        let silent = vec![0.0; self.abnormality.len()];
        score_dataset(&silent, 0.5, &self.windows, profile, self.probation_len).raw
    }
}

/// Result of the corpus-wide threshold search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub raw: f64,
}

/// Candidate thresholds, descending: every distinct score minus one ulp
/// (so `> threshold` selects exactly the rows at or above that score) plus 1.
pub fn candidate_thresholds(corpus: &[LabeledScores]) -> Vec<f64> {
    let mut c: Vec<f64> = corpus
        .iter()
        .flat_map(|d| d.abnormality.iter().skip(d.probation_len).copied())
        .filter(|v| !v.is_nan())
        .map(f64::next_down)
        .chain(std::iter::once(1.0))
        .collect();
    c.sort_unstable_by(|a, b| b.total_cmp(a));
    c.dedup();
    c
}

/// Exhaustive search for the threshold maximizing the summed raw score over
/// the corpus; ties go to the highest threshold.
///
/// Rows are visited once in descending score order while the corpus total is
/// updated incrementally, so the cost is dominated by the sort.
pub fn optimize_threshold(
    corpus: &[LabeledScores],
    profile: &ApplicationProfile,
) -> ThresholdChoice {
    struct Row {
        value: f64,
        dataset: usize,
        placement: Placement,
        t: usize,
    }

    let mut rows = Vec::new();
    let mut total = 0.0;
    let mut earliest: Vec<Vec<Option<(usize, f64)>>> = Vec::with_capacity(corpus.len());
    for (di, d) in corpus.iter().enumerate() {
        total += profile.a_fn * d.windows.len() as f64;
        earliest.push(vec![None; d.windows.len()]);
        for (t, &value) in d.abnormality.iter().enumerate().skip(d.probation_len) {
            if value.is_nan() {
                continue;
            }
            rows.push(Row {
                value,
                dataset: di,
                placement: place(t, &d.windows, profile),
                t,
            });
        }
    }
    rows.sort_unstable_by(|a, b| b.value.total_cmp(&a.value));

    let mut best = ThresholdChoice {
        threshold: f64::INFINITY,
        raw: f64::NEG_INFINITY,
    };
    let mut next = 0;
    for threshold in candidate_thresholds(corpus) {
        while next < rows.len() && rows[next].value > threshold {
            let row = &rows[next];
            match row.placement {
                Placement::Outside { weight } => total += weight,
                Placement::Inside { window, weight } => {
                    let slot = &mut earliest[row.dataset][window];
                    match *slot {
                        None => {
                            total += weight - profile.a_fn;
                            *slot = Some((row.t, weight));
                        }
                        Some((t0, w0)) if row.t < t0 => {
                            total += weight - w0;
                            *slot = Some((row.t, weight));
                        }
                        Some(_) => {}
                    }
                }
            }
            next += 1;
        }
        if total > best.raw {
            best = ThresholdChoice {
                threshold,
                raw: total,
            };
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetResult {
    pub name: String,
    pub raw: f64,
    pub perfect: f64,
    pub null: f64,
    pub detections: usize,
    pub missed_windows: usize,
}

/// Corpus score for one profile at its optimized threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileScore {
    pub profile: String,
    pub threshold: f64,
    pub raw: f64,
    pub perfect: f64,
    pub null: f64,
    pub normalized: f64,
    pub datasets: Vec<DatasetResult>,
}

/// Scores a corpus under `profile` at the threshold given, or at the
/// optimized one when `threshold` is `None`.
pub fn score_corpus(
    corpus: &[LabeledScores],
    profile: &ApplicationProfile,
    threshold: Option<f64>,
) -> Result<ProfileScore> {
    let threshold = match threshold {
        Some(t) => t,
        None => optimize_threshold(corpus, profile).threshold,
    };
    let mut datasets = Vec::with_capacity(corpus.len());
    for d in corpus {
        let s = d.score(threshold, profile);
        datasets.push(DatasetResult {
            name: d.name.clone(),
            raw: s.raw,
            perfect: d.perfect(profile),
            null: d.null(profile),
            detections: s.per_detection.len(),
            missed_windows: s.missed_windows,
        });
    }
    let raw: f64 = datasets.iter().map(|d| d.raw).sum();
    let perfect: f64 = datasets.iter().map(|d| d.perfect).sum();
    let null: f64 = datasets.iter().map(|d| d.null).sum();
    Ok(ProfileScore {
        profile: profile.name.clone(),
        threshold,
        raw,
        perfect,
        null,
        normalized: nab_normalize(raw, perfect, null)?,
        datasets,
    })
}
