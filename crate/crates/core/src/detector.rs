//! Per-stream anomaly detector.
//!
//! Pipeline for each raw observation: non-finite values are replaced by the
//! last finite one, the value is time-delay embedded, and once `n + m`
//! embedded points exist the LDCD state is initialized. From then on every
//! point receives a k-NN nonconformity score `α_t` which is turned into an
//! abnormality `1 - Pv_t`, where `Pv_t` is either the conformal p-value or
//! the dynamic-range heuristic. Optional pruning holds the output at the
//! neutral score for a while after a near-certain alarm.
//!
//! Before the first scored point the detector emits the neutral score.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::conformal::{LdcdOptions, LdcdState, WindowMotion};
use crate::embedding::{EmbeddedPoint, Embedder};
use crate::metric::DEFAULT_RIDGE_EPS;
use crate::nab::probation_length;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Conformal p-value over the calibration queue.
    #[default]
    Ldcd,
    /// Min–max normalization over the last `m + 1` scores.
    Dynr,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ldcd => "ldcd",
            Method::Dynr => "dynr",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ldcd" => Ok(Method::Ldcd),
            "dynr" => Ok(Method::Dynr),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.995;
pub const DEFAULT_NEUTRAL_SCORE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub k: usize,
    /// Embedding dimension.
    pub l: usize,
    /// Training window length.
    pub n: usize,
    /// Calibration queue length.
    pub m: usize,
    pub method: Method,
    pub pruning: bool,
    pub prune_threshold: f64,
    /// Defaults to `n / 5` when unset.
    pub prune_duration: Option<usize>,
    pub neutral_score: f64,
    pub ridge_eps: f64,
    pub refit_every: usize,
    pub motion: WindowMotion,
}

impl DetectorConfig {
    /// LDCD without pruning.
    pub fn new(k: usize, l: usize, n: usize, m: usize) -> Self {
        Self {
            k,
            l,
            n,
            m,
            method: Method::Ldcd,
            pruning: false,
            prune_threshold: DEFAULT_PRUNE_THRESHOLD,
            prune_duration: None,
            neutral_score: DEFAULT_NEUTRAL_SCORE,
            ridge_eps: DEFAULT_RIDGE_EPS,
            refit_every: 1,
            motion: WindowMotion::Sliding,
        }
    }

    /// Sizes `n` and `m` to the probationary period of a series of length
    /// `len` (15%, at least one point).
    pub fn for_series_len(k: usize, l: usize, len: usize) -> Self {
        let p = probation_length(len).max(1);
        Self::new(k, l, p, p)
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_pruning(mut self, pruning: bool) -> Self {
        self.pruning = pruning;
        self
    }

    pub fn prune_duration(&self) -> usize {
        self.prune_duration.unwrap_or(self.n / 5)
    }

    /// Raw index of the first point that receives a real score.
    pub fn first_scored_index(&self) -> usize {
        self.l + self.n + self.m - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l == 0 || self.n == 0 || self.m == 0 {
            return Err(Error::invalid("k, l, n and m must all be at least 1"));
        }
        if !(self.prune_threshold > 0.0 && self.prune_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "prune threshold must lie in (0, 1), got {}",
                self.prune_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.neutral_score) {
            return Err(Error::invalid("neutral score must lie in [0, 1]"));
        }
        if !(self.ridge_eps >= 0.0 && self.ridge_eps.is_finite()) {
            return Err(Error::invalid("ridge_eps must be finite and nonnegative"));
        }
        if self.refit_every == 0 {
            return Err(Error::invalid("refit_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredPoint {
    pub t: usize,
    pub timestamp: String,
    /// `1 - Pv_t`, in `[0, 1]`.
    pub abnormality: f64,
    /// Nonconformity score; absent before the detector is initialized.
    pub raw_alpha: Option<f64>,
    /// Output was clamped by the pruning rule.
    pub pruned: bool,
    /// Input was non-finite and replaced by the last finite value.
    pub imputed: bool,
}

/// Dynamic-range p-value `(max - α_t) / (max - min)` over a window that
/// contains `alpha`; 1 when the window is flat.
pub fn dynr_p_value(alpha: f64, window: &[f64]) -> Result<f64> {
    if window.is_empty() {
        return Err(Error::invalid("dynamic range window is empty"));
    }
    let max = window.iter().copied().fold(alpha, f64::max);
    let min = window.iter().copied().fold(alpha, f64::min);
    Ok(range_p_value(alpha, min, max))
}

fn range_p_value(alpha: f64, min: f64, max: f64) -> f64 {
    if max == min {
        1.0
    } else {
        ((max - alpha) / (max - min)).clamp(0.0, 1.0)
    }
}

/// Sliding maximum and minimum over the last `span` pushed values with
/// monotonic deques.
#[derive(Debug, Clone)]
pub struct ExtremaWindow {
    span: usize,
    next: usize,
    maxq: VecDeque<(usize, f64)>,
    minq: VecDeque<(usize, f64)>,
}

impl ExtremaWindow {
    pub fn new(span: usize) -> Result<Self> {
        if span == 0 {
            return Err(Error::invalid("window span must be positive"));
        }
        Ok(Self {
            span,
            next: 0,
            maxq: VecDeque::new(),
            minq: VecDeque::new(),
        })
    }

    pub fn push(&mut self, v: f64) {
        let idx = self.next;
        self.next += 1;
        while self.maxq.back().is_some_and(|&(_, b)| b <= v) {
            self.maxq.pop_back();
        }
        self.maxq.push_back((idx, v));
        while self.minq.back().is_some_and(|&(_, b)| b >= v) {
            self.minq.pop_back();
        }
        self.minq.push_back((idx, v));
        let oldest = self.next.saturating_sub(self.span);
        while self.maxq.front().is_some_and(|&(i, _)| i < oldest) {
            self.maxq.pop_front();
        }
        while self.minq.front().is_some_and(|&(i, _)| i < oldest) {
            self.minq.pop_front();
        }
    }

    pub fn max(&self) -> Option<f64> {
        self.maxq.front().map(|&(_, v)| v)
    }

    pub fn min(&self) -> Option<f64> {
        self.minq.front().map(|&(_, v)| v)
    }
}

/// Alarm pruning: after an output above `threshold`, the next `duration`
/// outputs are replaced by `neutral`.
#[derive(Debug, Clone)]
pub struct Pruner {
    threshold: f64,
    duration: usize,
    neutral: f64,
    countdown: usize,
}

impl Pruner {
    pub fn new(threshold: f64, duration: usize, neutral: f64) -> Self {
        Self {
            threshold,
            duration,
            neutral,
            countdown: 0,
        }
    }

    /// Returns the emitted value and whether it was clamped.
    pub fn filter(&mut self, p: f64) -> (f64, bool) {
        if self.countdown > 0 {
            self.countdown -= 1;
            (self.neutral, true)
        } else {
            if p > self.threshold {
                self.countdown = self.duration;
            }
            (p, false)
        }
    }

    pub fn active(&self) -> bool {
        self.countdown > 0
    }
}

/// Streaming detector for a single series.
#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    embedder: Embedder,
    warmup: Vec<EmbeddedPoint>,
    state: Option<LdcdState>,
    range: ExtremaWindow,
    pruner: Option<Pruner>,
    last_finite: Option<f64>,
    seen: usize,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let pruner = config.pruning.then(|| {
            Pruner::new(
                config.prune_threshold,
                config.prune_duration(),
                config.neutral_score,
            )
        });
        Ok(Self {
            embedder: Embedder::new(config.l)?,
            warmup: Vec::with_capacity(config.n + config.m),
            state: None,
            range: ExtremaWindow::new(config.m + 1)?,
            pruner,
            last_finite: None,
            seen: 0,
            config,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn is_ready(&self) -> bool {
        self.state.is_some()
    }

    pub fn push(&mut self, timestamp: impl Into<String>, value: f64) -> Result<ScoredPoint> {
        let t = self.seen;
        self.seen += 1;
        let imputed = !value.is_finite();
        let value = if imputed {
            self.last_finite.unwrap_or(0.0)
        } else {
            self.last_finite = Some(value);
            value
        };
        let mut out = ScoredPoint {
            t,
            timestamp: timestamp.into(),
            abnormality: self.config.neutral_score,
            raw_alpha: None,
            pruned: false,
            imputed,
        };
        let Some(x) = self.embedder.push(value) else {
            return Ok(out);
        };
        let Some(state) = self.state.as_mut() else {
            self.warmup.push(x);
            if self.warmup.len() == self.config.n + self.config.m {
                let state = LdcdState::init(
                    &self.warmup,
                    self.config.n,
                    self.config.m,
                    self.config.k,
                    LdcdOptions {
                        ridge_eps: self.config.ridge_eps,
                        refit_every: self.config.refit_every,
                        motion: self.config.motion,
                    },
                )?;
                for alpha in state.calibration().iter() {
                    self.range.push(alpha);
                }
                self.state = Some(state);
                self.warmup = Vec::new();
            }
            return Ok(out);
        };

        let step = state.step(&x)?;
        self.range.push(step.alpha);
        let pv = match self.config.method {
            Method::Ldcd => step.p_value,
            Method::Dynr => range_p_value(
                step.alpha,
                self.range.min().unwrap_or(step.alpha),
                self.range.max().unwrap_or(step.alpha),
            ),
        };
        let abnormality = (1.0 - pv).clamp(0.0, 1.0);
        let (emitted, pruned) = match self.pruner.as_mut() {
            Some(p) => p.filter(abnormality),
            None => (abnormality, false),
        };
        out.abnormality = emitted;
        out.raw_alpha = Some(step.alpha);
        out.pruned = pruned;
        Ok(out)
    }
}

/// Runs a fresh detector over `values`; timestamps are the row indices.
pub fn detect_stream(values: &[f64], config: &DetectorConfig) -> Result<Vec<ScoredPoint>> {
    let mut det = Detector::new(config.clone())?;
    values
        .iter()
        .enumerate()
        .map(|(t, &v)| det.push(t.to_string(), v))
        .collect()
}

/// Runs a fresh detector over a timestamped series.
pub fn detect_series(
    timestamps: &[String],
    values: &[f64],
    config: &DetectorConfig,
) -> Result<Vec<ScoredPoint>> {
    if timestamps.len() != values.len() {
        return Err(Error::invalid("timestamps and values differ in length"));
    }
    let mut det = Detector::new(config.clone())?;
    timestamps
        .iter()
        .zip(values)
        .map(|(ts, &v)| det.push(ts.clone(), v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    #[test]
    fn dynr_examples() {
        assert_eq!(dynr_p_value(10.0, &[0.0, 5.0, 10.0]).unwrap(), 0.0);
        assert_eq!(dynr_p_value(0.0, &[0.0, 5.0, 10.0]).unwrap(), 1.0);
        assert_eq!(dynr_p_value(2.5, &[0.0, 2.5, 10.0]).unwrap(), 0.75);
        assert_eq!(dynr_p_value(3.0, &[3.0, 3.0]).unwrap(), 1.0);
        assert!(dynr_p_value(1.0, &[]).is_err());
    }

    #[test]
    fn pruning_holds_neutral_after_trigger() {
        let mut p = Pruner::new(0.995, 100 / 5, 0.5);
        assert_eq!(p.filter(0.996), (0.996, false));
        for _ in 0..20 {
            assert_eq!(p.filter(0.9999), (0.5, true));
        }
        assert_eq!(p.filter(0.3), (0.3, false));
        assert_eq!(p.filter(0.5), (0.5, false));
    }

    #[test]
    fn second_spike_inside_countdown_is_suppressed() {
        let mut p = Pruner::new(0.995, 20, 0.5);
        let inputs = [0.1, 0.999, 0.2, 0.1, 0.3, 0.2, 0.998, 0.1];
        let out: Vec<f64> = inputs.iter().map(|&x| p.filter(x).0).collect();
        assert_eq!(out, vec![0.1, 0.999, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn extrema_window_matches_brute_force() {
        let mut rng = SplitMix64::new(4);
        let vals: Vec<f64> = (0..300).map(|_| rng.below(20) as f64).collect();
        let mut w = ExtremaWindow::new(7).unwrap();
        for (i, &v) in vals.iter().enumerate() {
            w.push(v);
            let lo = i.saturating_sub(6);
            let slice = &vals[lo..=i];
            assert_eq!(
                w.max().unwrap(),
                slice.iter().copied().fold(f64::MIN, f64::max)
            );
            assert_eq!(
                w.min().unwrap(),
                slice.iter().copied().fold(f64::MAX, f64::min)
            );
        }
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::new(0, 1, 10, 10).validate().is_err());
        let mut c = DetectorConfig::new(1, 1, 10, 10);
        c.prune_threshold = 1.0;
        assert!(c.validate().is_err());
        assert_eq!(DetectorConfig::new(27, 19, 100, 100).prune_duration(), 20);
        let c = DetectorConfig::for_series_len(27, 19, 4032);
        assert_eq!((c.n, c.m), (604, 604));
    }

    #[test]
    fn constant_series_is_neutral_then_zero() {
        let values = vec![3.0; 200];
        let config = DetectorConfig::new(2, 3, 40, 30).with_pruning(true);
        let out = detect_stream(&values, &config).unwrap();
        let first = config.first_scored_index();
        for p in &out {
            if p.t < first {
                assert_eq!(p.abnormality, 0.5);
                assert!(p.raw_alpha.is_none());
            } else {
                assert_eq!(p.abnormality, 0.0);
            }
        }
    }

    fn sine_spike(len: usize, at: usize) -> Vec<f64> {
        (0..len)
            .map(|t| (t as f64 * 0.3).sin() + if t == at { 8.0 } else { 0.0 })
            .collect()
    }

    #[test]
    fn spike_is_strict_maximum() {
        let values = sine_spike(600, 500);
        let (n, m) = (150, 149);
        let ldcd = detect_stream(&values, &DetectorConfig::new(1, 1, n, m)).unwrap();
        assert_eq!(ldcd[500].abnormality, m as f64 / (m + 1) as f64);
        let dynr = detect_stream(
            &values,
            &DetectorConfig::new(1, 1, n, m).with_method(Method::Dynr),
        )
        .unwrap();
        assert_eq!(dynr[500].abnormality, 1.0);
        let alphas = |v: &[ScoredPoint]| v.iter().map(|p| p.raw_alpha).collect::<Vec<_>>();
        assert_eq!(alphas(&ldcd), alphas(&dynr));
    }

    #[test]
    fn non_finite_inputs_are_imputed() {
        let mut values = sine_spike(300, 1000);
        values[250] = f64::NAN;
        values[251] = f64::INFINITY;
        let out = detect_stream(&values, &DetectorConfig::new(2, 2, 60, 60)).unwrap();
        assert!(out[250].imputed && out[251].imputed);
        assert!(!out[252].imputed);
        let mut patched = values.clone();
        patched[250] = values[249];
        patched[251] = values[249];
        let clean = detect_stream(&patched, &DetectorConfig::new(2, 2, 60, 60)).unwrap();
        for (a, b) in out.iter().zip(&clean) {
            assert_eq!(a.abnormality, b.abnormality);
        }
    }

    #[test]
    fn short_series_is_all_neutral() {
        let values = vec![1.0, 2.0, 3.0, 4.0];
        let out = detect_stream(&values, &DetectorConfig::new(1, 2, 2, 2)).unwrap();
        assert!(out.iter().all(|p| p.abnormality == 0.5));
    }

    proptest! {
        #[test]
        fn causal_and_bounded(seed in any::<u64>(), cut in 1usize..300, dynr in any::<bool>()) {
            let mut rng = SplitMix64::new(seed);
            let values: Vec<f64> = (0..300).map(|t| (t as f64 * 0.2).sin() + 0.3 * rng.normal()).collect();
            let method = if dynr { Method::Dynr } else { Method::Ldcd };
            let config = DetectorConfig::new(3, 4, 50, 40).with_method(method);
            let full = detect_stream(&values, &config).unwrap();
            let prefix = detect_stream(&values[..cut], &config).unwrap();
            prop_assert_eq!(full.len(), values.len());
            prop_assert_eq!(&full[..cut], &prefix[..]);
            prop_assert!(full.iter().all(|p| (0.0..=1.0).contains(&p.abnormality)));
        }
    }
}
