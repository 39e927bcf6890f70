//! Conformal p-values for nonconformity scores.
//!
//! Four procedures share the same deterministic, `≥`-inclusive rank
//! statistic and differ only in which scores they compare against:
//!
//! | procedure      | reference sample            | calibration scores              |
//! |----------------|-----------------------------|---------------------------------|
//! | CAD            | all other observations      | leave-one-out scores of all     |
//! | online ICAD    | fixed proper training set   | every score so far (sorted)     |
//! | sliding ICAD   | fixed proper training set   | last `m` scores                 |
//! | LDCD           | sliding window of `n` points| last `m` scores, each against   |
//! |                | lagging the stream by `m`   | the window of its own step      |
//!
//! LDCD calibration scores are never recomputed when the training window
//! moves; each keeps the value computed against its own window until it is
//! evicted from the queue.

use std::collections::VecDeque;

use crate::embedding::EmbeddedPoint;
use crate::metric::{fit_metric, knn_mean_distance, MetricState, ReferenceSample};
use crate::{Error, Result};

/// FIFO of the `m` most recent nonconformity scores, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationQueue {
    scores: VecDeque<f64>,
    capacity: usize,
}

impl CalibrationQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid(
                "calibration queue capacity must be positive",
            ));
        }
        Ok(Self {
            scores: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.scores.len() == self.capacity
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.scores.iter().copied()
    }

    /// Appends a score, returning the evicted oldest score once full.
    pub fn push(&mut self, score: f64) -> Option<f64> {
        let evicted = if self.is_full() {
            self.scores.pop_front()
        } else {
            None
        };
        self.scores.push_back(score);
        evicted
    }
}

/// `|{i = 0..m : α_{t-i} ≥ α_t}| / (m + 1)` where `i = 0` is `alpha` itself.
pub fn sliding_p_value(alpha: f64, queue: &CalibrationQueue) -> Result<f64> {
    if !queue.is_full() {
        return Err(Error::NotReady(format!(
            "calibration queue holds {} of {} scores",
            queue.len(),
            queue.capacity()
        )));
    }
    let at_least = 1 + queue.iter().filter(|&s| s >= alpha).count();
    Ok(at_least as f64 / (queue.capacity() + 1) as f64)
}

/// Full conformal anomaly detection p-value of the last element of
/// `history` (`x_t`, `t = history.len()`).
///
/// `ncm(reference, x)` is evaluated once per observation with that
/// observation left out of the reference. A single observation has no
/// reference and gets `p = 1`.
pub fn cad_p_value<P, F>(history: &[P], mut ncm: F) -> Result<f64>
where
    F: FnMut(&[&P], &P) -> Result<f64>,
{
    let t = history.len();
    if t == 0 {
        return Err(Error::invalid("CAD needs a nonempty history"));
    }
    if t == 1 {
        return Ok(1.0);
    }
    let mut reference: Vec<&P> = Vec::with_capacity(t - 1);
    let mut alphas = Vec::with_capacity(t);
    for s in 0..t {
        reference.clear();
        reference.extend(
            history
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != s)
                .map(|(_, p)| p),
        );
        alphas.push(ncm(&reference, &history[s])?);
    }
    let alpha_t = alphas[t - 1];
    Ok(alphas.iter().filter(|&&a| a >= alpha_t).count() as f64 / t as f64)
}

/// Streaming CAD with the k-NN nonconformity measure under a fixed metric.
///
/// Every observation keeps its `k` smallest distances to all others, so a new
/// point costs one distance per stored observation plus an `O(k)` list
/// update each; the p-value then scans all `t` scores.
#[derive(Debug, Clone)]
pub struct CadStream {
    k: usize,
    metric: MetricState,
    points: Vec<Vec<f64>>,
    /// Ascending `k` smallest distances from each point to the others.
    neighbours: Vec<Vec<f64>>,
}

impl CadStream {
    pub fn new(k: usize, metric: MetricState) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        Ok(Self {
            k,
            metric,
            points: Vec::new(),
            neighbours: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn alpha(list: &[f64]) -> f64 {
        if list.is_empty() {
            0.0
        } else {
            list.iter().sum::<f64>() / list.len() as f64
        }
    }

    /// Adds `x` and returns its CAD p-value against all previous points.
    pub fn push(&mut self, x: &[f64]) -> Result<f64> {
        if x.len() != self.metric.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {}, metric expects {}",
                x.len(),
                self.metric.dim()
            )));
        }
        let k = self.k;
        let mut own = Vec::with_capacity(self.points.len());
        for (p, list) in self.points.iter().zip(self.neighbours.iter_mut()) {
            let d = self.metric.distance_unchecked(x, p);
            own.push(d);
            if list.len() < k || d < list[list.len() - 1] {
                let at = list.partition_point(|&v| v <= d);
                list.insert(at, d);
                list.truncate(k);
            }
        }
        let kk = k.min(own.len());
        if kk > 0 && kk < own.len() {
            own.select_nth_unstable_by(kk - 1, f64::total_cmp);
        }
        own.truncate(kk);
        own.sort_unstable_by(f64::total_cmp);
        self.points.push(x.to_vec());
        self.neighbours.push(own);

        let t = self.points.len();
        if t == 1 {
            return Ok(1.0);
        }
        let alpha_t = Self::alpha(&self.neighbours[t - 1]);
        let count = self
            .neighbours
            .iter()
            .filter(|list| Self::alpha(list) >= alpha_t)
            .count();
        Ok(count as f64 / t as f64)
    }
}

/// Online inductive conformal detector: fixed proper training sample and an
/// ever-growing calibration set kept sorted for binary-search ranking.
#[derive(Debug, Clone)]
pub struct OnlineIcad {
    train: ReferenceSample,
    k: usize,
    sorted: Vec<f64>,
}

impl OnlineIcad {
    pub fn new(train: ReferenceSample, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if train.is_empty() {
            return Err(Error::invalid("training sample is empty"));
        }
        Ok(Self {
            train,
            k,
            sorted: Vec::new(),
        })
    }

    /// Scores `x` and returns `(alpha, p)`; `p = |{s ≤ t : α_s ≥ α_t}| / t`.
    pub fn step(&mut self, x: &[f64]) -> Result<(f64, f64)> {
        let alpha = self.train.knn_score(x, self.k)?;
        let at = self.sorted.partition_point(|&v| v < alpha);
        self.sorted.insert(at, alpha);
        let p = (self.sorted.len() - at) as f64 / self.sorted.len() as f64;
        Ok((alpha, p))
    }

    pub fn seen(&self) -> usize {
        self.sorted.len()
    }
}

/// Output of one conformal step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub alpha: f64,
    pub p_value: f64,
}

/// Sliding ICAD: fixed proper training sample, calibration queue of size `m`.
#[derive(Debug, Clone)]
pub struct SlidingIcad {
    train: ReferenceSample,
    k: usize,
    calib: CalibrationQueue,
}

impl SlidingIcad {
    /// The queue is seeded with the scores of `calibration` against `train`.
    pub fn new(train: ReferenceSample, calibration: &[EmbeddedPoint], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let mut calib = CalibrationQueue::new(calibration.len())?;
        for x in calibration {
            calib.push(train.knn_score(&x.values, k)?);
        }
        Ok(Self { train, k, calib })
    }

    pub fn step(&mut self, x: &[f64]) -> Result<StepOutput> {
        let alpha = self.train.knn_score(x, self.k)?;
        let p_value = sliding_p_value(alpha, &self.calib)?;
        self.calib.push(alpha);
        Ok(StepOutput { alpha, p_value })
    }

    pub fn calibration(&self) -> &CalibrationQueue {
        &self.calib
    }
}

/// Whether the LDCD training window follows the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowMotion {
    #[default]
    Sliding,
    /// Keep the initial training window forever (sliding ICAD).
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdcdOptions {
    pub ridge_eps: f64,
    /// Refit the metric after this many window moves; the previous metric
    /// is reused in between.
    pub refit_every: usize,
    pub motion: WindowMotion,
}

impl Default for LdcdOptions {
    fn default() -> Self {
        Self {
            ridge_eps: crate::metric::DEFAULT_RIDGE_EPS,
            refit_every: 1,
            motion: WindowMotion::Sliding,
        }
    }
}

/// Lazy drifting conformal detector state.
///
/// At test step `t` the training window holds embedded points
/// `t-N ..= t-m-1` (`N = n + m`), the pending buffer holds `t-m ..= t-1`,
/// and the calibration queue holds `α_{t-m} ..= α_{t-1}`.
#[derive(Debug, Clone)]
pub struct LdcdState {
    k: usize,
    options: LdcdOptions,
    train: VecDeque<EmbeddedPoint>,
    metric: MetricState,
    pending: VecDeque<EmbeddedPoint>,
    calib: CalibrationQueue,
    moves_since_fit: usize,
}

impl LdcdState {
    /// Initializes from the first `n + m` embedded points: the first `n`
    /// form the training window and the next `m` are scored against it to
    /// fill the calibration queue.
    pub fn init(
        embedded: &[EmbeddedPoint],
        n: usize,
        m: usize,
        k: usize,
        options: LdcdOptions,
    ) -> Result<Self> {
        if n == 0 || m == 0 || k == 0 {
            return Err(Error::invalid("n, m and k must all be at least 1"));
        }
        if options.refit_every == 0 {
            return Err(Error::invalid("refit_every must be at least 1"));
        }
        if embedded.len() < n + m {
            return Err(Error::NotReady(format!(
                "{} of {} initialization points available",
                embedded.len(),
                n + m
            )));
        }
        if embedded.len() > n + m {
            return Err(Error::invalid(format!(
                "initialization takes exactly {} points, got {}",
                n + m,
                embedded.len()
            )));
        }
        let train: VecDeque<EmbeddedPoint> = embedded[..n].iter().cloned().collect();
        let train_slice = &embedded[..n];
        let metric = fit_metric(train_slice, options.ridge_eps)?;
        let mut calib = CalibrationQueue::new(m)?;
        for x in &embedded[n..] {
            calib.push(knn_mean_distance(&x.values, k, train_slice, &metric, None)?);
        }
        Ok(Self {
            k,
            options,
            train,
            metric,
            pending: embedded[n..].iter().cloned().collect(),
            calib,
            moves_since_fit: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn options(&self) -> &LdcdOptions {
        &self.options
    }

    pub fn train(&self) -> impl ExactSizeIterator<Item = &EmbeddedPoint> {
        self.train.iter()
    }

    pub fn calibration(&self) -> &CalibrationQueue {
        &self.calib
    }

    pub fn metric(&self) -> &MetricState {
        &self.metric
    }

    /// Scores `x` against the current window, then advances the state.
    pub fn step(&mut self, x: &EmbeddedPoint) -> Result<StepOutput> {
        if x.dim() != self.metric.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {}, detector expects {}",
                x.dim(),
                self.metric.dim()
            )));
        }
        let train = self.train.make_contiguous();
        let alpha = knn_mean_distance(&x.values, self.k, train, &self.metric, None)?;
        let p_value = sliding_p_value(alpha, &self.calib)?;
        self.calib.push(alpha);

        if self.options.motion == WindowMotion::Sliding {
            self.pending.push_back(x.clone());
            if let Some(admitted) = self.pending.pop_front() {
                self.train.pop_front();
                self.train.push_back(admitted);
            }
            self.moves_since_fit += 1;
            if self.moves_since_fit >= self.options.refit_every {
                self.metric = fit_metric(self.train.make_contiguous(), self.options.ridge_eps)?;
                self.moves_since_fit = 0;
            }
        }
        Ok(StepOutput { alpha, p_value })
    }
}
