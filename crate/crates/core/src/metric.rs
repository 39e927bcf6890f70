//! Sample-induced Mahalanobis metric and the k-NN nonconformity score.
//!
//! The metric is fitted once per reference sample: the biased (denominator
//! `n`) covariance `Σ` is regularized as `Σ + ridge·I` with
//! `ridge = ridge_eps · trace(Σ) / l` (or `ridge_eps` when the trace is zero),
//! Cholesky-factored as `L Lᵀ`, and stored both as the inverse covariance and
//! as the whitening factor `W = L⁻¹`, so that
//! `d(a, b)² = (a-b)ᵀ Σ⁻¹ (a-b) = |W (a-b)|²`.
//!
//! Distances are always evaluated through `W`; `W(a-b)` and `W(b-a)` differ
//! only by sign, which makes `d` exactly symmetric.

use std::cmp::Ordering;

use nalgebra::{Cholesky, DMatrix};

use crate::embedding::EmbeddedPoint;
use crate::{Error, Result};

/// Default regularization strength, relative to the average variance.
pub const DEFAULT_RIDGE_EPS: f64 = 1e-6;

/// Number of ×10 ridge escalations tried before giving up on a fit.
const MAX_RIDGE_ESCALATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricState {
    dim: usize,
    /// Row-major `dim × dim` regularized inverse covariance.
    inv_cov: Vec<f64>,
    /// Row-major lower-triangular whitening factor.
    whitener: Vec<f64>,
    mean: Vec<f64>,
    ridge: f64,
}

impl MetricState {
    /// Euclidean metric in `dim` dimensions.
    pub fn identity(dim: usize) -> Self {
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        Self {
            dim,
            inv_cov: eye.clone(),
            whitener: eye,
            mean: vec![0.0; dim],
            ridge: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Regularization actually applied to the covariance diagonal.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn inv_cov(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.inv_cov)
    }

    /// Distance without dimension checks; callers guarantee both slices have
    /// length `dim`.
    #[inline]
    pub fn distance_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        let l = self.dim;
        let mut acc = 0.0;
        for i in 0..l {
            let row = &self.whitener[i * l..i * l + i + 1];
            let mut z = 0.0;
            for (j, w) in row.iter().enumerate() {
                z += w * (a[j] - b[j]);
            }
            acc += z * z;
        }
        acc.sqrt()
    }
}

/// Fits the regularized inverse covariance of `points`.
pub fn fit_metric<P: AsRef<[f64]>>(points: &[P], ridge_eps: f64) -> Result<MetricState> {
    let first = points
        .first()
        .ok_or_else(|| Error::invalid("cannot fit a metric on an empty sample"))?;
    let l = first.as_ref().len();
    if l == 0 {
        return Err(Error::invalid("points must have dimension at least 1"));
    }
    if !(ridge_eps >= 0.0 && ridge_eps.is_finite()) {
        return Err(Error::invalid(format!(
            "ridge_eps must be finite and nonnegative, got {ridge_eps}"
        )));
    }
    if let Some(bad) = points.iter().position(|p| p.as_ref().len() != l) {
        return Err(Error::invalid(format!(
            "point {bad} has dimension {}, expected {l}",
            points[bad].as_ref().len()
        )));
    }

    let n = points.len() as f64;
    let mut mean = vec![0.0; l];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p.as_ref()) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }

    let mut cov = DMatrix::<f64>::zeros(l, l);
    let mut centered = vec![0.0; l];
    for p in points {
        for ((c, x), m) in centered.iter_mut().zip(p.as_ref()).zip(&mean) {
            *c = x - m;
        }
        for i in 0..l {
            for j in 0..=i {
                cov[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..l {
        for j in 0..=i {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let trace = cov.trace();
    let mut ridge = if trace > 0.0 {
        ridge_eps * trace / l as f64
    } else {
        ridge_eps
    };

    for attempt in 0..=MAX_RIDGE_ESCALATIONS {
        if let Some(whitener) = whitening_factor(&cov, ridge) {
            let mut inv_cov = vec![0.0; l * l];
            // inv = Wᵀ W; identical summation order for (i, j) and (j, i).
            for i in 0..l {
                for j in 0..l {
                    let mut s = 0.0;
                    for r in i.max(j)..l {
                        s += whitener[(r, i)] * whitener[(r, j)];
                    }
                    inv_cov[i * l + j] = s;
                }
            }
            let mut w = vec![0.0; l * l];
            for i in 0..l {
                for j in 0..=i {
                    w[i * l + j] = whitener[(i, j)];
                }
            }
            return Ok(MetricState {
                dim: l,
                inv_cov,
                whitener: w,
                mean,
                ridge,
            });
        }
        if attempt == MAX_RIDGE_ESCALATIONS {
            break;
        }
        ridge = if ridge > 0.0 {
            ridge * 10.0
        } else {
            f64::EPSILON * (trace / l as f64).max(1.0)
        };
    }
    Err(Error::SingularCovariance { ridge })
}

/// `L⁻¹` for the Cholesky factor of `cov + ridge·I`, or `None` when a pivot
/// is not safely positive.
fn whitening_factor(cov: &DMatrix<f64>, ridge: f64) -> Option<DMatrix<f64>> {
    let l = cov.nrows();
    let mut a = cov.clone();
    for i in 0..l {
        a[(i, i)] += ridge;
    }
    let max_diag = (0..l).map(|i| a[(i, i)]).fold(0.0, f64::max);
    if !(max_diag > 0.0) || !max_diag.is_finite() {
        return None;
    }
    let chol = Cholesky::new(a)?;
    let lower = chol.l();
    let floor = l as f64 * f64::EPSILON * max_diag;
    if (0..l).any(|i| !(lower[(i, i)] * lower[(i, i)] > floor)) {
        return None;
    }
    let inv = lower.solve_lower_triangular(&DMatrix::identity(l, l))?;
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

/// Mahalanobis distance `√((a-b)ᵀ Σ⁻¹ (a-b))`.
pub fn mahalanobis(a: &[f64], b: &[f64], metric: &MetricState) -> Result<f64> {
    if a.len() != metric.dim || b.len() != metric.dim {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} and {} vs metric {}",
            a.len(),
            b.len(),
            metric.dim
        )));
    }
    Ok(metric.distance_unchecked(a, b))
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Mean distance from `x` to its `k` nearest neighbours in `points`.
///
/// `exclude` removes one sample by index (leave-one-out for members of the
/// sample); duplicates by value still count as neighbours. When fewer than
/// `k` points are eligible the mean runs over all of them. Neighbours are
/// summed in ascending distance order, ties broken by lower index.
pub fn knn_mean_distance<P: AsRef<[f64]>>(
    x: &[f64],
    k: usize,
    points: &[P],
    metric: &MetricState,
    exclude: Option<usize>,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if points.is_empty() {
        return Err(Error::invalid("reference sample is empty"));
    }
    let l = metric.dim;
    if x.len() != l {
        return Err(Error::invalid(format!(
            "query has dimension {}, metric expects {l}",
            x.len()
        )));
    }
    let mut dists = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        let p = p.as_ref();
        if p.len() != l {
            return Err(Error::invalid(format!(
                "reference point {i} has dimension {}, metric expects {l}",
                p.len()
            )));
        }
        dists.push((metric.distance_unchecked(x, p), i));
    }
    if dists.is_empty() {
        return Err(Error::invalid("no eligible neighbours after exclusion"));
    }
    let kk = k.min(dists.len());
    if kk < dists.len() {
        dists.select_nth_unstable_by(kk - 1, by_distance_then_index);
    }
    let nearest = &mut dists[..kk];
    nearest.sort_unstable_by(by_distance_then_index);
    let sum: f64 = nearest.iter().map(|(d, _)| d).sum();
    Ok(sum / kk as f64)
}

/// A reference sample together with the metric fitted on it.
#[derive(Debug, Clone)]
pub struct ReferenceSample {
    points: Vec<EmbeddedPoint>,
    metric: MetricState,
}

impl ReferenceSample {
    pub fn fit(points: Vec<EmbeddedPoint>, ridge_eps: f64) -> Result<Self> {
        let metric = fit_metric(&points, ridge_eps)?;
        Ok(Self { points, metric })
    }

    pub fn points(&self) -> &[EmbeddedPoint] {
        &self.points
    }

    pub fn metric(&self) -> &MetricState {
        &self.metric
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Score of a point outside the sample.
    pub fn knn_score(&self, x: &[f64], k: usize) -> Result<f64> {
        knn_mean_distance(x, k, &self.points, &self.metric, None)
    }

    /// Leave-one-out score of the sample's own `index`-th point.
    pub fn knn_score_member(&self, index: usize, k: usize) -> Result<f64> {
        let x = self
            .points
            .get(index)
            .ok_or_else(|| Error::invalid(format!("member index {index} out of range")))?;
        knn_mean_distance(&x.values, k, &self.points, &self.metric, Some(index))
    }
}

/// k-NN average-distance score of `x` against `reference`.
pub fn knn_score(x: &EmbeddedPoint, k: usize, reference: &ReferenceSample) -> Result<f64> {
    reference.knn_score(&x.values, k)
}
