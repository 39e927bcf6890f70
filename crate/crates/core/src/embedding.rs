//! Time-delay embedding of a scalar stream.
//!
//! The embedded point at raw index `t` holds `x[t-l+1..=t]`, most recent
//! observation last. No padding is applied, so the first `l - 1` raw
//! observations produce no point.

use std::collections::VecDeque;

use crate::{Error, Result};

/// An `l`-dimensional window of the `l` most recent raw observations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPoint {
    pub values: Vec<f64>,
    /// Raw index of the last observation in the window.
    pub t: usize,
}

impl EmbeddedPoint {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl AsRef<[f64]> for EmbeddedPoint {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Batch embedding; output `i` ends at raw index `i + l - 1`.
pub fn embed_stream(series: &[f64], l: usize) -> Result<Vec<EmbeddedPoint>> {
    if l == 0 {
        return Err(Error::invalid("embedding dimension must be at least 1"));
    }
    if series.is_empty() {
        return Err(Error::invalid("cannot embed an empty series"));
    }
    Ok(series
        .windows(l)
        .enumerate()
        .map(|(i, w)| EmbeddedPoint {
            values: w.to_vec(),
            t: i + l - 1,
        })
        .collect())
}

/// Incremental embedder, one per stream.
#[derive(Debug, Clone)]
pub struct Embedder {
    dim: usize,
    window: VecDeque<f64>,
    seen: usize,
}

impl Embedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        Ok(Self {
            dim,
            window: VecDeque::with_capacity(dim),
            seen: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Feeds one observation; returns the completed window once `dim`
    /// observations have been seen.
    pub fn push(&mut self, x: f64) -> Option<EmbeddedPoint> {
        if self.window.len() == self.dim {
            self.window.pop_front();
        }
        self.window.push_back(x);
        let t = self.seen;
        self.seen += 1;
        (self.window.len() == self.dim).then(|| EmbeddedPoint {
            values: self.window.iter().copied().collect(),
            t,
        })
    }
}
