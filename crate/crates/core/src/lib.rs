//! Streaming anomaly detection for univariate time series.
//!
//! The crate is organized bottom-up:
//!
//! * [`embedding`] turns a scalar stream into sliding-window vectors.
//! * [`metric`] fits a sample-induced Mahalanobis metric and scores points by
//!   their average distance to the `k` nearest neighbours.
//! * [`conformal`] maps nonconformity scores to p-values: full CAD, online and
//!   sliding ICAD, and the lazy drifting detector (LDCD) that slides both the
//!   training window and the calibration queue along the stream.
//! * [`detector`] is the per-stream pipeline (burn-in, LDCD or dynamic-range
//!   normalization, alarm pruning).
//! * [`nab`] implements Numenta Anomaly Benchmark scoring.
//! * [`corpus`] loads NAB / Yahoo S5 files and generates synthetic corpora.
//!
//! ```
//! use ldcd_core::detector::{detect_stream, DetectorConfig};
//!
//! let values: Vec<f64> = (0..400)
//!     .map(|t| (t as f64 * 0.2).sin() + if t == 300 { 5.0 } else { 0.0 })
//!     .collect();
//! let config = DetectorConfig::new(3, 4, 80, 80);
//! let scored = detect_stream(&values, &config).unwrap();
//! // The spike is more nonconforming than every calibration score.
//! assert_eq!(scored[300].abnormality, 80.0 / 81.0);
//! assert_eq!(scored[0].abnormality, 0.5); // still warming up
//! ```

pub mod conformal;
pub mod corpus;
pub mod detector;
pub mod embedding;
mod error;
pub mod metric;
pub mod nab;
pub mod rng;

pub use error::{Error, Result};
