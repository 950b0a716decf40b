//! Portmanteau-type white-noise tests for high-dimensional time series.
//!
//! The crate centres on the statistic `G_q`, the sum of squared singular
//! values of the first `q` circular sample autocovariance matrices, and its
//! feasible variants. Around it sit the classical Hosking and Li-McLeod
//! tests, a split-sample estimator of the innovation fourth moment, closed
//! form power predictions under a VMA(1) alternative, exact finite-sample
//! moment formulas and a reproducible Monte Carlo harness.

pub mod classical;
pub mod data;
pub mod distributions;
pub mod error;
pub mod io;
pub mod moments;
pub mod nu4;
pub mod power;
pub mod simulation;
pub mod stats;

mod linalg;

pub use data::TimeSeriesMatrix;
pub use error::{Error, Result};
pub use stats::{SpectralConstants, TestKind, TestReport};

/// Library version embedded in every serialized report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
