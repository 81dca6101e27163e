//! Lifetime distributions built by compounding a Weibull component law with a
//! zero-truncated power-series count law whose parameter may be negative, plus
//! maximum-likelihood regression on the scale parameter, quantile inference
//! with delta-method bands, and residual diagnostics.
//!
//! The count parameter `theta` interpolates three regimes: `theta > 0` is the
//! failure time of a series system with a random number of Weibull components,
//! `theta = 0` is a single component (plain Weibull), and `theta < 0` is, for
//! the families that admit it, a parallel system.

pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod fit;
pub mod likelihood;
pub mod power_series;
pub mod report;

pub use error::{Error, Result};
pub use power_series::{PowerSeriesSpec, SeriesFamily};
