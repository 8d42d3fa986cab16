//! Uncertainty quantification and variance-aware fairness auditing.
//!
//! The crate trains small tabular estimators, builds predictive
//! distributions by resampling (bootstrap, jackknife, jackknife+,
//! jackknife+-after-bootstrap), calibrates split conformal regions, and
//! turns the resulting stability and error-rate metrics into group parity
//! reports with a discrimination / reverse-discrimination classification.
//!
//! The [`audit`] module drives the whole pipeline from a declarative
//! config file and persists one JSON record per (seed, model) run;
//! [`reporting`] turns persisted records into CSV/JSON tables.

pub mod audit;
pub mod bias;
pub mod cli;
pub mod conformal;
pub mod data;
pub mod error;
pub mod estimators;
pub mod matrix;
pub mod numeric;
pub mod parity;
pub mod reporting;
pub mod resampling;
pub mod seed;
pub mod stability;

pub use error::{Error, Result};
