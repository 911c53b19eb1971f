//! Dimension reduction for Gaussian mixture model-based clustering.
//!
//! The crate fits parsimonious Gaussian mixtures by EM, estimates the
//! directions that carry the clustering structure from the fitted mixture
//! (variation in component means and, for heteroscedastic models, in
//! component covariances), selects a subset of the resulting variables by
//! BIC, and evaluates partitions against known labels.

pub mod benchmark;
pub mod directions;
pub mod error;
pub mod eval;
pub mod featsel;
pub mod io;
pub mod linalg;
pub mod mixture;
pub mod simgen;

pub use error::{Error, Result};
