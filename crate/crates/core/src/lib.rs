//! Cost-aware adaptive multifidelity reliability analysis.
//!
//! A multifidelity Gaussian process over the joint input–fidelity space is
//! enriched one observation at a time by a cost-normalized lookahead
//! acquisition. The final surrogate defines a Gaussian-mixture biasing
//! density, and the failure probability is estimated by importance sampling
//! against the highest-fidelity model.
//!
//! Module map:
//!
//! * [`mfgp`]: Matérn-5/2 product-kernel GP, hyperparameter fitting, fantasies.
//! * [`acquisition`]: expected-improvement value functions, lookahead, selection.
//! * [`density`]: nominal densities and diagonal Gaussian mixtures (EM).
//! * [`fpe`]: Monte Carlo and importance-sampling estimators.
//! * [`testbed`]: synthetic multifidelity benchmarks.
//! * [`camera`]: the sequential design loop and repetitions.
//! * [`cli`]: configuration files, artifacts, external models.

pub mod acquisition;
pub mod camera;
pub mod cli;
pub mod density;
pub mod error;
pub mod fpe;
pub mod lhs;
pub mod mfgp;
pub mod model;
pub mod stats;
pub mod testbed;

pub use error::{Error, Result};
pub use model::MultifidelityModel;
