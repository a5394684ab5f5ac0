//! Surrogate-based weighted Approximate Bayesian Computation for inverse
//! uncertainty quantification on mixed-type process data.
//!
//! The crate is organised along the stages of the workflow:
//!
//! * [`dataset`]: mixed-type tables, CSV ingestion, preprocessing, run ranking
//!   and a synthetic generator with known ground truth.
//! * [`surrogate`]: squared-error gradient-boosted regression trees with
//!   cross-validation and `total_gain` importance.
//! * [`distfit`]: maximum-likelihood fitting of candidate families, AIC model
//!   selection and random-walk Metropolis over family hyperparameters.
//! * [`abc`]: forward simulation through the surrogate, kernel weighting,
//!   effective sample size, weighted credible intervals and forward validation.
//! * [`geometry`]: embedding tables, cosine similarity and spectral clustering
//!   used to stratify the inference.
//! * [`pipeline`]: end-to-end orchestration, reports and manifests.
//! * [`plot`]: SVG rendering of the report figures.

pub mod abc;
pub mod dataset;
pub mod distfit;
pub mod geometry;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod stats;
pub mod surrogate;
