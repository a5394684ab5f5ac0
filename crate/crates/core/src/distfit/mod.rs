//! Prior construction: maximum-likelihood fits of candidate families, AIC
//! model selection with model probabilities, and Metropolis sampling of the
//! selected family's hyperparameters.

mod family;
mod fit;
mod mcmc;
pub mod optimize;

use thiserror::Error;

pub use family::{Family, Support};
pub use fit::{
    aic, fit_family, log_likelihood, model_probabilities, select_model, FittedPrior, MIN_SAMPLE,
};
pub use mcmc::{mcmc_posterior, ChainSummary, McmcConfig};

use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistFitError {
    #[error("sample has {0} values, at least {1} are required")]
    TooFewValues(usize, usize),
    #[error("sample lies outside the support of the {0} family")]
    SupportViolation(Family),
    #[error("sample is degenerate for the {0} family")]
    DegenerateSample(Family),
    #[error("no candidate family is admissible for the sample")]
    NoValidCandidate,
    #[error("chain diverged: {0} consecutive proposals with non-finite log-likelihood")]
    ChainDiverged(usize),
    #[error("invalid MCMC configuration: {0}")]
    InvalidConfig(String),
}

/// `n` i.i.d. draws from a fitted prior, deterministic in `seed`.
pub fn sample_prior(fp: &FittedPrior, n: usize, seed: u64) -> Vec<f64> {
    let theta = sampling_theta(fp);
    let mut r = rng::stream(seed, 0);
    (0..n).map(|_| fp.family.sample(&theta, &mut r)).collect()
}

/// Hyperparameters actually used for sampling. Discrete-uniform bounds are
/// rounded back onto the integers since a posterior mean need not be integral.
pub(crate) fn sampling_theta(fp: &FittedPrior) -> Vec<f64> {
    let mut theta = fp.theta().to_vec();
    if fp.family == Family::DiscreteUniform {
        theta = vec![theta[0].round(), theta[1].round().max(theta[0].round())];
    }
    theta
}

#[cfg(test)]
mod tests;
