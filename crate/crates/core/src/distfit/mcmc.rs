//! Random-walk Metropolis over family hyperparameters.
//!
//! Positive parameters move on the log scale and probabilities on the logit
//! scale, with flat priors on those transformed coordinates. The discrete
//! uniform bounds move by rounded Gaussian steps on the integers.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::family::Family;
use super::fit::{fit_family, Observations};
use super::DistFitError;
use crate::rng;

const MAX_NONFINITE_RUN: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    /// Per-parameter proposal scales on the transformed scale. `None` uses a
    /// Laplace-approximation covariance scaled by 2.38/sqrt(d).
    #[serde(default)]
    pub scales: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iter: 20_000,
            burn_in: 5_000,
            scales: None,
            seed: 0,
        }
    }
}

impl McmcConfig {
    fn validate(&self, d: usize) -> Result<(), DistFitError> {
        if self.burn_in >= self.n_iter {
            return Err(DistFitError::InvalidConfig(format!(
                "burn_in {} must be below n_iter {}",
                self.burn_in, self.n_iter
            )));
        }
        if let Some(s) = &self.scales {
            if s.len() != d || s.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(DistFitError::InvalidConfig(
                    "proposal scales must be positive, one per parameter".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Posterior summary of a hyperparameter chain, in natural parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub acceptance_rate: f64,
    pub n_kept: usize,
    #[serde(skip)]
    pub draws: Vec<Vec<f64>>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn to_unconstrained(family: Family, theta: &[f64]) -> Vec<f64> {
    match family {
        Family::Normal | Family::Logistic | Family::Cauchy => vec![theta[0], theta[1].ln()],
        Family::NegativeBinomial => vec![theta[0].ln(), logit(theta[1])],
        Family::Binomial => vec![logit(theta[0])],
        Family::DiscreteUniform => theta.to_vec(),
    }
}

fn to_natural(family: Family, phi: &[f64]) -> Vec<f64> {
    match family {
        Family::Normal | Family::Logistic | Family::Cauchy => vec![phi[0], phi[1].exp()],
        Family::NegativeBinomial => vec![phi[0].exp(), expit(phi[1])],
        Family::Binomial => vec![expit(phi[0])],
        Family::DiscreteUniform => phi.to_vec(),
    }
}

/// Cholesky factor of a symmetric positive-definite matrix.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let v = a[i][i] - s;
                if !(v > 0.0) {
                    return None;
                }
                l[i][j] = v.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// Proposal factor from the inverse negative Hessian of the log target.
fn laplace_factor<F: Fn(&[f64]) -> f64>(target: &F, phi: &[f64]) -> Vec<Vec<f64>> {
    let d = phi.len();
    let h: Vec<f64> = phi.iter().map(|p| 1e-4 * p.abs().max(1.0)).collect();
    let f0 = target(phi);
    let at = |di: &[(usize, f64)]| {
        let mut x = phi.to_vec();
        for &(i, s) in di {
            x[i] += s;
        }
        target(&x)
    };
    let mut hess = vec![vec![0.0; d]; d];
    for i in 0..d {
        hess[i][i] = (at(&[(i, h[i])]) - 2.0 * f0 + at(&[(i, -h[i])])) / (h[i] * h[i]);
        for j in 0..i {
            let v = (at(&[(i, h[i]), (j, h[j])])
                - at(&[(i, h[i]), (j, -h[j])])
                - at(&[(i, -h[i]), (j, h[j])])
                + at(&[(i, -h[i]), (j, -h[j])]))
                / (4.0 * h[i] * h[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    // covariance = (-H)^-1
    let neg: Vec<Vec<f64>> = hess
        .iter()
        .map(|r| r.iter().map(|v| -v).collect())
        .collect();
    let cov = match d {
        1 => Some(vec![vec![1.0 / neg[0][0]]]),
        2 => {
            let det = neg[0][0] * neg[1][1] - neg[0][1] * neg[1][0];
            (det > 0.0).then(|| {
                vec![
                    vec![neg[1][1] / det, -neg[0][1] / det],
                    vec![-neg[1][0] / det, neg[0][0] / det],
                ]
            })
        }
        _ => None,
    };
    let factor = cov.and_then(|c| cholesky(&c));
    let scale = 2.38 / (d as f64).sqrt();
    match factor {
        Some(l) => l
            .into_iter()
            .map(|row| row.into_iter().map(|v| v * scale).collect())
            .collect(),
        None => {
            let mut l = vec![vec![0.0; d]; d];
            for i in 0..d {
                let v = if neg[i][i] > 0.0 {
                    neg[i][i].powf(-0.5)
                } else {
                    0.1
                };
                l[i][i] = scale * v;
            }
            l
        }
    }
}

/// Sample the posterior of `family`'s hyperparameters given `sample`.
pub fn mcmc_posterior(
    family: Family,
    sample: &[f64],
    cfg: &McmcConfig,
) -> Result<ChainSummary, DistFitError> {
    let d = family.n_params();
    cfg.validate(d)?;
    let (theta_hat, _) = fit_family(family, sample)?;
    let obs = Observations::new(sample);
    let mut rng = rng::stream(cfg.seed, 0);

    let discrete_bounds = family == Family::DiscreteUniform;
    if family == Family::Binomial && (theta_hat[0] <= 0.0 || theta_hat[0] >= 1.0) {
        // flat prior on the logit scale is improper for an all-equal bit
        return Err(DistFitError::DegenerateSample(family));
    }

    let target = |phi: &[f64]| obs.loglik(family, &to_natural(family, phi));
    let mut phi = to_unconstrained(family, &theta_hat);
    let mut current = target(&phi);
    if !current.is_finite() {
        return Err(DistFitError::ChainDiverged(0));
    }

    let factor = match (&cfg.scales, discrete_bounds) {
        (Some(s), _) => diag(s),
        (None, true) => diag(&[1.0, 1.0]),
        (None, false) => laplace_factor(&target, &phi),
    };

    let n_keep = cfg.n_iter - cfg.burn_in;
    let mut draws = Vec::with_capacity(n_keep);
    let mut accepted = 0usize;
    let mut nonfinite_run = 0usize;
    let mut z = vec![0.0; d];
    for it in 0..cfg.n_iter {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let mut prop: Vec<f64> = (0..d)
            .map(|i| phi[i] + (0..=i).map(|k| factor[i][k] * z[k]).sum::<f64>())
            .collect();
        if discrete_bounds {
            for (p, c) in prop.iter_mut().zip(&phi) {
                *p = c + (*p - c).round();
            }
        }
        let lp = target(&prop);
        if lp.is_finite() {
            nonfinite_run = 0;
            let log_u: f64 = rng.random::<f64>().ln();
            if log_u < lp - current {
                phi = prop;
                current = lp;
                accepted += 1;
            }
        } else {
            nonfinite_run += 1;
            if nonfinite_run >= MAX_NONFINITE_RUN {
                return Err(DistFitError::ChainDiverged(nonfinite_run));
            }
            // keep the uniform stream aligned with the finite branch
            let _: f64 = rng.random();
        }
        if it >= cfg.burn_in {
            draws.push(to_natural(family, &phi));
        }
    }

    let m = draws.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| draws.iter().map(|x| x[j]).sum::<f64>() / m)
        .collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            let v =
                draws.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
            v.sqrt()
        })
        .collect();
    Ok(ChainSummary {
        mean,
        sd,
        acceptance_rate: accepted as f64 / cfg.n_iter as f64,
        n_kept: draws.len(),
        draws,
    })
}

fn diag(s: &[f64]) -> Vec<Vec<f64>> {
    let d = s.len();
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { s[i] } else { 0.0 }).collect())
        .collect()
}
