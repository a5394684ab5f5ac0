use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use super::family::Family;
use super::mcmc::ChainSummary;
use super::optimize::{bisect, golden_section, nelder_mead};
use super::DistFitError;
use crate::stats;

pub const MIN_SAMPLE: usize = 8;

/// A family fitted to a sample, with its information-criterion score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPrior {
    pub family: Family,
    pub theta_hat: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub model_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainSummary>,
}

impl FittedPrior {
    /// Hyperparameters used for sampling: the posterior mean when a chain
    /// has been run, the MLE otherwise.
    pub fn theta(&self) -> &[f64] {
        match &self.chain {
            Some(c) => &c.mean,
            None => &self.theta_hat,
        }
    }

    /// Point mass at a constant, used to pin a parameter.
    pub fn constant(value: f64) -> FittedPrior {
        FittedPrior {
            family: Family::DiscreteUniform,
            theta_hat: vec![value, value],
            loglik: 0.0,
            aic: 4.0,
            model_prob: 1.0,
            chain: None,
        }
    }
}

/// Sample with a value tally for integer data so discrete likelihoods cost
/// one term per distinct value.
pub(crate) struct Observations<'a> {
    pub values: &'a [f64],
    pub tally: Option<Vec<(f64, f64)>>,
}

impl<'a> Observations<'a> {
    pub fn new(values: &'a [f64]) -> Self {
        let tally = stats::all_integral(values).then(|| {
            let s = stats::sorted(values);
            let mut t: Vec<(f64, f64)> = Vec::new();
            for x in s {
                match t.last_mut() {
                    Some((v, c)) if *v == x => *c += 1.0,
                    _ => t.push((x, 1.0)),
                }
            }
            t
        });
        Observations { values, tally }
    }

    pub fn loglik(&self, family: Family, theta: &[f64]) -> f64 {
        if !family.valid_theta(theta) {
            return f64::NEG_INFINITY;
        }
        match &self.tally {
            Some(t) => t
                .iter()
                .map(|&(x, c)| c * family.ln_density(theta, x))
                .sum(),
            None => self
                .values
                .iter()
                .map(|&x| family.ln_density(theta, x))
                .sum(),
        }
    }
}

/// Log-likelihood of `sample` under `family` with hyperparameters `theta`.
pub fn log_likelihood(family: Family, theta: &[f64], sample: &[f64]) -> f64 {
    Observations::new(sample).loglik(family, theta)
}

/// Maximum-likelihood fit of one family. Returns `(theta_hat, loglik)`.
pub fn fit_family(family: Family, sample: &[f64]) -> Result<(Vec<f64>, f64), DistFitError> {
    if sample.len() < MIN_SAMPLE {
        return Err(DistFitError::TooFewValues(sample.len(), MIN_SAMPLE));
    }
    if !family.accepts(sample) {
        return Err(DistFitError::SupportViolation(family));
    }
    let obs = Observations::new(sample);
    let theta = match family {
        Family::Normal => {
            let sd = stats::population_variance(sample).sqrt();
            if sd <= 0.0 {
                return Err(DistFitError::DegenerateSample(family));
            }
            vec![stats::mean(sample), sd]
        }
        Family::Logistic | Family::Cauchy => fit_location_scale(family, sample, &obs)?,
        Family::NegativeBinomial => fit_negative_binomial(sample, &obs)?,
        Family::Binomial => vec![stats::mean(sample)],
        Family::DiscreteUniform => {
            let lo = sample.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            vec![lo, hi]
        }
    };
    let ll = obs.loglik(family, &theta);
    Ok((theta, ll))
}

fn fit_location_scale(
    family: Family,
    sample: &[f64],
    obs: &Observations,
) -> Result<Vec<f64>, DistFitError> {
    let s = stats::sorted(sample);
    let med = stats::quantile_sorted(&s, 0.5);
    let iqr = stats::quantile_sorted(&s, 0.75) - stats::quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 {
        iqr
    } else {
        stats::population_variance(sample).sqrt()
    };
    if spread <= 0.0 {
        return Err(DistFitError::DegenerateSample(family));
    }
    // quartiles sit at mu +/- s ln 3 (logistic) and x0 +/- gamma (Cauchy)
    let scale0 = match family {
        Family::Logistic => spread / (2.0 * 3f64.ln()),
        _ => spread / 2.0,
    };
    let nll = |p: &[f64]| -obs.loglik(family, &[p[0], p[1].exp()]);
    let mut x = vec![med, scale0.ln()];
    let mut step = vec![0.5 * scale0, 0.5];
    for _ in 0..3 {
        let (best, _) = nelder_mead(nll, &x, &step, 1e-13, 4000);
        x = best;
        step = vec![0.05 * x[1].exp(), 0.05];
    }
    Ok(vec![x[0], x[1].exp()])
}

/// Profile score of the negative binomial in `r` with `p` at its conditional
/// MLE `r / (r + mean)`.
fn nb_profile_score(r: f64, obs: &Observations, n: f64, xbar: f64) -> f64 {
    let tally = obs.tally.as_ref().expect("integer sample");
    let s: f64 = tally.iter().map(|&(x, c)| c * digamma(x + r)).sum();
    s - n * digamma(r) + n * (r / (r + xbar)).ln()
}

fn fit_negative_binomial(sample: &[f64], obs: &Observations) -> Result<Vec<f64>, DistFitError> {
    let n = sample.len() as f64;
    let xbar = stats::mean(sample);
    if xbar <= 0.0 {
        return Err(DistFitError::DegenerateSample(Family::NegativeBinomial));
    }
    let profile = |log_r: f64| {
        let r = log_r.exp();
        -obs.loglik(Family::NegativeBinomial, &[r, r / (r + xbar)])
    };
    let (lo, hi) = (-12.0, 18.0);
    let log_r = golden_section(profile, lo, hi, 1e-9);
    let mut r = log_r.exp();
    // polish on the score when the optimum is interior
    let (a, b) = (r * 0.999, r * 1.001);
    let (ga, gb) = (
        nb_profile_score(a, obs, n, xbar),
        nb_profile_score(b, obs, n, xbar),
    );
    if ga.is_finite() && gb.is_finite() && ga.signum() != gb.signum() {
        r = bisect(|r| nb_profile_score(r, obs, n, xbar), a, b, 200);
    }
    Ok(vec![r, r / (r + xbar)])
}

/// Akaike information criterion, `-2 loglik + 2k`.
pub fn aic(loglik: f64, k: usize) -> f64 {
    -2.0 * loglik + 2.0 * k as f64
}

/// Model probabilities proportional to `exp(-AIC/2)`, computed relative to the
/// smallest AIC so large magnitudes do not underflow.
pub fn model_probabilities(aics: &[f64]) -> Vec<f64> {
    let min = aics.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = aics.iter().map(|a| (-(a - min) / 2.0).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Fit every admissible candidate and rank by AIC (ascending).
///
/// Candidates whose support excludes the sample, or that cannot be fitted
/// because the sample is degenerate for them, are skipped. When the sample is
/// integer valued and a discrete candidate is admissible, continuous
/// candidates are skipped too so densities are never ranked against masses.
pub fn select_model(
    sample: &[f64],
    candidates: &[Family],
) -> Result<Vec<FittedPrior>, DistFitError> {
    if sample.len() < MIN_SAMPLE {
        return Err(DistFitError::TooFewValues(sample.len(), MIN_SAMPLE));
    }
    let mut admissible: Vec<Family> = Vec::new();
    for &f in candidates {
        if f.accepts(sample) && !admissible.contains(&f) {
            admissible.push(f);
        }
    }
    if stats::all_integral(sample) && admissible.iter().any(|f| f.is_discrete()) {
        admissible.retain(|f| f.is_discrete());
    }

    let mut fitted: Vec<FittedPrior> = admissible
        .into_iter()
        .filter_map(|family| {
            let (theta_hat, loglik) = fit_family(family, sample).ok()?;
            loglik.is_finite().then(|| FittedPrior {
                family,
                aic: aic(loglik, family.n_params()),
                theta_hat,
                loglik,
                model_prob: 0.0,
                chain: None,
            })
        })
        .collect();
    if fitted.is_empty() {
        return Err(DistFitError::NoValidCandidate);
    }
    let aics: Vec<f64> = fitted.iter().map(|f| f.aic).collect();
    for (f, p) in fitted.iter_mut().zip(model_probabilities(&aics)) {
        f.model_prob = p;
    }
    fitted.sort_by(|a, b| a.aic.total_cmp(&b.aic));
    Ok(fitted)
}
