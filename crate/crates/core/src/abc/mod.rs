//! Weighted approximate Bayesian computation.
//!
//! Parameter draws from the priors are pushed through a forward model plus
//! residual noise, each simulated sample is reduced to five summary
//! statistics, and every draw keeps an importance weight given by a kernel of
//! its summary distance to the observed data.

mod dip;

#[cfg(test)]
mod tests;

use std::fmt;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distfit::{sampling_theta, Family, FittedPrior};
use crate::surrogate::SurrogateModel;
use crate::{rng, stats};

pub use dip::{dip_statistic, DIP_CRITICAL_SQRT_N};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbcError {
    #[error("sample has {0} values, at least {1} are required")]
    TooFewValues(usize, usize),
    #[error("no prior for feature `{0}`")]
    MissingPrior(String),
    #[error("every weight is zero; the kernel scale does not match the distances")]
    AllZeroWeights,
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("quantile level {0} is outside (0, 1)")]
    InvalidLevel(f64),
    #[error("invalid simulation settings: {0}")]
    InvalidConfig(String),
}

/// Mean, sample sd, median and type-7 quartiles, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryVector {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl SummaryVector {
    pub fn to_array(&self) -> [f64; 5] {
        [self.mean, self.sd, self.median, self.q1, self.q3]
    }

    pub fn distance(&self, other: &SummaryVector) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn summarize(sample: &[f64]) -> Result<SummaryVector, AbcError> {
    if sample.len() < 2 {
        return Err(AbcError::TooFewValues(sample.len(), 2));
    }
    let s = stats::sorted(sample);
    Ok(SummaryVector {
        mean: stats::mean(sample),
        sd: stats::sample_sd(sample),
        median: stats::quantile_sorted(&s, 0.5),
        q1: stats::quantile_sorted(&s, 0.25),
        q3: stats::quantile_sorted(&s, 0.75),
    })
}

/// Weighting kernel applied to summary distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum Kernel {
    /// Density of Logistic(mu, s) evaluated at the distance.
    LogisticPdf { mu: f64, s: f64 },
    /// exp(-d^2 / (2 sigma^2)).
    Gaussian { sigma: f64 },
    /// 1 when d <= epsilon, else 0 (classic rejection).
    Indicator { epsilon: f64 },
}

pub type KernelDescriptor = Kernel;

impl Kernel {
    /// Logistic kernel with the location and scale of a fitted residual law.
    pub fn from_residuals(fp: &FittedPrior) -> Result<Kernel, AbcError> {
        let t = fp.theta();
        match fp.family {
            Family::Logistic | Family::Normal | Family::Cauchy => {
                Ok(Kernel::LogisticPdf { mu: t[0], s: t[1] })
            }
            f => Err(AbcError::InvalidKernel(format!(
                "cannot build a kernel from a {f} fit"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), AbcError> {
        let ok = match *self {
            Kernel::LogisticPdf { mu, s } => mu.is_finite() && s > 0.0 && s.is_finite(),
            Kernel::Gaussian { sigma } => sigma > 0.0 && sigma.is_finite(),
            Kernel::Indicator { epsilon } => epsilon >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(AbcError::InvalidKernel(format!("{self:?}")))
        }
    }

    pub fn weight(&self, d: f64) -> f64 {
        match *self {
            Kernel::LogisticPdf { mu, s } => {
                let e = (-((d - mu) / s).abs()).exp();
                e / (s * (1.0 + e) * (1.0 + e))
            }
            Kernel::Gaussian { sigma } => (-0.5 * (d / sigma) * (d / sigma)).exp(),
            Kernel::Indicator { epsilon } => {
                if d <= epsilon {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Additive noise on forward-model outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum NoiseModel {
    Zero,
    Distribution { family: Family, theta: Vec<f64> },
}

impl NoiseModel {
    pub fn from_prior(fp: &FittedPrior) -> NoiseModel {
        NoiseModel::Distribution {
            family: fp.family,
            theta: sampling_theta(fp),
        }
    }

    pub fn sample(&self, r: &mut rng::Rng) -> f64 {
        match self {
            NoiseModel::Zero => 0.0,
            NoiseModel::Distribution { family, theta } => family.sample(theta, r),
        }
    }
}

/// A deterministic map from a raw feature vector to a predicted output.
pub trait ForwardModel: Sync {
    fn feature_names(&self) -> Vec<String>;
    fn eval(&self, x: &[f64]) -> f64;
}

impl ForwardModel for SurrogateModel {
    fn feature_names(&self) -> Vec<String> {
        self.feature_names.clone()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.predict_raw(x)
            .expect("simulation rows match the model width")
    }
}

/// Forward model given by a closure.
pub struct FnModel<F> {
    pub names: Vec<String>,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> ForwardModel for FnModel<F> {
    fn feature_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSet {
    pub feature_names: Vec<String>,
    /// Parameter vector of every draw, raw units, in model feature order.
    pub draws: Vec<Vec<f64>>,
    /// Simulated measurement sample of every draw.
    pub samples: Vec<Vec<f64>>,
}

impl SimulationSet {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Draw parameters from `priors`, evaluate the model once per draw and add
/// `sims_per_draw` independent noise draws. Draw `i` uses its own RNG stream.
pub fn simulate_forward(
    model: &dyn ForwardModel,
    priors: &[(String, FittedPrior)],
    noise: &NoiseModel,
    n_sims: usize,
    sims_per_draw: usize,
    seed: u64,
) -> Result<SimulationSet, AbcError> {
    if n_sims < 1 {
        return Err(AbcError::InvalidConfig("n_sims must be at least 1".into()));
    }
    if sims_per_draw < 2 {
        return Err(AbcError::InvalidConfig(
            "sims_per_draw must be at least 2".into(),
        ));
    }
    let names = model.feature_names();
    let laws: Vec<(Family, Vec<f64>)> = names
        .iter()
        .map(|n| {
            priors
                .iter()
                .find(|(p, _)| p == n)
                .map(|(_, fp)| (fp.family, sampling_theta(fp)))
                .ok_or_else(|| AbcError::MissingPrior(n.clone()))
        })
        .collect::<Result<_, _>>()?;
    let (draws, samples): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (0..n_sims as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i);
            let x: Vec<f64> = laws.iter().map(|(f, t)| f.sample(t, &mut r)).collect();
            let y0 = model.eval(&x);
            let sample = (0..sims_per_draw)
                .map(|_| y0 + noise.sample(&mut r))
                .collect();
            (x, sample)
        })
        .unzip();
    Ok(SimulationSet {
        feature_names: names,
        draws,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WeighOptions {
    /// Scale each summary component by its sd across the simulations.
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPosterior {
    pub feature_names: Vec<String>,
    pub draws: Vec<Vec<f64>>,
    pub raw_weights: Vec<f64>,
    pub weights: Vec<f64>,
    pub distances: Vec<f64>,
    pub ess: f64,
    pub kernel: Kernel,
}

impl WeightedPosterior {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn ess_fraction(&self) -> f64 {
        self.ess / self.len() as f64
    }

    /// ESS as a percentage of the draw count, e.g. `99.73%`.
    pub fn ess_percent(&self) -> String {
        format_percent(self.ess_fraction())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }
}

pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}%", 100.0 * fraction)
}

/// Normalize raw weights and compute the effective sample size.
pub fn normalize(raw: &[f64]) -> Result<(Vec<f64>, f64), AbcError> {
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(AbcError::AllZeroWeights);
    }
    let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    Ok((w, ess.clamp(1.0, raw.len() as f64)))
}

/// Weight each draw by the kernel of its summary distance to the observations.
pub fn weigh(
    sims: &SimulationSet,
    obs: &[f64],
    kernel: &Kernel,
) -> Result<WeightedPosterior, AbcError> {
    weigh_with(sims, obs, kernel, WeighOptions::default())
}

pub fn weigh_with(
    sims: &SimulationSet,
    obs: &[f64],
    kernel: &Kernel,
    opts: WeighOptions,
) -> Result<WeightedPosterior, AbcError> {
    let target = summarize(obs)?;
    let summaries: Vec<SummaryVector> = sims
        .samples
        .iter()
        .map(|s| summarize(s))
        .collect::<Result<_, _>>()?;
    let (raw_weights, distances) = weigh_summaries(&summaries, &target, kernel, opts)?;
    let (weights, ess) = normalize(&raw_weights)?;
    Ok(WeightedPosterior {
        feature_names: sims.feature_names.clone(),
        draws: sims.draws.clone(),
        raw_weights,
        weights,
        distances,
        ess,
        kernel: *kernel,
    })
}

/// Raw weights and distances for precomputed summaries.
pub fn weigh_summaries(
    sims: &[SummaryVector],
    obs: &SummaryVector,
    kernel: &Kernel,
    opts: WeighOptions,
) -> Result<(Vec<f64>, Vec<f64>), AbcError> {
    kernel.validate()?;
    let scale: [f64; 5] = if opts.standardize && sims.len() >= 2 {
        let mut sc = [1.0; 5];
        for (c, s) in sc.iter_mut().enumerate() {
            let col: Vec<f64> = sims.iter().map(|v| v.to_array()[c]).collect();
            let sd = stats::sample_sd(&col);
            if sd > 0.0 {
                *s = sd;
            }
        }
        sc
    } else {
        [1.0; 5]
    };
    let o = obs.to_array();
    let distances: Vec<f64> = sims
        .iter()
        .map(|s| {
            s.to_array()
                .iter()
                .zip(o)
                .zip(scale)
                .map(|((a, b), c)| ((a - b) / c).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let raw = distances.iter().map(|&d| kernel.weight(d)).collect();
    Ok((raw, distances))
}

/// Smallest value whose cumulative normalized weight reaches `p`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], p: f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let total: f64 = weights.iter().sum();
    let mut cum = 0.0;
    for &i in &idx {
        cum += weights[i] / total;
        if cum >= p - 1e-12 {
            return values[i];
        }
    }
    values[*idx.last().expect("nonempty")]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CredibleInterval {
    pub lower_level: f64,
    pub upper_level: f64,
    pub lower: f64,
    pub upper: f64,
}

impl CredibleInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub feature: String,
    pub mean: f64,
    pub median: f64,
    pub intervals: Vec<CredibleInterval>,
}

impl PosteriorSummary {
    /// Interval whose levels are (lo, hi), if it was requested.
    pub fn interval(&self, lo: f64, hi: f64) -> Option<&CredibleInterval> {
        self.intervals
            .iter()
            .find(|c| (c.lower_level - lo).abs() < 1e-12 && (c.upper_level - hi).abs() < 1e-12)
    }
}

/// 95% and 50% central levels.
pub const DEFAULT_LEVELS: [(f64, f64); 2] = [(0.025, 0.975), (0.25, 0.75)];

pub fn posterior_summary(
    wp: &WeightedPosterior,
    feature: &str,
    levels: &[(f64, f64)],
) -> Result<PosteriorSummary, AbcError> {
    let j = wp
        .feature_index(feature)
        .ok_or_else(|| AbcError::UnknownFeature(feature.to_string()))?;
    if wp.is_empty() {
        return Err(AbcError::TooFewValues(0, 1));
    }
    for &(a, b) in levels {
        for p in [a, b] {
            if !(p > 0.0 && p < 1.0) {
                return Err(AbcError::InvalidLevel(p));
            }
        }
    }
    let v = wp.column(j);
    let q = |p: f64| weighted_quantile(&v, &wp.weights, p);
    Ok(PosteriorSummary {
        feature: feature.to_string(),
        mean: v.iter().zip(&wp.weights).map(|(x, w)| x * w).sum(),
        median: q(0.5),
        intervals: levels
            .iter()
            .map(|&(a, b)| CredibleInterval {
                lower_level: a,
                upper_level: b,
                lower: q(a),
                upper: q(b),
            })
            .collect(),
    })
}

/// Systematic resampling: `n` indices with one uniform offset `u0` in [0, 1).
pub fn systematic_resample(weights: &[f64], n: usize, u0: f64) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0] / total;
    let mut i = 0;
    for k in 0..n {
        let u = (u0 + k as f64) / n as f64;
        while u >= cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i] / total;
        }
        out.push(i);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
}

/// Densities of two samples over shared equal-width bins.
pub fn histogram_pair(observed: &[f64], predicted: &[f64], bins: usize) -> Histogram {
    let lo = observed
        .iter()
        .chain(predicted)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = observed
        .iter()
        .chain(predicted)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let density = |xs: &[f64]| {
        let mut c = vec![0.0; bins];
        for &x in xs {
            let b = (((x - lo) / width) as usize).min(bins - 1);
            c[b] += 1.0;
        }
        let n = xs.len().max(1) as f64;
        c.iter().map(|v| v / (n * width)).collect()
    };
    Histogram {
        edges,
        observed: density(observed),
        predicted: density(predicted),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub observed_mean: f64,
    pub predicted_mean: f64,
    pub observed_sd: f64,
    pub predicted_sd: f64,
    pub mean_difference: f64,
    pub n_predicted: usize,
    pub predicted: Vec<f64>,
    pub histogram: Histogram,
}

const VALIDATION_BINS: usize = 30;

/// Resample posterior draws by weight, push each through the model with one
/// noise draw, and compare the predictions to the observations.
pub fn forward_validate(
    wp: &WeightedPosterior,
    model: &dyn ForwardModel,
    noise: &NoiseModel,
    obs: &[f64],
    seed: u64,
) -> Result<ValidationReport, AbcError> {
    if obs.len() < 2 {
        return Err(AbcError::TooFewValues(obs.len(), 2));
    }
    if wp.is_empty() {
        return Err(AbcError::TooFewValues(0, 1));
    }
    let mut r = rng::stream(seed, 0);
    let u0: f64 = r.random();
    let idx = systematic_resample(&wp.weights, wp.len(), u0);
    let predicted: Vec<f64> = idx
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut rk = rng::stream(seed, 1 + k as u64);
            model.eval(&wp.draws[i]) + noise.sample(&mut rk)
        })
        .collect();
    let (om, pm) = (stats::mean(obs), stats::mean(&predicted));
    Ok(ValidationReport {
        observed_mean: om,
        predicted_mean: pm,
        observed_sd: stats::sample_sd(obs),
        predicted_sd: stats::sample_sd(&predicted),
        mean_difference: (om - pm).abs(),
        n_predicted: predicted.len(),
        histogram: histogram_pair(obs, &predicted, VALIDATION_BINS),
        predicted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyReport {
    pub n: usize,
    /// Share of the observed variance reproduced by the quantile function
    /// rebuilt from the five summaries.
    pub explained_variance: f64,
    pub dip: f64,
    pub dip_threshold: f64,
    pub multimodal: bool,
}

impl fmt::Display for SufficiencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n = {}, explained variance = {:.4}, dip = {:.4} (threshold {:.4}){}",
            self.n,
            self.explained_variance,
            self.dip,
            self.dip_threshold,
            if self.multimodal { ", multimodal" } else { "" }
        )
    }
}

/// Quantile function implied by the summaries: uniform density between the
/// quartiles and median (the entropy maximizer under those quantile
/// constraints) with Gaussian tails of the summary sd beyond the quartiles.
pub fn reconstructed_quantile(s: &SummaryVector, p: f64) -> f64 {
    let z25 = stats::normal_quantile(0.25);
    if p < 0.25 {
        s.q1 + s.sd * (stats::normal_quantile(p) - z25)
    } else if p < 0.5 {
        s.q1 + (s.median - s.q1) * (p - 0.25) / 0.25
    } else if p <= 0.75 {
        s.median + (s.q3 - s.median) * (p - 0.5) / 0.25
    } else {
        s.q3 + s.sd * (stats::normal_quantile(p) + z25)
    }
}

pub fn sufficiency_check(
    obs: &[f64],
    summary: &SummaryVector,
) -> Result<SufficiencyReport, AbcError> {
    const MIN: usize = 8;
    if obs.len() < MIN {
        return Err(AbcError::TooFewValues(obs.len(), MIN));
    }
    let n = obs.len();
    let s = stats::sorted(obs);
    let mean = stats::mean(obs);
    let sst: f64 = s.iter().map(|x| (x - mean) * (x - mean)).sum();
    let explained_variance = if sst > 0.0 {
        let sse: f64 = s
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let q = reconstructed_quantile(summary, (i as f64 + 0.5) / n as f64);
                (x - q) * (x - q)
            })
            .sum();
        (1.0 - sse / sst).max(0.0)
    } else {
        1.0
    };
    let dip = dip_statistic(obs);
    let dip_threshold = DIP_CRITICAL_SQRT_N / (n as f64).sqrt();
    Ok(SufficiencyReport {
        n,
        explained_variance,
        dip,
        dip_threshold,
        multimodal: dip > dip_threshold,
    })
}
