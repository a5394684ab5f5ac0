use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Candidate distribution families for priors and residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Normal,
    Logistic,
    Cauchy,
    NegativeBinomial,
    /// A single Bernoulli component; a binary-encoded categorical gets one per bit.
    Binomial,
    DiscreteUniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    RealLine,
    NonNegativeIntegers,
    Bits,
    IntegerInterval,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Normal,
        Family::Logistic,
        Family::Cauchy,
        Family::NegativeBinomial,
        Family::Binomial,
        Family::DiscreteUniform,
    ];

    pub fn n_params(self) -> usize {
        match self {
            Family::Binomial => 1,
            _ => 2,
        }
    }

    pub fn support(self) -> Support {
        match self {
            Family::Normal | Family::Logistic | Family::Cauchy => Support::RealLine,
            Family::NegativeBinomial => Support::NonNegativeIntegers,
            Family::Binomial => Support::Bits,
            Family::DiscreteUniform => Support::IntegerInterval,
        }
    }

    pub fn is_discrete(self) -> bool {
        self.support() != Support::RealLine
    }

    pub fn tag(self) -> &'static str {
        match self {
            Family::Normal => "normal",
            Family::Logistic => "logistic",
            Family::Cauchy => "cauchy",
            Family::NegativeBinomial => "negative_binomial",
            Family::Binomial => "binomial",
            Family::DiscreteUniform => "discrete_uniform",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.tag() == tag)
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::Normal => &["mu", "sigma"],
            Family::Logistic => &["mu", "s"],
            Family::Cauchy => &["x0", "gamma"],
            Family::NegativeBinomial => &["n", "p"],
            Family::Binomial => &["p"],
            Family::DiscreteUniform => &["a", "b"],
        }
    }

    /// Whether every value lies in the support of the family.
    pub fn accepts(self, sample: &[f64]) -> bool {
        let int = |x: f64| x.is_finite() && x.fract() == 0.0;
        match self.support() {
            Support::RealLine => sample.iter().all(|x| x.is_finite()),
            Support::NonNegativeIntegers => sample.iter().all(|&x| int(x) && x >= 0.0),
            Support::Bits => sample.iter().all(|&x| x == 0.0 || x == 1.0),
            Support::IntegerInterval => sample.iter().all(|&x| int(x)),
        }
    }

    pub fn valid_theta(self, theta: &[f64]) -> bool {
        if theta.len() != self.n_params() || theta.iter().any(|t| !t.is_finite()) {
            return false;
        }
        match self {
            Family::Normal | Family::Logistic | Family::Cauchy => theta[1] > 0.0,
            Family::NegativeBinomial => theta[0] > 0.0 && theta[1] > 0.0 && theta[1] <= 1.0,
            Family::Binomial => (0.0..=1.0).contains(&theta[0]),
            Family::DiscreteUniform => {
                theta[0].fract() == 0.0 && theta[1].fract() == 0.0 && theta[0] <= theta[1]
            }
        }
    }

    /// Log density (continuous) or log mass (discrete) at `x`.
    pub fn ln_density(self, theta: &[f64], x: f64) -> f64 {
        match self {
            Family::Normal => {
                let z = (x - theta[0]) / theta[1];
                -0.5 * (2.0 * PI).ln() - theta[1].ln() - 0.5 * z * z
            }
            Family::Logistic => {
                let z = ((x - theta[0]) / theta[1]).abs();
                -z - theta[1].ln() - 2.0 * (-z).exp().ln_1p()
            }
            Family::Cauchy => {
                let z = (x - theta[0]) / theta[1];
                -(PI * theta[1]).ln() - z.mul_add(z, 1.0).ln()
            }
            Family::NegativeBinomial => {
                if x < 0.0 || x.fract() != 0.0 {
                    return f64::NEG_INFINITY;
                }
                let (r, p) = (theta[0], theta[1]);
                let tail = if x == 0.0 { 0.0 } else { x * (-p).ln_1p() };
                ln_gamma(x + r) - ln_gamma(r) - ln_gamma(x + 1.0) + r * p.ln() + tail
            }
            Family::Binomial => {
                let p = theta[0];
                if x == 1.0 {
                    p.ln()
                } else if x == 0.0 {
                    (-p).ln_1p()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Family::DiscreteUniform => {
                let (a, b) = (theta[0], theta[1]);
                if x.fract() == 0.0 && x >= a && x <= b {
                    -(b - a + 1.0).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Distribution mean, `None` where it does not exist (Cauchy).
    pub fn mean(self, theta: &[f64]) -> Option<f64> {
        match self {
            Family::Normal | Family::Logistic => Some(theta[0]),
            Family::Cauchy => None,
            Family::NegativeBinomial => Some(theta[0] * (1.0 - theta[1]) / theta[1]),
            Family::Binomial => Some(theta[0]),
            Family::DiscreteUniform => Some(0.5 * (theta[0] + theta[1])),
        }
    }

    /// Mean where it exists, otherwise the location (median) parameter.
    pub fn center(self, theta: &[f64]) -> f64 {
        self.mean(theta).unwrap_or(theta[0])
    }

    /// Variance where it exists.
    pub fn variance(self, theta: &[f64]) -> Option<f64> {
        match self {
            Family::Normal => Some(theta[1] * theta[1]),
            Family::Logistic => Some(theta[1] * theta[1] * PI * PI / 3.0),
            Family::Cauchy => None,
            Family::NegativeBinomial => Some(theta[0] * (1.0 - theta[1]) / (theta[1] * theta[1])),
            Family::Binomial => Some(theta[0] * (1.0 - theta[0])),
            Family::DiscreteUniform => {
                let w = theta[1] - theta[0] + 1.0;
                Some((w * w - 1.0) / 12.0)
            }
        }
    }

    /// One draw. Inverse CDF for logistic, Cauchy, discrete uniform and
    /// Bernoulli; gamma-Poisson mixture for the negative binomial.
    pub fn sample<R: Rng + ?Sized>(self, theta: &[f64], rng: &mut R) -> f64 {
        match self {
            Family::Normal => {
                let z: f64 = rng.sample(StandardNormal);
                theta[0] + theta[1] * z
            }
            Family::Logistic => {
                let u = open_unit(rng);
                theta[0] + theta[1] * (u / (1.0 - u)).ln()
            }
            Family::Cauchy => {
                let u = open_unit(rng);
                theta[0] + theta[1] * (PI * (u - 0.5)).tan()
            }
            Family::NegativeBinomial => {
                let (r, p) = (theta[0], theta[1]);
                if p >= 1.0 {
                    return 0.0;
                }
                let lambda = Gamma::new(r, (1.0 - p) / p)
                    .expect("validated shape and scale")
                    .sample(rng);
                if lambda <= 0.0 {
                    0.0
                } else {
                    Poisson::new(lambda).expect("positive rate").sample(rng)
                }
            }
            Family::Binomial => {
                let u: f64 = rng.random();
                if u < theta[0] {
                    1.0
                } else {
                    0.0
                }
            }
            Family::DiscreteUniform => {
                let (a, b) = (theta[0], theta[1]);
                let u: f64 = rng.random();
                (a + (u * (b - a + 1.0)).floor()).min(b)
            }
        }
    }
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}
