use super::*;
use crate::stats;

fn draws(family: Family, theta: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let fp = FittedPrior {
        family,
        theta_hat: theta.to_vec(),
        loglik: 0.0,
        aic: 0.0,
        model_prob: 1.0,
        chain: None,
    };
    sample_prior(&fp, n, seed)
}

fn table3(family: Family) -> Vec<f64> {
    match family {
        Family::Normal => vec![4865.79, 3016.80],
        Family::Logistic => vec![1763.00, 214.22],
        Family::Cauchy => vec![578.56, 30.15],
        Family::NegativeBinomial => vec![2.322, 0.009],
        Family::Binomial => vec![0.426],
        Family::DiscreteUniform => vec![7.0, 42.0],
    }
}

#[test]
fn discrete_uniform_mle_is_sample_range() {
    let mut s: Vec<f64> = (7..=42).map(f64::from).collect();
    s.extend([10.0, 20.0]);
    let (theta, ll) = fit_family(Family::DiscreteUniform, &s).unwrap();
    assert_eq!(theta, vec![7.0, 42.0]);
    assert!((ll + s.len() as f64 * 36f64.ln()).abs() < 1e-9);
}

#[test]
fn bernoulli_mle_is_bit_mean() {
    let s = [1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0];
    let (theta, _) = fit_family(Family::Binomial, &s).unwrap();
    assert_eq!(theta, vec![0.75]);
}

#[test]
fn fit_errors() {
    assert_eq!(
        fit_family(Family::Normal, &[1.0; 4]),
        Err(DistFitError::TooFewValues(4, 8))
    );
    assert_eq!(
        fit_family(Family::Normal, &[3.0; 10]),
        Err(DistFitError::DegenerateSample(Family::Normal))
    );
    assert_eq!(
        fit_family(Family::Logistic, &[3.0; 10]),
        Err(DistFitError::DegenerateSample(Family::Logistic))
    );
    assert_eq!(
        fit_family(Family::Binomial, &[0.0, 1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0]),
        Err(DistFitError::SupportViolation(Family::Binomial))
    );
    assert_eq!(
        fit_family(Family::NegativeBinomial, &[1.5; 9]),
        Err(DistFitError::SupportViolation(Family::NegativeBinomial))
    );
}

#[test]
fn logistic_mle_recovers_generating_values() {
    let s = draws(Family::Logistic, &[1763.00, 214.22], 100_000, 11);
    let (theta, _) = fit_family(Family::Logistic, &s).unwrap();
    assert!((theta[0] / 1763.00 - 1.0).abs() < 0.01, "{theta:?}");
    assert!((theta[1] / 214.22 - 1.0).abs() < 0.01, "{theta:?}");
}

#[test]
fn cauchy_mle_recovers_generating_values() {
    let s = draws(Family::Cauchy, &[578.56, 30.15], 20_000, 5);
    let (theta, _) = fit_family(Family::Cauchy, &s).unwrap();
    assert!((theta[0] / 578.56 - 1.0).abs() < 0.01, "{theta:?}");
    assert!((theta[1] / 30.15 - 1.0).abs() < 0.05, "{theta:?}");
}

#[test]
fn negative_binomial_score_vanishes_at_mle() {
    let s = draws(Family::NegativeBinomial, &[2.322, 0.009], 1000, 3);
    let (theta, _) = fit_family(Family::NegativeBinomial, &s).unwrap();
    let ll = |t: &[f64]| log_likelihood(Family::NegativeBinomial, t, &s);
    // five-point central differences
    for j in 0..2 {
        let h = 1e-3 * theta[j];
        let at = |k: f64| {
            let mut t = theta.clone();
            t[j] += k * h;
            ll(&t)
        };
        let g = (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h);
        assert!(g.abs() <= 1e-6, "param {j}: gradient {g}");
    }
}

#[test]
fn aic_identity_and_probabilities_sum_to_one() {
    let s = draws(Family::Logistic, &[0.0, 1.0], 2000, 9);
    let fits = select_model(&s, &[Family::Normal, Family::Logistic, Family::Cauchy]).unwrap();
    for f in &fits {
        assert_eq!(f.aic, -2.0 * f.loglik + 2.0 * f.family.n_params() as f64);
    }
    let total: f64 = fits.iter().map(|f| f.model_prob).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(fits.windows(2).all(|w| w[0].aic <= w[1].aic));
}

#[test]
fn equal_aic_gives_even_odds_and_delta_two_gives_exp_minus_one() {
    assert_eq!(model_probabilities(&[10.0, 10.0]), vec![0.5, 0.5]);
    let p = model_probabilities(&[100.0, 102.0]);
    assert!((p[1] / p[0] - (-1.0f64).exp()).abs() < 1e-15);
    assert!((p[1] / p[0] - 0.36788).abs() < 1e-5);
    // production-scale magnitudes do not underflow
    let p = model_probabilities(&[1.0e6, 1.0e6 + 2.0]);
    assert!(p.iter().all(|x| x.is_finite() && *x > 0.0));
}

#[test]
fn normal_selected_in_most_trials() {
    let cands = [Family::Normal, Family::Logistic, Family::Cauchy];
    let wins = (0..20)
        .filter(|&seed| {
            let s = draws(Family::Normal, &[0.0, 1.0], 5000, 100 + seed);
            select_model(&s, &cands).unwrap()[0].family == Family::Normal
        })
        .count();
    assert!(wins >= 18, "normal won {wins} of 20");
}

#[test]
fn invalid_support_candidates_are_skipped() {
    let s = draws(Family::Normal, &[0.0, 1.0], 100, 1);
    let fits = select_model(&s, &Family::ALL).unwrap();
    assert!(fits.iter().all(|f| !f.family.is_discrete()));
    assert_eq!(
        select_model(&s, &[Family::Binomial, Family::NegativeBinomial]),
        Err(DistFitError::NoValidCandidate)
    );
}

#[test]
fn integer_samples_are_ranked_among_discrete_families() {
    let s = draws(Family::NegativeBinomial, &[2.322, 0.009], 3000, 4);
    let fits = select_model(&s, &Family::ALL).unwrap();
    assert!(fits.iter().all(|f| f.family.is_discrete()));
    assert_eq!(fits[0].family, Family::NegativeBinomial);
}

/// Composite Simpson on `[a, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn densities_are_normalised() {
    for family in [Family::Normal, Family::Logistic] {
        let theta = table3(family);
        let (m, sc) = (theta[0], theta[1]);
        let total = simpson(
            |x| family.ln_density(&theta, x).exp(),
            m - 60.0 * sc,
            m + 60.0 * sc,
            200_000,
        );
        assert!((total - 1.0).abs() < 1e-6, "{family}: {total}");
    }
    // Cauchy through x = x0 + gamma * tan(t), truncated at |t| < pi/2 - 1e-9
    let theta = table3(Family::Cauchy);
    let lim = std::f64::consts::FRAC_PI_2 - 1e-9;
    let total = simpson(
        |t| {
            let x = theta[0] + theta[1] * t.tan();
            Family::Cauchy.ln_density(&theta, x).exp() * theta[1] / t.cos().powi(2)
        },
        -lim,
        lim,
        20_000,
    );
    assert!((total - 1.0).abs() < 1e-6, "cauchy: {total}");

    for family in [
        Family::NegativeBinomial,
        Family::Binomial,
        Family::DiscreteUniform,
    ] {
        let theta = table3(family);
        let total: f64 = (0..200_000)
            .map(|k| family.ln_density(&theta, k as f64).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "{family}: {total}");
    }
}

#[test]
fn sample_prior_support_and_boundaries() {
    let s = draws(Family::DiscreteUniform, &[7.0, 42.0], 10_000, 2);
    assert!(s
        .iter()
        .all(|&x| (7.0..=42.0).contains(&x) && x.fract() == 0.0));
    assert!(s.contains(&7.0) && s.contains(&42.0));
    let s = draws(Family::Binomial, &[0.0], 1000, 2);
    assert!(s.iter().all(|&x| x == 0.0));
    let s = draws(Family::Binomial, &[1.0], 1000, 2);
    assert!(s.iter().all(|&x| x == 1.0));
}

#[test]
fn logistic_draws_match_location_clt() {
    let (mu, s) = (1763.00, 214.22);
    let xs = draws(Family::Logistic, &[mu, s], 1_000_000, 8);
    let se = (s * std::f64::consts::PI / 3f64.sqrt()) / (xs.len() as f64).sqrt();
    assert!((stats::mean(&xs) - mu).abs() < 3.0 * se);
}

#[test]
fn sampler_means_match_family_means() {
    for family in [
        Family::Normal,
        Family::NegativeBinomial,
        Family::Binomial,
        Family::DiscreteUniform,
    ] {
        let theta = table3(family);
        let xs = draws(family, &theta, 200_000, 21);
        let se = (family.variance(&theta).unwrap() / xs.len() as f64).sqrt();
        let m = family.mean(&theta).unwrap();
        assert!((stats::mean(&xs) - m).abs() < 3.0 * se, "{family}");
    }
}

fn sample_for(family: Family, n: usize, seed: u64) -> Vec<f64> {
    draws(family, &table3(family), n, seed)
}

#[test]
fn mcmc_acceptance_in_tuning_band_for_all_families() {
    for family in Family::ALL {
        let s = sample_for(family, 1000, 31);
        let cfg = McmcConfig {
            n_iter: 6000,
            burn_in: 1000,
            scales: None,
            seed: 4,
        };
        let chain = mcmc_posterior(family, &s, &cfg).unwrap();
        assert!(
            (0.1..=0.6).contains(&chain.acceptance_rate),
            "{family}: acceptance {}",
            chain.acceptance_rate
        );
        assert_eq!(chain.n_kept, 5000);
    }
}

#[test]
fn mcmc_is_deterministic_in_seed() {
    let s = sample_for(Family::Logistic, 500, 1);
    let cfg = McmcConfig {
        n_iter: 2000,
        burn_in: 500,
        scales: None,
        seed: 77,
    };
    let a = mcmc_posterior(Family::Logistic, &s, &cfg).unwrap();
    let b = mcmc_posterior(Family::Logistic, &s, &cfg).unwrap();
    assert_eq!(a.draws, b.draws);
    assert_eq!(a, b);
}

#[test]
fn tiny_proposals_are_always_accepted() {
    let s = sample_for(Family::Normal, 500, 1);
    let cfg = McmcConfig {
        n_iter: 2000,
        burn_in: 100,
        scales: Some(vec![1e-12, 1e-12]),
        seed: 3,
    };
    let chain = mcmc_posterior(Family::Normal, &s, &cfg).unwrap();
    assert!(chain.acceptance_rate > 0.99, "{}", chain.acceptance_rate);
    let (hat, _) = fit_family(Family::Normal, &s).unwrap();
    assert!((chain.mean[0] - hat[0]).abs() < 1e-6);
}

#[test]
fn normal_posterior_mean_matches_conjugate_result() {
    let s = sample_for(Family::Normal, 5000, 12);
    let cfg = McmcConfig {
        seed: 5,
        ..McmcConfig::default()
    };
    let chain = mcmc_posterior(Family::Normal, &s, &cfg).unwrap();
    // flat prior on (mu, log sigma): the marginal posterior of mu is a
    // Student-t centred on the sample mean
    let post_mean = stats::mean(&s);
    let post_sd = stats::sample_sd(&s) / (s.len() as f64).sqrt();
    assert!((chain.mean[0] - post_mean).abs() < 3.0 * post_sd);
}

#[test]
fn mcmc_config_validation() {
    let s = sample_for(Family::Normal, 100, 1);
    let bad = McmcConfig {
        n_iter: 10,
        burn_in: 10,
        ..McmcConfig::default()
    };
    assert!(matches!(
        mcmc_posterior(Family::Normal, &s, &bad),
        Err(DistFitError::InvalidConfig(_))
    ));
    let bad = McmcConfig {
        scales: Some(vec![0.1]),
        ..McmcConfig::default()
    };
    assert!(matches!(
        mcmc_posterior(Family::Normal, &s, &bad),
        Err(DistFitError::InvalidConfig(_))
    ));
}

#[test]
fn huge_proposals_diverge() {
    let s = sample_for(Family::Normal, 200, 1);
    let cfg = McmcConfig {
        n_iter: 5000,
        burn_in: 0,
        scales: Some(vec![1e9, 1e9]),
        seed: 1,
    };
    // log-sigma steps of this size overflow or underflow sigma
    assert!(matches!(
        mcmc_posterior(Family::Normal, &s, &cfg),
        Err(DistFitError::ChainDiverged(100))
    ));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn model_probabilities_are_shift_invariant(
            aics in prop::collection::vec(-1e4f64..1e4, 2..6),
            shift in -1e5f64..1e5,
        ) {
            let p = model_probabilities(&aics);
            let shifted: Vec<f64> = aics.iter().map(|a| a + shift).collect();
            let q = model_probabilities(&shifted);
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
