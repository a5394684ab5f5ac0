use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::surrogate::{self, Hyperparameters};

fn normal(r: &mut rng::Rng) -> f64 {
    StandardNormal.sample(r)
}

fn prior(family: Family, theta: &[f64]) -> FittedPrior {
    FittedPrior {
        family,
        theta_hat: theta.to_vec(),
        loglik: 0.0,
        aic: 0.0,
        model_prob: 1.0,
        chain: None,
    }
}

fn identity_model() -> FnModel<impl Fn(&[f64]) -> f64 + Sync> {
    FnModel {
        names: vec!["theta".to_string()],
        f: |x: &[f64]| x[0],
    }
}

#[test]
fn summary_of_one_to_five() {
    let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    assert_eq!((s.mean, s.median, s.q1, s.q3), (3.0, 3.0, 2.0, 4.0));
    assert!((s.sd - 1.5811).abs() < 1e-4);
    assert!((s.sd - 2.5f64.sqrt()).abs() < 1e-15);
    let c = summarize(&[4.5; 7]).unwrap();
    assert_eq!(c.to_array(), [4.5, 0.0, 4.5, 4.5, 4.5]);
    let sym = summarize(&[-3.0, -1.0, 0.0, 1.0, 3.0]).unwrap();
    assert_eq!(sym.mean, sym.median);
    assert_eq!(summarize(&[1.0]), Err(AbcError::TooFewValues(1, 2)));
}

#[test]
fn logistic_kernel_is_the_full_density() {
    let k = Kernel::LogisticPdf { mu: 0.2, s: 0.5 };
    for d in [0.0f64, 0.2, 0.7, 3.0] {
        let z: f64 = (d - 0.2) / 0.5;
        let expect = (-z).exp() / (0.5 * (1.0 + (-z).exp()).powi(2));
        assert!((k.weight(d) - expect).abs() < 1e-14);
    }
    assert!(Kernel::LogisticPdf { mu: 0.0, s: 0.0 }.validate().is_err());
}

fn sims_from(samples: Vec<Vec<f64>>) -> SimulationSet {
    SimulationSet {
        feature_names: vec!["a".into()],
        draws: (0..samples.len()).map(|i| vec![i as f64]).collect(),
        samples,
    }
}

#[test]
fn equal_distances_give_uniform_weights() {
    let sims = sims_from(vec![vec![1.0, 3.0]; 50]);
    let wp = weigh(&sims, &[0.0, 2.0], &Kernel::LogisticPdf { mu: 0.0, s: 1.0 }).unwrap();
    assert!(wp.weights.iter().all(|&w| (w - 0.02).abs() < 1e-15));
    assert!((wp.ess - 50.0).abs() < 1e-9);
}

#[test]
fn one_close_draw_takes_all_weight() {
    let mut samples = vec![vec![1e6, 2e6]; 20];
    samples[7] = vec![0.0, 2.0];
    let sims = sims_from(samples);
    let wp = weigh(&sims, &[0.0, 2.0], &Kernel::LogisticPdf { mu: 0.0, s: 1.0 }).unwrap();
    assert!((wp.weights[7] - 1.0).abs() < 1e-12);
    assert!((wp.ess - 1.0).abs() < 1e-9);
    assert_eq!(wp.distances[7], 0.0);
}

#[test]
fn all_zero_weights_is_an_error() {
    let sims = sims_from(vec![vec![1e6, 2e6]; 5]);
    let err = weigh(
        &sims,
        &[0.0, 1.0],
        &Kernel::LogisticPdf { mu: 0.0, s: 1e-3 },
    );
    assert_eq!(err, Err(AbcError::AllZeroWeights));
}

#[test]
fn ess_percentage_fixture() {
    assert_eq!(format_percent(0.9973), "99.73%");
    let raw: Vec<f64> = (0..1000)
        .map(|i| 1.0 + 0.1 * ((i % 7) as f64 - 3.0) / 3.0)
        .collect();
    let (_, ess) = normalize(&raw).unwrap();
    assert!(ess > 990.0 && ess <= 1000.0);
}

#[test]
fn simulate_counts_and_constant_model() {
    let m = FnModel {
        names: vec!["a".into(), "b".into()],
        f: |_: &[f64]| 6.2,
    };
    let priors = vec![
        ("a".to_string(), prior(Family::Normal, &[0.0, 1.0])),
        ("b".to_string(), FittedPrior::constant(3.0)),
    ];
    let sims = simulate_forward(&m, &priors, &NoiseModel::Zero, 1000, 15, 4).unwrap();
    assert_eq!(sims.len(), 1000);
    assert!(sims
        .samples
        .iter()
        .all(|s| s.len() == 15 && s.iter().all(|&y| y == 6.2)));
    assert!(sims.draws.iter().all(|d| d[1] == 3.0));
    assert_eq!(
        simulate_forward(&m, &priors[..1], &NoiseModel::Zero, 10, 15, 4),
        Err(AbcError::MissingPrior("b".into()))
    );
    assert!(simulate_forward(&m, &priors, &NoiseModel::Zero, 10, 1, 4).is_err());
}

#[test]
fn simulation_is_deterministic_and_thread_independent() {
    let priors = vec![("theta".to_string(), prior(Family::Logistic, &[1.0, 0.5]))];
    let noise = NoiseModel::Distribution {
        family: Family::Normal,
        theta: vec![0.0, 0.3],
    };
    let a = simulate_forward(&identity_model(), &priors, &noise, 500, 5, 9).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let b =
        pool.install(|| simulate_forward(&identity_model(), &priors, &noise, 500, 5, 9).unwrap());
    assert_eq!(a, b);
    let k = Kernel::Gaussian { sigma: 1.0 };
    let obs = [1.0, 1.2, 0.8, 1.1];
    assert_eq!(weigh(&a, &obs, &k).unwrap(), weigh(&b, &obs, &k).unwrap());
}

#[test]
fn simulated_mean_matches_generator_marginal() {
    use crate::dataset::{generate_synthetic, preprocess, GeneratorConfig};
    let (raw, truth) = generate_synthetic(&GeneratorConfig::default(), 21).unwrap();
    let ds = preprocess(&raw).unwrap();
    // The generating target function as the forward model, cluster offset
    // averaged over cluster proportions.
    let ia = ds.feature_index("area").unwrap();
    let id = ds.feature_index("area_diff").unwrap();
    let offset: f64 = truth
        .cluster_proportions
        .iter()
        .zip(&truth.target.cluster_offsets)
        .map(|(p, o)| p * o)
        .sum();
    let tf = truth.target.clone();
    let model = FnModel {
        names: ds.feature_names(),
        f: move |x: &[f64]| tf.signal(x[ia], x[id], 3) - tf.cluster_offsets[3] + offset,
    };
    let priors: Vec<(String, FittedPrior)> = ds
        .feature_names()
        .into_iter()
        .map(|n| {
            let fp = match truth.features.iter().find(|f| f.name == n) {
                Some(law) => prior(law.family, &law.theta),
                None => prior(Family::Binomial, &[truth.encoded_means[&n]]),
            };
            (n, fp)
        })
        .collect();
    let noise = NoiseModel::Distribution {
        family: Family::Logistic,
        theta: vec![0.0, truth.target.noise_scale],
    };
    let sims = simulate_forward(&model, &priors, &noise, 4000, 15, 3).unwrap();
    let all: Vec<f64> = sims.samples.iter().flatten().copied().collect();
    let per_draw: Vec<f64> = sims.samples.iter().map(|s| stats::mean(s)).collect();
    let se = stats::sample_sd(&per_draw) / (per_draw.len() as f64).sqrt();
    let expected = truth.target.intercept + offset;
    assert!(
        (stats::mean(&all) - expected).abs() < 3.0 * se,
        "{} vs {expected}",
        stats::mean(&all)
    );
}

/// Normal mean with a normal prior: theta ~ N(0, 1), y | theta ~ N(theta, 1).
/// With a noise-free identity model and a two-point observation, the sd
/// component always matches and the other four differ by |theta - y|, so the
/// distance is 2|theta - y| and a Gaussian kernel of width 2 reproduces the
/// likelihood: the weights target the exact posterior.
#[test]
fn conjugate_toy_posterior_mean() {
    let y = 0.8;
    let priors = vec![("theta".to_string(), prior(Family::Normal, &[0.0, 1.0]))];
    let sims =
        simulate_forward(&identity_model(), &priors, &NoiseModel::Zero, 10_000, 2, 1).unwrap();
    let wp = weigh(&sims, &[y, y], &Kernel::Gaussian { sigma: 2.0 }).unwrap();
    let s = posterior_summary(&wp, "theta", &DEFAULT_LEVELS).unwrap();
    let (post_mean, post_sd) = (y / 2.0, 0.5f64.sqrt());
    let mcse = post_sd / wp.ess.sqrt();
    assert!(
        (s.mean - post_mean).abs() <= 3.0 * mcse,
        "{} vs {post_mean}",
        s.mean
    );
    assert!(wp.ess_fraction() >= 0.5);
    assert!((wp.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn rejection_kernel_converges_to_analytic_posterior() {
    // theta ~ N(0, 1); five noisy observations with sd 1 summarized by their
    // statistics; a narrow indicator kernel accepts near-matching samples.
    let obs = [0.9, 0.3, 1.4, 0.2, 0.7];
    let ybar = stats::mean(&obs);
    let priors = vec![("theta".to_string(), prior(Family::Normal, &[0.0, 1.0]))];
    let noise = NoiseModel::Distribution {
        family: Family::Normal,
        theta: vec![0.0, 1.0],
    };
    let sims = simulate_forward(&identity_model(), &priors, &noise, 10_000, 5, 2).unwrap();
    // Only the mean is informative here, so match on it alone.
    let target = summarize(&obs).unwrap();
    let mean_only: Vec<SummaryVector> = sims
        .samples
        .iter()
        .map(|s| {
            let m = stats::mean(s);
            SummaryVector {
                mean: m,
                sd: target.sd,
                median: target.median,
                q1: target.q1,
                q3: target.q3,
            }
        })
        .collect();
    let (raw, _) = weigh_summaries(
        &mean_only,
        &target,
        &Kernel::Indicator { epsilon: 0.05 },
        WeighOptions::default(),
    )
    .unwrap();
    let (w, ess) = normalize(&raw).unwrap();
    let theta: Vec<f64> = sims.draws.iter().map(|d| d[0]).collect();
    let mean: f64 = theta.iter().zip(&w).map(|(t, w)| t * w).sum();
    let n = obs.len() as f64;
    let (post_mean, post_sd) = (n * ybar / (n + 1.0), (1.0 / (n + 1.0)).sqrt());
    let mcse = post_sd / ess.sqrt();
    assert!(
        (mean - post_mean).abs() <= 3.0 * mcse,
        "{mean} vs {post_mean} (mcse {mcse}, ess {ess})"
    );
}

#[test]
fn weighted_quantiles_cases() {
    let v: Vec<f64> = (1..=100).map(f64::from).collect();
    let w = vec![1.0; 100];
    let sorted = v.clone();
    for p in [0.025, 0.25, 0.5, 0.75, 0.975] {
        let wq = weighted_quantile(&v, &w, p);
        let t7 = stats::quantile_sorted(&sorted, p);
        assert!((wq - t7).abs() <= 1.0, "{p}: {wq} vs {t7}");
    }
    let mut one_hot = vec![0.0; 100];
    one_hot[41] = 1.0;
    for p in [0.01, 0.5, 0.99] {
        assert_eq!(weighted_quantile(&v, &one_hot, p), 42.0);
    }
}

#[test]
fn posterior_summary_errors_and_uniform_mean() {
    let sims = sims_from(vec![vec![0.0, 1.0]; 10]);
    let wp = weigh(&sims, &[0.0, 1.0], &Kernel::Gaussian { sigma: 1.0 }).unwrap();
    let s = posterior_summary(&wp, "a", &DEFAULT_LEVELS).unwrap();
    assert!((s.mean - 4.5).abs() < 1e-12);
    assert_eq!(
        posterior_summary(&wp, "zz", &DEFAULT_LEVELS),
        Err(AbcError::UnknownFeature("zz".into()))
    );
    assert_eq!(
        posterior_summary(&wp, "a", &[(0.0, 0.5)]),
        Err(AbcError::InvalidLevel(0.0))
    );
}

#[test]
fn systematic_resampling_uniform_reproduces_draws() {
    let w = vec![0.1; 10];
    for u0 in [0.05, 0.3, 0.5, 0.999] {
        let idx = systematic_resample(&w, 10, u0);
        let mut s = idx.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>(), "u0 = {u0}");
    }
    let idx = systematic_resample(&[0.0, 1.0, 0.0], 5, 0.5);
    assert!(idx.iter().all(|&i| i == 1));
}

#[test]
fn forward_validation_point_mass_at_truth() {
    let wp = WeightedPosterior {
        feature_names: vec!["theta".into()],
        draws: vec![vec![2.5], vec![-40.0]],
        raw_weights: vec![1.0, 0.0],
        weights: vec![1.0, 0.0],
        distances: vec![0.0, 10.0],
        ess: 1.0,
        kernel: Kernel::Gaussian { sigma: 1.0 },
    };
    let rep = forward_validate(
        &wp,
        &identity_model(),
        &NoiseModel::Zero,
        &[2.5, 2.5, 2.5],
        0,
    )
    .unwrap();
    assert_eq!(rep.mean_difference, 0.0);
    assert_eq!(rep.n_predicted, 2);
    let h = &rep.histogram;
    assert_eq!(h.edges.len(), h.observed.len() + 1);
}

#[test]
fn sufficiency_flags() {
    let mut r = rng::stream(5, 0);
    let uni: Vec<f64> = (0..500).map(|_| normal(&mut r)).collect();
    let rep = sufficiency_check(&uni, &summarize(&uni).unwrap()).unwrap();
    assert!(!rep.multimodal, "{rep}");
    assert!(rep.explained_variance > 0.95, "{rep}");

    let bim: Vec<f64> = (0..500)
        .map(|i| normal(&mut r) + if i % 2 == 0 { 4.0 } else { -4.0 })
        .collect();
    let rep = sufficiency_check(&bim, &summarize(&bim).unwrap()).unwrap();
    assert!(rep.multimodal, "{rep}");

    let c = vec![3.0; 20];
    let rep = sufficiency_check(&c, &summarize(&c).unwrap()).unwrap();
    assert!(!rep.multimodal);
    assert_eq!(rep.explained_variance, 1.0);
    assert!(sufficiency_check(&[1.0, 2.0], &summarize(&[1.0, 2.0]).unwrap()).is_err());
}

#[test]
fn dip_false_alarm_rate_on_uniform_is_small() {
    let mut alarms = 0;
    for s in 0..200u64 {
        let mut r = rng::stream(s, 3);
        let x: Vec<f64> = (0..200).map(|_| r.random::<f64>()).collect();
        let rep = sufficiency_check(&x, &summarize(&x).unwrap()).unwrap();
        alarms += rep.multimodal as usize;
    }
    assert!(alarms <= 10, "{alarms}");
}

#[test]
fn bimodal_mixtures_are_flagged() {
    let mut hits = 0;
    for s in 0..50u64 {
        let mut r = rng::stream(s, 4);
        let x: Vec<f64> = (0..300)
            .map(|i| normal(&mut r) + if i % 3 == 0 { 5.0 } else { 0.0 })
            .collect();
        hits += sufficiency_check(&x, &summarize(&x).unwrap())
            .unwrap()
            .multimodal as usize;
    }
    assert!(hits >= 48, "{hits}");
}

#[test]
fn posterior_json_round_trip() {
    let priors = vec![("theta".to_string(), prior(Family::Normal, &[0.0, 1.0]))];
    let sims = simulate_forward(&identity_model(), &priors, &NoiseModel::Zero, 100, 3, 0).unwrap();
    let wp = weigh(
        &sims,
        &[0.1, 0.2, 0.3],
        &Kernel::LogisticPdf {
            mu: -0.007,
            s: 0.126,
        },
    )
    .unwrap();
    let back: WeightedPosterior =
        serde_json::from_str(&serde_json::to_string(&wp).unwrap()).unwrap();
    assert_eq!(back, wp);
}

#[test]
fn surrogate_as_forward_model_uses_raw_units() {
    use crate::dataset::Dataset;
    let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![1000.0 + i as f64]).collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|x| if x[0] < 1100.0 { 1.0 } else { 2.0 })
        .collect();
    let mut ds = Dataset::from_matrix(&["a"], rows, y);
    ds.columns[0].encoding = crate::dataset::Encoding::Standardize;
    let p = crate::dataset::preprocess(&ds).unwrap();
    let m = surrogate::fit(
        &p,
        &Hyperparameters {
            n_trees: 1,
            learning_rate: 1.0,
            max_depth: 1,
            lambda: 0.0,
            min_gain: 0.0,
        },
        0,
    )
    .unwrap();
    assert!((m.eval(&[1050.0]) - 1.0).abs() < 1e-12);
    assert!((m.eval(&[1150.0]) - 2.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn weights_normalized_and_ess_bounded(d in proptest::collection::vec(0.0f64..5.0, 1..200), s in 0.05f64..3.0) {
        let k = Kernel::LogisticPdf { mu: 0.0, s };
        let raw: Vec<f64> = d.iter().map(|&x| k.weight(x)).collect();
        if let Ok((w, ess)) = normalize(&raw) {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(ess >= 1.0 && ess <= d.len() as f64);
        }
    }

    #[test]
    fn logistic_weight_decreases_right_of_mu(mu in -1.0f64..1.0, s in 0.01f64..2.0, a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let k = Kernel::LogisticPdf { mu, s };
        let (lo, hi) = (mu + a.min(b), mu + a.max(b));
        prop_assert!(k.weight(lo) >= k.weight(hi));
    }

    #[test]
    fn quantiles_monotone_in_level(v in proptest::collection::vec(-100.0f64..100.0, 1..60), seed in 0u64..100) {
        let mut r = rng::stream(seed, 0);
        let w: Vec<f64> = v.iter().map(|_| r.random::<f64>() + 1e-3).collect();
        let qs: Vec<f64> = [0.025, 0.25, 0.5, 0.75, 0.975].iter().map(|&p| weighted_quantile(&v, &w, p)).collect();
        prop_assert!(qs.windows(2).all(|x| x[0] <= x[1]));
    }
}
