//! Browser bindings for three small demos: weighted ABC on a conjugate toy,
//! spectral clustering of planted shape embeddings, and AIC family selection.
//!
//! Every export returns a JSON string. The `*_json` functions hold the logic
//! and run natively as well, so they carry the tests.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use mixedabc::abc::{self, FnModel, Kernel, NoiseModel, DEFAULT_LEVELS};
use mixedabc::dataset::{self, GeneratorConfig};
use mixedabc::distfit::{self, Family, FittedPrior};
use mixedabc::geometry;
use mixedabc::plot;

#[derive(Serialize)]
struct AbcToy {
    posterior_mean: f64,
    analytic_mean: f64,
    analytic_sd: f64,
    mcse: f64,
    ess_fraction: f64,
    ess_percent: String,
    ci95: [f64; 2],
    grid: Vec<f64>,
    density: Vec<f64>,
    analytic_density: Vec<f64>,
}

/// theta ~ N(0, 1) observed once as y with unit noise, inferred by weighting
/// prior draws with a Gaussian kernel of width `sigma` on the summary
/// distance. The distance is 2|theta - y|, so `sigma = 2` is exact.
pub fn abc_toy_json(y: f64, sigma: f64, n: usize, seed: u32) -> Result<String, String> {
    if !(1..=200_000).contains(&n) {
        return Err("draw count must lie in 1..=200000".into());
    }
    let kernel = Kernel::Gaussian { sigma };
    kernel.validate().map_err(|e| e.to_string())?;
    let model = FnModel {
        names: vec!["theta".to_string()],
        f: |x: &[f64]| x[0],
    };
    let prior = FittedPrior {
        family: Family::Normal,
        theta_hat: vec![0.0, 1.0],
        loglik: 0.0,
        aic: 0.0,
        model_prob: 1.0,
        chain: None,
    };
    let sims = abc::simulate_forward(
        &model,
        &[("theta".to_string(), prior)],
        &NoiseModel::Zero,
        n,
        2,
        u64::from(seed),
    )
    .map_err(|e| e.to_string())?;
    let wp = abc::weigh(&sims, &[y, y], &kernel).map_err(|e| e.to_string())?;
    let s = abc::posterior_summary(&wp, "theta", &DEFAULT_LEVELS).map_err(|e| e.to_string())?;
    let (mean, sd) = (y / 2.0, 0.5f64.sqrt());
    let theta = wp.column(0);
    let grid: Vec<f64> = (0..161).map(|i| -4.0 + i as f64 * 0.05).collect();
    let density = plot::weighted_kde(&theta, &wp.weights, &grid);
    let analytic_density = grid
        .iter()
        .map(|g| {
            (-0.5 * ((g - mean) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
        })
        .collect();
    let out = AbcToy {
        posterior_mean: s.mean,
        analytic_mean: mean,
        analytic_sd: sd,
        mcse: sd / wp.ess.sqrt(),
        ess_fraction: wp.ess_fraction(),
        ess_percent: wp.ess_percent(),
        ci95: [s.intervals[0].lower, s.intervals[0].upper],
        grid,
        density,
        analytic_density,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ClusterRow {
    members: Vec<String>,
    inner_similarity: f64,
}

#[derive(Serialize)]
struct ClusterDemo {
    svg: String,
    clusters: Vec<ClusterRow>,
    ari: f64,
    eigenvalues: Vec<f64>,
    eigengap_k: usize,
}

/// Planted shape embeddings with `jitter` noise, clustered into `k` groups.
pub fn cluster_demo_json(jitter: f64, k: usize, seed: u32) -> Result<String, String> {
    let cfg = GeneratorConfig {
        rows: 40,
        embedding_jitter: jitter,
        ..GeneratorConfig::default()
    };
    let (_, truth) =
        dataset::generate_synthetic(&cfg, u64::from(seed)).map_err(|e| e.to_string())?;
    let sim = geometry::cosine_matrix(&truth.embedding_table()).map_err(|e| e.to_string())?;
    let cm = geometry::spectral_cluster(&sim, k, u64::from(seed)).map_err(|e| e.to_string())?;
    let planted: Vec<usize> = truth.categories.iter().map(|c| c.cluster).collect();
    let mut order: Vec<usize> = (0..sim.labels.len()).collect();
    order.sort_by_key(|&i| (cm.assignment[i], i));
    let out = ClusterDemo {
        svg: plot::heatmap_svg(&sim, Some(&order)),
        clusters: (0..cm.k)
            .map(|c| ClusterRow {
                members: cm.members(c).iter().map(|s| s.to_string()).collect(),
                inner_similarity: cm.inner_similarity[c],
            })
            .collect(),
        ari: geometry::adjusted_rand_index(&cm.assignment, &planted),
        eigenvalues: cm.eigenvalues.iter().take(8).copied().collect(),
        eigengap_k: cm.eigengap_k(),
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct FamilyRow {
    family: &'static str,
    params: Vec<(&'static str, f64)>,
    aic: f64,
    model_prob: f64,
}

/// Rank every admissible family for whitespace- or comma-separated numbers.
pub fn select_family_json(text: &str) -> Result<String, String> {
    let sample: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',' || c == ';')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| format!("`{t}` is not a number"))
        })
        .collect::<Result<_, _>>()?;
    let fits = distfit::select_model(&sample, &Family::ALL).map_err(|e| e.to_string())?;
    let rows: Vec<FamilyRow> = fits
        .iter()
        .map(|f| FamilyRow {
            family: f.family.tag(),
            params: f
                .family
                .param_names()
                .iter()
                .copied()
                .zip(f.theta_hat.iter().copied())
                .collect(),
            aic: f.aic,
            model_prob: f.model_prob,
        })
        .collect();
    serde_json::to_string(&rows).map_err(|e| e.to_string())
}

/// Space-separated draws from one of the six families, for the selection demo.
pub fn sample_family_text(
    family: &str,
    params: &[f64],
    n: usize,
    seed: u32,
) -> Result<String, String> {
    let family = Family::from_tag(family).ok_or_else(|| format!("unknown family `{family}`"))?;
    if !family.valid_theta(params) {
        return Err(format!("invalid parameters for {}", family.tag()));
    }
    let fp = FittedPrior {
        family,
        theta_hat: params.to_vec(),
        loglik: 0.0,
        aic: 0.0,
        model_prob: 1.0,
        chain: None,
    };
    let xs = distfit::sample_prior(&fp, n.min(100_000), u64::from(seed));
    Ok(xs
        .iter()
        .map(|x| format!("{}", (x * 1e4).round() / 1e4))
        .collect::<Vec<_>>()
        .join(" "))
}

#[wasm_bindgen(js_name = abcToy)]
pub fn abc_toy(y: f64, sigma: f64, n: usize, seed: u32) -> Result<String, JsError> {
    abc_toy_json(y, sigma, n, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = clusterDemo)]
pub fn cluster_demo(jitter: f64, k: usize, seed: u32) -> Result<String, JsError> {
    cluster_demo_json(jitter, k, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = selectFamily)]
pub fn select_family(text: &str) -> Result<String, JsError> {
    select_family_json(text).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sampleFamily)]
pub fn sample_family(
    family: &str,
    params: Vec<f64>,
    n: usize,
    seed: u32,
) -> Result<String, JsError> {
    sample_family_text(family, &params, n, seed).map_err(|e| JsError::new(&e))
}
