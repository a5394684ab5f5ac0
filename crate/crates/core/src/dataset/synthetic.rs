//! Synthetic coating-line data with a known generating process.
//!
//! Six setup features are drawn independently from fixed distributions, every
//! row carries an insert geometry from twelve categories grouped into four
//! shape clusters, and the target is a smooth function of two features plus a
//! small cluster offset and logistic noise.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::io::empty_like;
use super::preprocess::code_width;
use super::{ColumnKind, ColumnRole, ColumnSpec, Dataset, DatasetError, Encoding};
use crate::distfit::Family;
use crate::geometry::EmbeddingTable;
use crate::{rng, stats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLaw {
    pub name: String,
    pub family: Family,
    pub theta: Vec<f64>,
}

impl FeatureLaw {
    fn new(name: &str, family: Family, theta: &[f64]) -> Self {
        FeatureLaw {
            name: name.to_string(),
            family,
            theta: theta.to_vec(),
        }
    }

    /// Mean of the law, or the location for families without one.
    pub fn true_mean(&self) -> f64 {
        self.family
            .mean(&self.theta)
            .unwrap_or_else(|| self.family.center(&self.theta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeCluster {
    pub name: String,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub rows: usize,
    pub rows_per_run: usize,
    pub features: Vec<FeatureLaw>,
    pub clusters: Vec<ShapeCluster>,
    /// Relative cluster weights; renormalized before use.
    pub cluster_proportions: Vec<f64>,
    /// Target offset added for rows of each cluster.
    pub cluster_offsets: Vec<f64>,
    pub intercept: f64,
    pub coef_area: f64,
    pub coef_diff: f64,
    pub coef_interaction: f64,
    /// Noise sd as a fraction of the empirical sd of the noise-free target.
    pub noise_fraction: f64,
    pub embedding_jitter: f64,
    pub target_name: String,
    pub geometry_name: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let cluster = |name: &str, cats: &[&str]| ShapeCluster {
            name: name.to_string(),
            categories: cats.iter().map(|c| c.to_string()).collect(),
        };
        GeneratorConfig {
            rows: 4000,
            rows_per_run: 15,
            features: vec![
                FeatureLaw::new("pieces", Family::NegativeBinomial, &[2.322, 0.009]),
                FeatureLaw::new("position", Family::DiscreteUniform, &[7.0, 42.0]),
                FeatureLaw::new("area", Family::Logistic, &[1763.00, 214.22]),
                FeatureLaw::new("total_area", Family::Logistic, &[80034.27, 3687.89]),
                FeatureLaw::new("area_sd", Family::Cauchy, &[578.56, 30.15]),
                FeatureLaw::new("area_diff", Family::Normal, &[4865.79, 3016.80]),
            ],
            clusters: vec![
                cluster("Triangular", &["TCMT1102", "TNMG1604", "TPUN1603"]),
                cluster(
                    "Rhomboid",
                    &["CCMT0602", "CNMG1204", "DNMG1506", "VBMT1604"],
                ),
                cluster("Circular", &["RCMT1003", "RNMG1203"]),
                cluster("Rectangular", &["LNUX1907", "SCMT0903", "SNMG1204"]),
            ],
            cluster_proportions: vec![26.77, 57.36, 8.06, 22.75],
            cluster_offsets: vec![0.06, -0.04, 0.10, 0.0],
            intercept: 6.2,
            coef_area: 0.30,
            coef_diff: 0.20,
            coef_interaction: 0.08,
            noise_fraction: 0.1,
            embedding_jitter: 0.15,
            target_name: "thickness".to_string(),
            geometry_name: "geometry".to_string(),
        }
    }
}

impl GeneratorConfig {
    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidConfig(m.to_string()));
        if self.rows < 1 {
            return bad("row count must be at least 1");
        }
        if self.rows_per_run < 1 {
            return bad("rows_per_run must be at least 1");
        }
        let k = self.clusters.len();
        if k == 0 || self.cluster_proportions.len() != k || self.cluster_offsets.len() != k {
            return bad("clusters, proportions and offsets must have the same nonzero length");
        }
        if self
            .cluster_proportions
            .iter()
            .any(|p| !(p.is_finite() && *p >= 0.0))
        {
            return bad("cluster proportions must be nonnegative");
        }
        if !(self.cluster_proportions.iter().sum::<f64>() > 0.0) {
            return bad("cluster proportions sum to zero");
        }
        if self.clusters.iter().any(|c| c.categories.is_empty()) {
            return bad("every cluster needs at least one category");
        }
        if !(self.noise_fraction >= 0.0) || !(self.embedding_jitter >= 0.0) {
            return bad("noise_fraction and embedding_jitter must be nonnegative");
        }
        for law in &self.features {
            if !law.family.valid_theta(&law.theta) {
                return bad(&format!("invalid parameters for `{}`", law.name));
            }
        }
        for name in ["area", "area_diff"] {
            if self.law(name).is_none() {
                return bad(&format!("the target function needs a `{name}` feature"));
            }
        }
        Ok(())
    }

    fn law(&self, name: &str) -> Option<&FeatureLaw> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn normalized_proportions(&self) -> Vec<f64> {
        let total: f64 = self.cluster_proportions.iter().sum();
        self.cluster_proportions.iter().map(|p| p / total).collect()
    }

    pub fn schema(&self) -> Vec<ColumnSpec> {
        let mut schema = vec![ColumnSpec::new(
            "run_id",
            ColumnKind::Categorical,
            ColumnRole::RunId,
            Encoding::None,
        )];
        for law in &self.features {
            let kind = if law.family.is_discrete() {
                ColumnKind::Integer
            } else {
                ColumnKind::Continuous
            };
            schema.push(ColumnSpec::feature(&law.name, kind, Encoding::Standardize));
        }
        schema.push(ColumnSpec::feature(
            &self.geometry_name,
            ColumnKind::Categorical,
            Encoding::BinaryEncode,
        ));
        schema.push(ColumnSpec::new(
            &self.target_name,
            ColumnKind::Continuous,
            ColumnRole::Target,
            Encoding::None,
        ));
        schema
    }
}

/// The noise-free part of the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFunction {
    pub description: String,
    pub intercept: f64,
    pub coef_area: f64,
    pub coef_diff: f64,
    pub coef_interaction: f64,
    pub area_center: f64,
    pub area_scale: f64,
    pub diff_center: f64,
    pub diff_scale: f64,
    pub cluster_offsets: Vec<f64>,
    pub noise_family: Family,
    /// Logistic scale of the additive noise.
    pub noise_scale: f64,
    pub noise_sd: f64,
}

impl TargetFunction {
    pub fn signal(&self, area: f64, area_diff: f64, cluster: usize) -> f64 {
        let u = (area - self.area_center) / self.area_scale;
        let v = (area_diff - self.diff_center) / self.diff_scale;
        self.intercept
            + self.coef_area * u
            + self.coef_diff * v
            + self.coef_interaction * u * v
            + self.cluster_offsets[cluster]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTruth {
    pub label: String,
    pub cluster: usize,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub features: Vec<FeatureLaw>,
    pub cluster_names: Vec<String>,
    pub cluster_proportions: Vec<f64>,
    pub cluster_counts: Vec<usize>,
    pub categories: Vec<CategoryTruth>,
    pub target: TargetFunction,
    /// Population mean of every encoded feature column, in raw units.
    pub encoded_means: BTreeMap<String, f64>,
    /// Same, conditional on each cluster.
    pub cluster_encoded_means: Vec<BTreeMap<String, f64>>,
    /// Generating cluster of every row.
    pub row_clusters: Vec<usize>,
    /// Features whose values enter the target function.
    pub signal_features: Vec<String>,
}

impl GroundTruth {
    pub fn embedding_table(&self) -> EmbeddingTable {
        EmbeddingTable::new(
            self.categories.iter().map(|c| c.label.clone()).collect(),
            self.categories
                .iter()
                .map(|c| c.embedding.clone())
                .collect(),
        )
        .expect("planted embeddings are nonzero")
    }

    pub fn category_cluster(&self, label: &str) -> Option<usize> {
        self.categories
            .iter()
            .find(|c| c.label == label)
            .map(|c| c.cluster)
    }
}

/// Split `n` into integer counts proportional to `p` by largest remainder.
pub(crate) fn apportion(n: usize, p: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = p.iter().map(|q| q * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Unit vectors at the corners of a regular tetrahedron, cycled for k > 4.
fn cluster_direction(c: usize, dim: usize) -> Vec<f64> {
    const CORNERS: [[f64; 3]; 4] = [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ];
    let mut v = vec![0.0; dim];
    for (j, x) in CORNERS[c % 4].iter().enumerate().take(dim) {
        v[j] = *x;
    }
    if c >= 4 && dim > 3 {
        v[3 + (c - 4) % (dim - 3)] += 2.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

const STREAM_CLUSTER: u64 = 1000;
const STREAM_CATEGORY: u64 = 1001;
const STREAM_NOISE: u64 = 1002;
const STREAM_EMBED: u64 = 1003;

pub fn generate_synthetic(
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<(Dataset, GroundTruth), DatasetError> {
    cfg.validate()?;
    let n = cfg.rows;
    let k = cfg.clusters.len();
    let props = cfg.normalized_proportions();

    let columns: Vec<Vec<f64>> = cfg
        .features
        .iter()
        .enumerate()
        .map(|(j, law)| {
            let mut r = rng::stream(seed, j as u64);
            (0..n)
                .map(|_| law.family.sample(&law.theta, &mut r))
                .collect()
        })
        .collect();

    let counts = apportion(n, &props);
    let mut row_clusters: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &m)| std::iter::repeat_n(c, m))
        .collect();
    row_clusters.shuffle(&mut rng::stream(seed, STREAM_CLUSTER));

    let mut cat_rng = rng::stream(seed, STREAM_CATEGORY);
    let row_labels: Vec<String> = row_clusters
        .iter()
        .map(|&c| {
            let cats = &cfg.clusters[c].categories;
            cats[cat_rng.random_range(0..cats.len())].clone()
        })
        .collect();

    let area = cfg.law("area").expect("validated");
    let diff = cfg.law("area_diff").expect("validated");
    let mut target = TargetFunction {
        description: format!(
            "{} = {} + {}*u + {}*v + {}*u*v + offset[cluster] + Logistic(0, s); \
             u = (area - {}) / {}, v = (area_diff - {}) / {}",
            cfg.target_name,
            cfg.intercept,
            cfg.coef_area,
            cfg.coef_diff,
            cfg.coef_interaction,
            area.true_mean(),
            area.family.variance(&area.theta).map_or(1.0, f64::sqrt),
            diff.true_mean(),
            diff.family.variance(&diff.theta).map_or(1.0, f64::sqrt),
        ),
        intercept: cfg.intercept,
        coef_area: cfg.coef_area,
        coef_diff: cfg.coef_diff,
        coef_interaction: cfg.coef_interaction,
        area_center: area.true_mean(),
        area_scale: area.family.variance(&area.theta).map_or(1.0, f64::sqrt),
        diff_center: diff.true_mean(),
        diff_scale: diff.family.variance(&diff.theta).map_or(1.0, f64::sqrt),
        cluster_offsets: cfg.cluster_offsets.clone(),
        noise_family: Family::Logistic,
        noise_scale: 0.0,
        noise_sd: 0.0,
    };
    let ia = cfg
        .features
        .iter()
        .position(|f| f.name == "area")
        .expect("validated");
    let id = cfg
        .features
        .iter()
        .position(|f| f.name == "area_diff")
        .expect("validated");
    let signal: Vec<f64> = (0..n)
        .map(|i| target.signal(columns[ia][i], columns[id][i], row_clusters[i]))
        .collect();
    let noise_sd = if n >= 2 {
        cfg.noise_fraction * stats::sample_sd(&signal)
    } else {
        0.0
    };
    target.noise_sd = noise_sd;
    target.noise_scale = noise_sd * 3f64.sqrt() / PI;

    let mut noise_rng = rng::stream(seed, STREAM_NOISE);
    let targets: Vec<f64> = signal
        .iter()
        .map(|&s| {
            if target.noise_scale > 0.0 {
                s + Family::Logistic.sample(&[0.0, target.noise_scale], &mut noise_rng)
            } else {
                s
            }
        })
        .collect();

    let mut ds = empty_like(&cfg.schema());
    ds.rows = (0..n)
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect();
    ds.targets = targets;
    ds.run_ids = (0..n)
        .map(|i| format!("R{:04}", i / cfg.rows_per_run + 1))
        .collect();
    ds.labels.insert(cfg.geometry_name.clone(), row_labels);

    // Planted embeddings: one direction per cluster, jittered per category.
    let dim = 3.max(k.min(8));
    let mut emb_rng = rng::stream(seed, STREAM_EMBED);
    let mut categories: Vec<CategoryTruth> = Vec::new();
    for (c, cl) in cfg.clusters.iter().enumerate() {
        let base = cluster_direction(c, dim);
        for label in &cl.categories {
            let embedding = base
                .iter()
                .map(|b| {
                    let z: f64 = StandardNormal.sample(&mut emb_rng);
                    b + cfg.embedding_jitter * z
                })
                .collect();
            categories.push(CategoryTruth {
                label: label.clone(),
                cluster: c,
                embedding,
            });
        }
    }

    let (encoded_means, cluster_encoded_means) = encoded_means(cfg, &props);
    let truth = GroundTruth {
        seed,
        features: cfg.features.clone(),
        cluster_names: cfg.clusters.iter().map(|c| c.name.clone()).collect(),
        cluster_proportions: props,
        cluster_counts: counts,
        categories,
        target,
        encoded_means,
        cluster_encoded_means,
        row_clusters,
        signal_features: vec!["area".to_string(), "area_diff".to_string()],
    };
    Ok((ds, truth))
}

/// True means of numeric columns and geometry bits, overall and per cluster.
fn encoded_means(
    cfg: &GeneratorConfig,
    props: &[f64],
) -> (BTreeMap<String, f64>, Vec<BTreeMap<String, f64>>) {
    let mut all: Vec<&String> = cfg.clusters.iter().flat_map(|c| &c.categories).collect();
    all.sort();
    all.dedup();
    let width = code_width(all.len());
    let code = |label: &String| all.binary_search(&label).expect("known label");

    let numeric: BTreeMap<String, f64> = cfg
        .features
        .iter()
        .map(|f| (f.name.clone(), f.true_mean()))
        .collect();
    let mut per_cluster = Vec::new();
    let mut overall = numeric.clone();
    for b in 0..width {
        overall.insert(format!("{}_b{b}", cfg.geometry_name), 0.0);
    }
    for (c, cl) in cfg.clusters.iter().enumerate() {
        let mut m = numeric.clone();
        for b in 0..width {
            let ones = cl
                .categories
                .iter()
                .filter(|l| (code(l) >> b) & 1 == 1)
                .count();
            let p = ones as f64 / cl.categories.len() as f64;
            let name = format!("{}_b{b}", cfg.geometry_name);
            *overall.get_mut(&name).expect("inserted above") += props[c] * p;
            m.insert(name, p);
        }
        per_cluster.push(m);
    }
    (overall, per_cluster)
}
