//! Shape embeddings, cosine similarity and spectral clustering of categories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::rng;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("need at least {need} labels, got {got}")]
    TooFewLabels { need: usize, got: usize },
    #[error("embedding of `{0}` is the zero vector")]
    ZeroVector(String),
    #[error("embedding of `{label}` has dimension {got}, expected {expected}")]
    DimensionMismatch {
        label: String,
        expected: usize,
        got: usize,
    },
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("cluster count {k} is invalid for {n} labels")]
    InvalidK { k: usize, n: usize },
    #[error("label `{0}` has no positive affinity to any other label and k leaves no room for it")]
    DisconnectedDegenerate(String),
    #[error("row {row}: geometry `{label}` is not in the cluster model")]
    UnknownGeometry { label: String, row: usize },
    #[error("dataset has no categorical column `{0}`")]
    UnknownColumn(String),
    #[error("description {0} is empty")]
    EmptyDescription(usize),
    #[error("embedding dimension must be at least 2")]
    InvalidDim,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense vectors for category labels, one row per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub names: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(names: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self, GeometryError> {
        if names.len() != vectors.len() {
            return Err(GeometryError::Parse {
                line: 0,
                msg: format!("{} labels but {} vectors", names.len(), vectors.len()),
            });
        }
        let dim = vectors.first().map_or(0, Vec::len);
        let mut seen = std::collections::BTreeSet::new();
        for (name, v) in names.iter().zip(&vectors) {
            if !seen.insert(name) {
                return Err(GeometryError::DuplicateLabel(name.clone()));
            }
            if v.len() != dim {
                return Err(GeometryError::DimensionMismatch {
                    label: name.clone(),
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().all(|x| *x == 0.0) {
                return Err(GeometryError::ZeroVector(name.clone()));
            }
        }
        Ok(EmbeddingTable { names, vectors })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn vector(&self, label: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == label)
            .map(|i| self.vectors[i].as_slice())
    }

    /// Parse `label<TAB>v1<TAB>...` lines. Blank lines and `#` comments are skipped.
    pub fn parse_tsv(text: &str) -> Result<Self, GeometryError> {
        let mut names = Vec::new();
        let mut vectors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cells = line.split('\t');
            let label = cells.next().unwrap_or("").trim().to_string();
            let v: Result<Vec<f64>, _> = cells.map(|c| c.trim().parse::<f64>()).collect();
            let v = v.map_err(|e| GeometryError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if label.is_empty() || v.is_empty() {
                return Err(GeometryError::Parse {
                    line: i + 1,
                    msg: "expected a label followed by at least one value".into(),
                });
            }
            names.push(label);
            vectors.push(v);
        }
        Self::new(names, vectors)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (name, v) in self.names.iter().zip(&self.vectors) {
            out.push_str(name);
            for x in v {
                let _ = write!(out, "\t{x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn read_tsv(path: &Path) -> Result<Self, GeometryError> {
        Self::parse_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn write_tsv(&self, path: &Path) -> Result<(), GeometryError> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn cosine_matrix(emb: &EmbeddingTable) -> Result<SimilarityMatrix, GeometryError> {
    let n = emb.len();
    if n < 2 {
        return Err(GeometryError::TooFewLabels { need: 2, got: n });
    }
    let norms: Vec<f64> = emb
        .vectors
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&r| !(r > 0.0)) {
        return Err(GeometryError::ZeroVector(emb.names[i].clone()));
    }
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    let dot: f64 = emb.vectors[i]
                        .iter()
                        .zip(&emb.vectors[j])
                        .map(|(a, b)| a * b)
                        .sum();
                    (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();
    let mut values = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            values[i][j] = upper[i][j - i - 1];
            values[j][i] = values[i][j];
        }
    }
    Ok(SimilarityMatrix {
        labels: emb.names.clone(),
        values,
    })
}

/// Affinity used for clustering: negative similarities clipped, no self loops.
pub fn affinity(sim: &SimilarityMatrix) -> Vec<Vec<f64>> {
    let n = sim.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        sim.values[i][j].max(0.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// I - D^{-1/2} A D^{-1/2}. Rows with zero degree get a unit diagonal.
pub fn normalized_laplacian(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let inv_sqrt: Vec<f64> = a
        .iter()
        .map(|r| {
            let d: f64 = r.iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    delta - inv_sqrt[i] * a[i][j] * inv_sqrt[j]
                })
                .collect()
        })
        .collect()
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns of the second matrix (`vecs[row][k]` is component `row` of vector `k`).
pub fn jacobi_eigen(m: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = a
        .iter()
        .flatten()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vecs = (0..n)
        .map(|r| order.iter().map(|&k| v[r][k]).collect())
        .collect();
    (values, vecs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub objective: f64,
    /// Objective after every Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> KMeansResult {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| sq_dist(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
    }

    let assign = |centers: &[Vec<f64>]| -> (Vec<usize>, f64) {
        let mut obj = 0.0;
        let labels = points
            .iter()
            .map(|p| {
                let (best, d) = centers
                    .iter()
                    .enumerate()
                    .map(|(c, ctr)| (c, sq_dist(p, ctr)))
                    .fold(
                        (0, f64::INFINITY),
                        |acc, x| if x.1 < acc.1 { x } else { acc },
                    );
                obj += d;
                best
            })
            .collect();
        (labels, obj)
    };

    let (mut labels, mut objective) = assign(&centers);
    let mut history = vec![objective];
    for _ in 0..300 {
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        // An emptied cluster takes over the point farthest from its center.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&i, &j| {
                        sq_dist(&points[i], &centers[labels[i]])
                            .total_cmp(&sq_dist(&points[j], &centers[labels[j]]))
                            .then(j.cmp(&i))
                    })
                    .expect("nonempty");
                centers[c] = points[far].clone();
            }
        }
        let (next, obj) = assign(&centers);
        history.push(obj);
        let done = next == labels;
        labels = next;
        objective = obj;
        if done {
            break;
        }
    }
    KMeansResult {
        labels,
        centers,
        objective,
        history,
    }
}

/// Seeded k-means++ with `restarts` independent starts; the lowest objective
/// wins, ties going to the earlier restart.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> KMeansResult {
    assert!(k >= 1 && k <= points.len(), "k must be in 1..=n");
    let runs: Vec<KMeansResult> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| kmeans_once(points, k, &mut rng::stream(seed, r)))
        .collect();
    runs.into_iter()
        .reduce(|best, r| {
            if r.objective < best.objective {
                r
            } else {
                best
            }
        })
        .expect("at least one restart")
}

/// Relabel so clusters are numbered by first appearance.
fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub labels: Vec<String>,
    pub assignment: Vec<usize>,
    pub k: usize,
    /// Minimum pairwise cosine similarity within each cluster (1 for singletons).
    pub inner_similarity: Vec<f64>,
    /// Spectrum of the normalized Laplacian, ascending.
    pub eigenvalues: Vec<f64>,
    /// Labels without positive affinity to any other label.
    pub isolated: Vec<String>,
}

impl ClusterModel {
    pub fn cluster_of(&self, label: &str) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.assignment[i])
    }

    pub fn members(&self, c: usize) -> Vec<&str> {
        self.labels
            .iter()
            .zip(&self.assignment)
            .filter(|(_, &a)| a == c)
            .map(|(l, _)| l.as_str())
            .collect()
    }

    /// Index of the largest gap among the first eigenvalues, plus one.
    pub fn eigengap_k(&self) -> usize {
        let m = self.eigenvalues.len().min(10);
        (1..m)
            .max_by(|&i, &j| {
                (self.eigenvalues[i] - self.eigenvalues[i - 1])
                    .total_cmp(&(self.eigenvalues[j] - self.eigenvalues[j - 1]))
                    .then(j.cmp(&i))
            })
            .unwrap_or(1)
    }
}

const KMEANS_RESTARTS: usize = 20;

pub fn spectral_cluster(
    sim: &SimilarityMatrix,
    k: usize,
    seed: u64,
) -> Result<ClusterModel, GeometryError> {
    let n = sim.len();
    if k < 2 || k > n {
        return Err(GeometryError::InvalidK { k, n });
    }
    let a = affinity(sim);
    let (eigenvalues, _) = jacobi_eigen(&normalized_laplacian(&a));

    let isolated: Vec<usize> = (0..n).filter(|&i| a[i].iter().all(|&x| x <= 0.0)).collect();
    let connected: Vec<usize> = (0..n).filter(|i| !isolated.contains(i)).collect();
    let k_rest = k.checked_sub(isolated.len());
    let mut assignment = vec![0usize; n];
    match k_rest {
        Some(kr) if (kr == 0 && connected.is_empty()) || (kr >= 1 && kr <= connected.len()) => {
            let sub_labels = if kr <= 1 {
                vec![0; connected.len()]
            } else {
                let sub: Vec<Vec<f64>> = connected
                    .iter()
                    .map(|&i| connected.iter().map(|&j| a[i][j]).collect())
                    .collect();
                let (_, vecs) = jacobi_eigen(&normalized_laplacian(&sub));
                let points: Vec<Vec<f64>> = vecs
                    .iter()
                    .map(|row| {
                        let r = &row[..kr];
                        let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm > 0.0 {
                            r.iter().map(|x| x / norm).collect()
                        } else {
                            r.to_vec()
                        }
                    })
                    .collect();
                kmeans(&points, kr, seed, KMEANS_RESTARTS).labels
            };
            for (&i, &l) in connected.iter().zip(&sub_labels) {
                assignment[i] = l;
            }
            let base = if connected.is_empty() { 0 } else { kr };
            for (o, &i) in isolated.iter().enumerate() {
                assignment[i] = base + o;
            }
        }
        _ => {
            let first = isolated.first().copied().unwrap_or(0);
            return Err(GeometryError::DisconnectedDegenerate(
                sim.labels[first].clone(),
            ));
        }
    }
    let assignment = canonical(&assignment);
    let k_found = assignment.iter().max().map_or(0, |m| m + 1);
    let inner_similarity = (0..k_found)
        .map(|c| {
            let idx: Vec<usize> = (0..n).filter(|&i| assignment[i] == c).collect();
            let mut min = 1.0f64;
            for (x, &i) in idx.iter().enumerate() {
                for &j in &idx[x + 1..] {
                    min = min.min(sim.values[i][j]);
                }
            }
            min
        })
        .collect();
    Ok(ClusterModel {
        labels: sim.labels.clone(),
        assignment,
        k: k_found,
        inner_similarity,
        eigenvalues,
        isolated: isolated.iter().map(|&i| sim.labels[i].clone()).collect(),
    })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut ra: BTreeMap<usize, u64> = BTreeMap::new();
    let mut rb: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let c2 = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&m| c2(m)).sum();
    let sa: f64 = ra.values().map(|&m| c2(m)).sum();
    let sb: f64 = rb.values().map(|&m| c2(m)).sum();
    let expected = sa * sb / c2(n as u64);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// Split rows by the cluster of their geometry label, keeping row order.
pub fn stratify(
    ds: &Dataset,
    cm: &ClusterModel,
    geometry_column: &str,
) -> Result<BTreeMap<usize, Dataset>, GeometryError> {
    let labels = ds
        .labels
        .get(geometry_column)
        .ok_or_else(|| GeometryError::UnknownColumn(geometry_column.to_string()))?;
    let mut idx: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, label) in labels.iter().enumerate() {
        let c = cm
            .cluster_of(label)
            .ok_or_else(|| GeometryError::UnknownGeometry {
                label: label.clone(),
                row: row + 1,
            })?;
        idx.entry(c).or_default().push(row);
    }
    Ok(idx
        .into_iter()
        .map(|(c, rows)| (c, ds.subset(&rows)))
        .collect())
}

/// One-line size listing such as `Triangular 973, Rhomboid 2085`.
pub fn render_strata_sizes(names: &[String], sizes: &[usize]) -> String {
    names
        .iter()
        .zip(sizes)
        .map(|(n, s)| format!("{n} {s}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let digest = h.finalize();
    let key = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut r = rng::stream(key, 0);
    (0..dim).map(|_| StandardNormal.sample(&mut r)).collect()
}

/// Hash-seeded random-projection embedding of token lists, a stand-in for a
/// trained document embedder. Each token maps to a fixed Gaussian vector and a
/// description to the normalized mean of its token vectors.
pub fn fallback_embed(
    descriptions: &[(String, Vec<String>)],
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable, GeometryError> {
    if dim < 2 {
        return Err(GeometryError::InvalidDim);
    }
    let mut names = Vec::with_capacity(descriptions.len());
    let mut vectors = Vec::with_capacity(descriptions.len());
    for (i, (name, tokens)) in descriptions.iter().enumerate() {
        if tokens.is_empty() {
            return Err(GeometryError::EmptyDescription(i));
        }
        let mut v = vec![0.0; dim];
        for t in tokens {
            for (acc, x) in v.iter_mut().zip(token_vector(t, dim, seed)) {
                *acc += x;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(GeometryError::ZeroVector(name.clone()));
        }
        names.push(name.clone());
        vectors.push(v.iter().map(|x| x / norm).collect());
    }
    EmbeddingTable::new(names, vectors)
}
