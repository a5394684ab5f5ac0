//! Gradient-boosted regression trees under squared loss.
//!
//! Every tree is fit to the current residuals with exact greedy splits. The
//! Hessian of squared loss is constant, so a node's second-order sum is its
//! row count.

mod tree;


use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, FeatureTransform};
use crate::rng;

#[cfg(test)]
pub(crate) use tree::split_gain;
pub use tree::{Node, Tree};

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("target in row {0} is not finite")]
    NonFiniteTarget(usize),
    #[error("feature value in row {row}, column {col} is not finite")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),
    #[error("feature vector has width {got}, model expects {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("{rows} rows cannot be split into {k} folds")]
    TooFewRows { rows: usize, k: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda: f64,
    pub min_gain: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            n_trees: 300,
            learning_rate: 0.1,
            max_depth: 4,
            lambda: 1.0,
            min_gain: 1e-6,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        let bad = |m: String| Err(SurrogateError::InvalidHyperparameters(m));
        if self.n_trees < 1 {
            return bad("n_trees must be at least 1".into());
        }
        if self.max_depth > 8 {
            return bad(format!("max_depth {} exceeds 8", self.max_depth));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            ));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!(
                "lambda {} must be a nonnegative number",
                self.lambda
            ));
        }
        if !(self.min_gain >= 0.0) {
            return bad(format!("min_gain {} must be nonnegative", self.min_gain));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub hyperparameters: Hyperparameters,
    pub feature_names: Vec<String>,
    /// Standardization of the training data, so raw feature rows can be scored.
    pub transform: FeatureTransform,
    pub seed: u64,
}

impl SurrogateModel {
    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    fn check_width(&self, x: &[f64]) -> Result<(), SurrogateError> {
        if x.len() != self.width() {
            return Err(SurrogateError::WidthMismatch {
                expected: self.width(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Prediction for an encoded (model-space) feature row.
    pub fn predict(&self, x: &[f64]) -> Result<f64, SurrogateError> {
        self.check_width(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let eta = self.hyperparameters.learning_rate;
        self.base_score
            + self
                .trees
                .iter()
                .map(|t| eta * t.leaf_value(x))
                .sum::<f64>()
    }

    /// Prediction for a feature row in raw units.
    pub fn predict_raw(&self, raw: &[f64]) -> Result<f64, SurrogateError> {
        self.check_width(raw)?;
        Ok(self.predict_unchecked(&self.transform.forward(raw)))
    }

    pub fn predict_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, SurrogateError> {
        rows.iter().map(|x| self.predict(x)).collect()
    }

    /// Training-style MSE on `ds` after 0, 1, ..., n_trees trees.
    pub fn staged_mse(&self, ds: &Dataset) -> Result<Vec<f64>, SurrogateError> {
        let eta = self.hyperparameters.learning_rate;
        let mut pred = vec![self.base_score; ds.n_rows()];
        let mse = |p: &[f64]| {
            p.iter()
                .zip(&ds.targets)
                .map(|(a, y)| (y - a) * (y - a))
                .sum::<f64>()
                / p.len().max(1) as f64
        };
        let mut out = vec![mse(&pred)];
        for t in &self.trees {
            for (p, x) in pred.iter_mut().zip(&ds.rows) {
                self.check_width(x)?;
                *p += eta * t.leaf_value(x);
            }
            out.push(mse(&pred));
        }
        Ok(out)
    }

    /// Sum of split gains per feature, in feature order.
    pub fn total_gain(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.width()];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split { feature, gain, .. } = n {
                    g[*feature] += gain;
                }
            }
        }
        g
    }

    pub fn to_json(&self) -> Result<String, SurrogateError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, SurrogateError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SurrogateError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SurrogateError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_data(ds: &Dataset) -> Result<(), SurrogateError> {
    if ds.n_rows() == 0 {
        return Err(SurrogateError::EmptyDataset);
    }
    if let Some(i) = ds.targets.iter().position(|y| !y.is_finite()) {
        return Err(SurrogateError::NonFiniteTarget(i + 1));
    }
    let w = ds.width();
    for (i, row) in ds.rows.iter().enumerate() {
        if row.len() != w {
            return Err(SurrogateError::WidthMismatch {
                expected: w,
                got: row.len(),
            });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(SurrogateError::NonFiniteFeature { row: i + 1, col: j });
        }
    }
    Ok(())
}

/// Fit the boosted ensemble to an encoded dataset.
///
/// Rows are put in a canonical order first, so the fitted model does not
/// depend on the order in which rows arrive. Split search is exact and has no
/// random component; `seed` is recorded with the model.
pub fn fit(
    ds: &Dataset,
    hp: &Hyperparameters,
    seed: u64,
) -> Result<SurrogateModel, SurrogateError> {
    hp.validate()?;
    check_data(ds)?;
    let n = ds.n_rows();
    let w = ds.width();

    let mut canon: Vec<usize> = (0..n).collect();
    canon.sort_by(|&a, &b| {
        ds.rows[a]
            .iter()
            .zip(&ds.rows[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ds.targets[a].total_cmp(&ds.targets[b]))
    });
    let x: Vec<Vec<f64>> = canon.iter().map(|&i| ds.rows[i].clone()).collect();
    let y: Vec<f64> = canon.iter().map(|&i| ds.targets[i]).collect();

    let sorted: Vec<Vec<u32>> = (0..w)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                x[a as usize][f]
                    .total_cmp(&x[b as usize][f])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();
    let members: Vec<u32> = (0..n as u32).collect();

    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base_score; n];
    let mut trees = Vec::with_capacity(hp.n_trees);
    for _ in 0..hp.n_trees {
        let r: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        let builder = tree::Builder {
            x: &x,
            r: &r,
            max_depth: hp.max_depth,
            lambda: hp.lambda,
            min_gain: hp.min_gain,
        };
        let t = builder.grow(sorted.clone(), members.clone());
        for (p, xi) in pred.iter_mut().zip(&x) {
            *p += hp.learning_rate * t.leaf_value(xi);
        }
        trees.push(t);
    }
    Ok(SurrogateModel {
        base_score,
        trees,
        hyperparameters: hp.clone(),
        feature_names: ds.feature_names(),
        transform: ds.transform(),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r2: f64,
    pub mse: f64,
    pub mae: f64,
}

impl Metrics {
    pub fn compute(y: &[f64], yhat: &[f64]) -> Metrics {
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
        let sst: f64 = y.iter().map(|a| (a - mean) * (a - mean)).sum();
        let mae = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
        let r2 = if sst > 0.0 {
            1.0 - sse / sst
        } else if sse == 0.0 {
            1.0
        } else {
            0.0
        };
        Metrics {
            r2,
            mse: sse / n,
            mae,
        }
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "R² = {:.3}, MAE = {:.3}, MSE = {:.3}",
            self.r2, self.mae, self.mse
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub folds: Vec<Metrics>,
    /// Metrics of the pooled out-of-fold predictions.
    pub aggregate: Metrics,
    /// Fold of every row, in row order.
    pub fold_of: Vec<usize>,
    /// Out-of-fold prediction of every row, in row order.
    pub predictions: Vec<f64>,
}

/// Seeded assignment of `n` rows to `k` folds whose sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, 0));
    let mut fold = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

pub fn cross_validate(
    ds: &Dataset,
    hp: &Hyperparameters,
    k: usize,
    seed: u64,
) -> Result<CvReport, SurrogateError> {
    hp.validate()?;
    check_data(ds)?;
    let n = ds.n_rows();
    if k < 2 || n < k {
        return Err(SurrogateError::TooFewRows { rows: n, k });
    }
    let fold_of = fold_assignment(n, k, seed);
    let results: Vec<(Vec<usize>, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
            let m = fit(&ds.subset(&train), hp, seed)?;
            let p = test
                .iter()
                .map(|&i| m.predict_unchecked(&ds.rows[i]))
                .collect();
            Ok((test, p))
        })
        .collect::<Result<_, SurrogateError>>()?;
    let mut predictions = vec![0.0; n];
    let mut folds = Vec::with_capacity(k);
    for (test, p) in &results {
        let y: Vec<f64> = test.iter().map(|&i| ds.targets[i]).collect();
        folds.push(Metrics::compute(&y, p));
        for (&i, &v) in test.iter().zip(p) {
            predictions[i] = v;
        }
    }
    Ok(CvReport {
        k,
        folds,
        aggregate: Metrics::compute(&ds.targets, &predictions),
        fold_of,
        predictions,
    })
}

/// Features by descending total gain, ties in feature order, at most `top_q`.
pub fn feature_importance(m: &SurrogateModel, top_q: usize) -> Vec<(String, f64)> {
    let gains = m.total_gain();
    let mut idx: Vec<usize> = (0..gains.len()).collect();
    idx.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
    idx.into_iter()
        .take(top_q)
        .map(|i| (m.feature_names[i].clone(), gains[i]))
        .collect()
}

/// Prediction errors `y - predict(x)` on held-out rows, in row order.
pub fn residuals(m: &SurrogateModel, holdout: &Dataset) -> Result<Vec<f64>, SurrogateError> {
    holdout
        .rows
        .iter()
        .zip(&holdout.targets)
        .map(|(x, y)| Ok(y - m.predict(x)?))
        .collect()
}
