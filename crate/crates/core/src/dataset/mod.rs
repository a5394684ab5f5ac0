//! Mixed-type tabular data: schema, ingestion, preprocessing, run ranking
//! and a synthetic generator with known ground truth.

mod io;
mod preprocess;
mod ranking;
pub mod synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_dataset, load_schema, save_schema, write_csv};
pub use preprocess::{preprocess, preprocess_with, PreprocessOptions};
pub use ranking::{rank_runs, RunSummary};
pub use synthetic::{generate_synthetic, GeneratorConfig, GroundTruth};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("column `{0}` is missing from the header")]
    MissingColumn(String),
    #[error("header column `{0}` is not in the schema")]
    UnexpectedColumn(String),
    #[error("row {row}, column `{col}`: value does not parse as the declared kind")]
    TypeMismatch { row: usize, col: String },
    #[error("row {row}, column `{col}`: missing value")]
    MissingValue { row: usize, col: String },
    #[error("file has no data rows")]
    EmptyFile,
    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("dataset is already preprocessed")]
    AlreadyPreprocessed,
    #[error("no embedding available for label `{label}` of column `{col}`")]
    MissingEmbedding { col: String, label: String },
    #[error("run ranking needs a run_id column")]
    MissingRunIds,
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Integer,
    Binary,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Feature,
    Target,
    RunId,
    PositionId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    #[default]
    None,
    Standardize,
    BinaryEncode,
    EmbeddingRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
    #[serde(default)]
    pub encoding: Encoding,
}

impl ColumnSpec {
    pub fn new(name: &str, kind: ColumnKind, role: ColumnRole, encoding: Encoding) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind,
            role,
            encoding,
        }
    }

    pub fn feature(name: &str, kind: ColumnKind, encoding: Encoding) -> Self {
        Self::new(name, kind, ColumnRole::Feature, encoding)
    }
}

/// Check the schema-level invariants.
pub fn validate_schema(schema: &[ColumnSpec]) -> Result<(), DatasetError> {
    let bad = |m: String| Err(DatasetError::InvalidSchema(m));
    let targets = schema
        .iter()
        .filter(|c| c.role == ColumnRole::Target)
        .count();
    if targets != 1 {
        return bad(format!(
            "expected exactly one target column, found {targets}"
        ));
    }
    for role in [ColumnRole::RunId, ColumnRole::PositionId] {
        if schema.iter().filter(|c| c.role == role).count() > 1 {
            return bad(format!("more than one {role:?} column"));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for c in schema {
        if !seen.insert(&c.name) {
            return bad(format!("duplicate column `{}`", c.name));
        }
        match (c.role, c.kind, c.encoding) {
            (ColumnRole::Target, ColumnKind::Categorical, _) => {
                return bad(format!("target `{}` must be numeric", c.name))
            }
            (
                ColumnRole::Feature,
                ColumnKind::Categorical,
                Encoding::BinaryEncode | Encoding::EmbeddingRef,
            ) => {}
            (ColumnRole::Feature, ColumnKind::Categorical, _) => {
                return bad(format!(
                    "categorical `{}` needs binary_encode or embedding_ref",
                    c.name
                ))
            }
            (ColumnRole::Feature, _, Encoding::BinaryEncode | Encoding::EmbeddingRef) => {
                return bad(format!(
                    "only categorical columns can be encoded (`{}`)",
                    c.name
                ))
            }
            (ColumnRole::Feature, ColumnKind::Binary, Encoding::Standardize) => {
                return bad(format!("binary `{}` cannot be standardized", c.name))
            }
            _ => {}
        }
    }
    Ok(())
}

/// How one slot of the encoded feature row was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum FeatureEncoding {
    Numeric,
    Bit { bit: usize },
    Embedding { component: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    /// Name of the schema column this slot comes from.
    pub source: String,
    pub kind: ColumnKind,
    pub encoding: FeatureEncoding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub mean: f64,
    pub sd: f64,
}

/// Per-slot standardization, mapping raw feature rows into model space.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub scaling: Vec<Option<Scaling>>,
}

impl FeatureTransform {
    pub fn identity(width: usize) -> Self {
        FeatureTransform {
            scaling: vec![None; width],
        }
    }

    pub fn forward(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.scaling)
            .map(|(&x, s)| match s {
                Some(s) => (x - s.mean) / s.sd,
                None => x,
            })
            .collect()
    }

    pub fn inverse(&self, scaled: &[f64]) -> Vec<f64> {
        scaled
            .iter()
            .zip(&self.scaling)
            .map(|(&z, s)| match s {
                Some(s) => z * s.sd + s.mean,
                None => z,
            })
            .collect()
    }
}

/// A mixed-type table. Raw datasets hold the numeric feature columns in
/// `rows` and categorical labels in `labels`; [`preprocess`] standardizes and
/// expands categoricals into the encoded row layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub columns: Vec<ColumnSpec>,
    pub features: Vec<FeatureColumn>,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub run_ids: Vec<String>,
    pub position_ids: Vec<String>,
    /// Raw labels of every categorical feature column, by column name.
    pub labels: BTreeMap<String, Vec<String>>,
    /// Sorted category list per binary-encoded column; a label's code is its index.
    pub category_codes: BTreeMap<String, Vec<String>>,
    /// Present once standardization has been applied.
    pub scaling: Option<Vec<Option<Scaling>>>,
}

impl Dataset {
    /// An all-continuous dataset from a feature matrix, without scaling.
    pub fn from_matrix(names: &[&str], rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Dataset {
        let mut schema: Vec<ColumnSpec> = names
            .iter()
            .map(|n| ColumnSpec::feature(n, ColumnKind::Continuous, Encoding::None))
            .collect();
        schema.push(ColumnSpec::new(
            "y",
            ColumnKind::Continuous,
            ColumnRole::Target,
            Encoding::None,
        ));
        let mut ds = io::empty_like(&schema);
        ds.rows = rows;
        ds.targets = targets;
        ds
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.features.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn transform(&self) -> FeatureTransform {
        match &self.scaling {
            Some(s) => FeatureTransform { scaling: s.clone() },
            None => FeatureTransform::identity(self.width()),
        }
    }

    /// Column `j` in raw units (standardization undone).
    pub fn raw_column(&self, j: usize) -> Vec<f64> {
        let s = self.scaling.as_ref().and_then(|s| s[j]);
        self.rows
            .iter()
            .map(|r| match s {
                Some(s) => r[j] * s.sd + s.mean,
                None => r[j],
            })
            .collect()
    }

    pub fn target_name(&self) -> &str {
        self.columns
            .iter()
            .find(|c| c.role == ColumnRole::Target)
            .map(|c| c.name.as_str())
            .unwrap_or("target")
    }

    /// Rows `idx` in the given order, with all metadata carried over.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let pick_s = |v: &Vec<String>| {
            if v.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| v[i].clone()).collect()
            }
        };
        Dataset {
            columns: self.columns.clone(),
            features: self.features.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            run_ids: pick_s(&self.run_ids),
            position_ids: pick_s(&self.position_ids),
            labels: self
                .labels
                .iter()
                .map(|(k, v)| (k.clone(), pick_s(v)))
                .collect(),
            category_codes: self.category_codes.clone(),
            scaling: self.scaling.clone(),
        }
    }
}
