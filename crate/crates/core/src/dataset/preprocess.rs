use super::{
    ColumnKind, ColumnRole, Dataset, DatasetError, Encoding, FeatureColumn, FeatureEncoding,
    Scaling,
};
use crate::geometry::EmbeddingTable;
use crate::stats;

#[derive(Debug, Clone, Copy, Default)]
pub struct PreprocessOptions {
    /// Drop constant standardized columns instead of failing with `ZeroVariance`.
    pub drop_constant: bool,
}

/// Number of bit columns for `n` categories: ceil(log2 n), at least one.
pub(crate) fn code_width(n: usize) -> usize {
    if n <= 2 {
        1
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

/// Standardize numeric features (population sd) and binary-encode categoricals.
pub fn preprocess(ds: &Dataset) -> Result<Dataset, DatasetError> {
    preprocess_with(ds, PreprocessOptions::default(), None)
}

pub fn preprocess_with(
    ds: &Dataset,
    opts: PreprocessOptions,
    embeddings: Option<&EmbeddingTable>,
) -> Result<Dataset, DatasetError> {
    if ds.scaling.is_some() {
        return Err(DatasetError::AlreadyPreprocessed);
    }
    let n = ds.n_rows();
    let mut features: Vec<FeatureColumn> = Vec::new();
    let mut scaling: Vec<Option<Scaling>> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut category_codes = ds.category_codes.clone();
    let mut numeric_slot = 0usize;

    for spec in ds.columns.iter().filter(|c| c.role == ColumnRole::Feature) {
        if spec.kind != ColumnKind::Categorical {
            let raw = ds.column(numeric_slot);
            numeric_slot += 1;
            let (values, scale) = if spec.encoding == Encoding::Standardize {
                let mean = stats::mean(&raw);
                let sd = stats::population_variance(&raw).sqrt();
                if !(sd > 0.0) {
                    if opts.drop_constant {
                        continue;
                    }
                    return Err(DatasetError::ZeroVariance(spec.name.clone()));
                }
                let z = raw.iter().map(|x| (x - mean) / sd).collect();
                (z, Some(Scaling { mean, sd }))
            } else {
                (raw, None)
            };
            features.push(FeatureColumn {
                name: spec.name.clone(),
                source: spec.name.clone(),
                kind: spec.kind,
                encoding: FeatureEncoding::Numeric,
            });
            scaling.push(scale);
            columns.push(values);
            continue;
        }

        let labels = &ds.labels[&spec.name];
        match spec.encoding {
            Encoding::EmbeddingRef => {
                let table = embeddings.ok_or_else(|| DatasetError::MissingEmbedding {
                    col: spec.name.clone(),
                    label: labels.first().cloned().unwrap_or_default(),
                })?;
                let dim = table.dim();
                let mut comps = vec![Vec::with_capacity(n); dim];
                for label in labels {
                    let v = table
                        .vector(label)
                        .ok_or_else(|| DatasetError::MissingEmbedding {
                            col: spec.name.clone(),
                            label: label.clone(),
                        })?;
                    for (c, x) in comps.iter_mut().zip(v) {
                        c.push(*x);
                    }
                }
                for (k, c) in comps.into_iter().enumerate() {
                    features.push(FeatureColumn {
                        name: format!("{}_e{k}", spec.name),
                        source: spec.name.clone(),
                        kind: ColumnKind::Continuous,
                        encoding: FeatureEncoding::Embedding { component: k },
                    });
                    scaling.push(None);
                    columns.push(c);
                }
            }
            _ => {
                let mut cats: Vec<String> = labels.clone();
                cats.sort();
                cats.dedup();
                let width = code_width(cats.len());
                let mut bits = vec![Vec::with_capacity(n); width];
                for label in labels {
                    let code = cats
                        .binary_search(label)
                        .expect("label from the same column");
                    for (b, col) in bits.iter_mut().enumerate() {
                        col.push(((code >> b) & 1) as f64);
                    }
                }
                for (b, col) in bits.into_iter().enumerate() {
                    features.push(FeatureColumn {
                        name: format!("{}_b{b}", spec.name),
                        source: spec.name.clone(),
                        kind: ColumnKind::Binary,
                        encoding: FeatureEncoding::Bit { bit: b },
                    });
                    scaling.push(None);
                    columns.push(col);
                }
                category_codes.insert(spec.name.clone(), cats);
            }
        }
    }

    let rows = (0..n)
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect();
    Ok(Dataset {
        columns: ds.columns.clone(),
        features,
        rows,
        targets: ds.targets.clone(),
        run_ids: ds.run_ids.clone(),
        position_ids: ds.position_ids.clone(),
        labels: ds.labels.clone(),
        category_codes,
        scaling: Some(scaling),
    })
}
