use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use super::{
    validate_schema, ColumnKind, ColumnRole, ColumnSpec, Dataset, DatasetError, FeatureColumn,
    FeatureEncoding,
};

pub fn load_schema(path: &Path) -> Result<Vec<ColumnSpec>, DatasetError> {
    let schema: Vec<ColumnSpec> = serde_json::from_reader(File::open(path)?)?;
    validate_schema(&schema)?;
    Ok(schema)
}

pub fn save_schema(schema: &[ColumnSpec], path: &Path) -> Result<(), DatasetError> {
    let text = serde_json::to_string_pretty(schema)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn parse_number(cell: &str, kind: ColumnKind) -> Option<f64> {
    let v: f64 = cell.trim().parse().ok()?;
    if !v.is_finite() {
        return None;
    }
    match kind {
        ColumnKind::Integer if v.fract() != 0.0 => None,
        ColumnKind::Binary if v != 0.0 && v != 1.0 => None,
        _ => Some(v),
    }
}

/// Read a CSV file whose header matches `schema` exactly (same names, any order).
///
/// Values are kept raw: no standardization and no categorical encoding.
pub fn load_dataset(path: &Path, schema: &[ColumnSpec]) -> Result<Dataset, DatasetError> {
    validate_schema(schema)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(File::open(path)?);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(DatasetError::EmptyFile);
    }
    let mut position = Vec::with_capacity(schema.len());
    for spec in schema {
        match header.iter().position(|h| h == &spec.name) {
            Some(p) => position.push(p),
            None => return Err(DatasetError::MissingColumn(spec.name.clone())),
        }
    }
    if let Some(extra) = header
        .iter()
        .find(|h| !schema.iter().any(|c| &c.name == *h))
    {
        return Err(DatasetError::UnexpectedColumn(extra.clone()));
    }

    let mut ds = empty_like(schema);
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let mut row = Vec::with_capacity(ds.features.len());
        for (spec, &p) in schema.iter().zip(&position) {
            let cell = record.get(p).unwrap_or("").trim();
            if cell.is_empty() {
                return Err(DatasetError::MissingValue {
                    row: row_no,
                    col: spec.name.clone(),
                });
            }
            let mismatch = || DatasetError::TypeMismatch {
                row: row_no,
                col: spec.name.clone(),
            };
            match spec.role {
                ColumnRole::RunId => ds.run_ids.push(cell.to_string()),
                ColumnRole::PositionId => ds.position_ids.push(cell.to_string()),
                ColumnRole::Target => ds
                    .targets
                    .push(parse_number(cell, spec.kind).ok_or_else(mismatch)?),
                ColumnRole::Feature => match spec.kind {
                    ColumnKind::Categorical => ds
                        .labels
                        .get_mut(&spec.name)
                        .expect("label slot per categorical")
                        .push(cell.to_string()),
                    kind => row.push(parse_number(cell, kind).ok_or_else(mismatch)?),
                },
            }
        }
        ds.rows.push(row);
    }
    if ds.rows.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    Ok(ds)
}

/// A dataset with the raw layout of `schema` and no rows.
pub(crate) fn empty_like(schema: &[ColumnSpec]) -> Dataset {
    let features = schema
        .iter()
        .filter(|c| c.role == ColumnRole::Feature && c.kind != ColumnKind::Categorical)
        .map(|c| FeatureColumn {
            name: c.name.clone(),
            source: c.name.clone(),
            kind: c.kind,
            encoding: FeatureEncoding::Numeric,
        })
        .collect();
    let labels: BTreeMap<String, Vec<String>> = schema
        .iter()
        .filter(|c| c.role == ColumnRole::Feature && c.kind == ColumnKind::Categorical)
        .map(|c| (c.name.clone(), Vec::new()))
        .collect();
    Dataset {
        columns: schema.to_vec(),
        features,
        rows: Vec::new(),
        targets: Vec::new(),
        run_ids: Vec::new(),
        position_ids: Vec::new(),
        labels,
        category_codes: BTreeMap::new(),
        scaling: None,
    }
}

/// Write a raw dataset back to CSV in schema column order. Floats use the
/// shortest representation that round-trips.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    if ds.scaling.is_some() {
        return Err(DatasetError::AlreadyPreprocessed);
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ds.columns.iter().map(|c| c.name.as_str()))?;
    for i in 0..ds.n_rows() {
        let mut numeric = ds.rows[i].iter();
        let record: Vec<String> = ds
            .columns
            .iter()
            .map(|c| match c.role {
                ColumnRole::RunId => ds.run_ids[i].clone(),
                ColumnRole::PositionId => ds.position_ids[i].clone(),
                ColumnRole::Target => format!("{}", ds.targets[i]),
                ColumnRole::Feature if c.kind == ColumnKind::Categorical => {
                    ds.labels[&c.name][i].clone()
                }
                ColumnRole::Feature => format!("{}", numeric.next().expect("row width")),
            })
            .collect();
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
