use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub mean_thickness: f64,
    pub sd_thickness: f64,
    pub n_measurements: usize,
    pub rank: usize,
}

/// Rank production runs: runs whose mean lies within `tolerance` of `nominal`
/// come first, ordered by ascending sd and then by distance to nominal; the
/// remaining runs follow by distance to nominal and then sd. Ties fall back to
/// the run id.
pub fn rank_runs(
    ds: &Dataset,
    nominal: f64,
    tolerance: f64,
) -> Result<Vec<RunSummary>, DatasetError> {
    if !(tolerance > 0.0) {
        return Err(DatasetError::InvalidTolerance(tolerance));
    }
    if ds.run_ids.is_empty() {
        return Err(DatasetError::MissingRunIds);
    }
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (id, &y) in ds.run_ids.iter().zip(&ds.targets) {
        groups.entry(id.as_str()).or_default().push(y);
    }
    let mut runs: Vec<RunSummary> = groups
        .into_iter()
        .map(|(id, ys)| RunSummary {
            run_id: id.to_string(),
            mean_thickness: stats::mean(&ys),
            sd_thickness: stats::sample_sd(&ys),
            n_measurements: ys.len(),
            rank: 0,
        })
        .collect();

    let off = |r: &RunSummary| (r.mean_thickness - nominal).abs();
    runs.sort_by(|a, b| {
        let (ia, ib) = (off(a) <= tolerance, off(b) <= tolerance);
        let primary = ib.cmp(&ia);
        let rest = if ia {
            a.sd_thickness
                .total_cmp(&b.sd_thickness)
                .then(off(a).total_cmp(&off(b)))
        } else {
            off(a)
                .total_cmp(&off(b))
                .then(a.sd_thickness.total_cmp(&b.sd_thickness))
        };
        match primary {
            Ordering::Equal => rest.then_with(|| a.run_id.cmp(&b.run_id)),
            o => o,
        }
    });
    for (i, r) in runs.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(runs)
}
