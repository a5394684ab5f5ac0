//! End-to-end workflow: surrogate and cross-validation, importance ranking,
//! prior construction, weighted ABC (global and per shape cluster) and
//! forward validation, with a JSON report and a hashed manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::abc::{
    self, Kernel, NoiseModel, PosteriorSummary, SufficiencyReport, ValidationReport, WeighOptions,
    WeightedPosterior, DEFAULT_LEVELS,
};
use crate::dataset::{
    self, ColumnKind, Dataset, FeatureEncoding, GeneratorConfig, GroundTruth, PreprocessOptions,
    RunSummary,
};
use crate::distfit::{self, Family, FittedPrior, McmcConfig};
use crate::geometry::{self, ClusterModel, EmbeddingTable, SimilarityMatrix};
use crate::surrogate::{self, CvReport, Hyperparameters, SurrogateModel};
use crate::{rng, stats};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {cause}")]
    StageFailure { stage: String, cause: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::StageFailure { .. } => 1,
        }
    }
}

fn stage_err(stage: &str) -> impl Fn(String) -> PipelineError + '_ {
    move |cause| PipelineError::StageFailure {
        stage: stage.to_string(),
        cause,
    }
}

/// How the kernel for ABC weights is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum KernelChoice {
    /// Logistic pdf with the location and scale of the residual fit.
    Residual,
    Fixed {
        kernel: Kernel,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservedMode {
    /// All target measurements of the (stratum) data.
    Pooled,
    /// One mean per run.
    RunMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbcSettings {
    pub n_sims: usize,
    pub sims_per_draw: usize,
    pub kernel: KernelChoice,
    pub observed: ObservedMode,
    pub standardize_summaries: bool,
}

impl Default for AbcSettings {
    fn default() -> Self {
        AbcSettings {
            n_sims: 1000,
            sims_per_draw: 15,
            kernel: KernelChoice::Residual,
            observed: ObservedMode::Pooled,
            standardize_summaries: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSettings {
    pub enabled: bool,
    pub k: usize,
    pub geometry_column: String,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        ClusterSettings {
            enabled: false,
            k: 4,
            geometry_column: "geometry".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankingSettings {
    pub nominal: f64,
    pub tolerance: f64,
}

impl Default for RankingSettings {
    fn default() -> Self {
        RankingSettings {
            nominal: 6.2,
            tolerance: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcSettings {
    pub n_iter: usize,
    pub burn_in: usize,
}

impl Default for McmcSettings {
    fn default() -> Self {
        let d = McmcConfig::default();
        McmcSettings {
            n_iter: d.n_iter,
            burn_in: d.burn_in,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Used when `data` is absent: generate a synthetic dataset instead.
    pub generator: GeneratorConfig,
    pub drop_constant_columns: bool,
    pub seed: u64,
    pub surrogate: Hyperparameters,
    pub cv_folds: usize,
    pub holdout_fraction: f64,
    pub candidates: Vec<Family>,
    pub top_q: usize,
    pub mcmc: McmcSettings,
    pub abc: AbcSettings,
    pub cluster: ClusterSettings,
    pub ranking: RankingSettings,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data: None,
            schema: None,
            embeddings: None,
            generator: GeneratorConfig::default(),
            drop_constant_columns: false,
            seed: 0,
            surrogate: Hyperparameters::default(),
            cv_folds: 10,
            holdout_fraction: 0.2,
            candidates: Family::ALL.to_vec(),
            top_q: 3,
            mcmc: McmcSettings::default(),
            abc: AbcSettings::default(),
            cluster: ClusterSettings::default(),
            ranking: RankingSettings::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.top_q < 1 {
            return bad("top_q must be at least 1".into());
        }
        if self.abc.n_sims < 1 {
            return bad("abc.n_sims must be at least 1".into());
        }
        if self.abc.sims_per_draw < 2 {
            return bad("abc.sims_per_draw must be at least 2".into());
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2".into());
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad("holdout_fraction must lie in (0, 1)".into());
        }
        if self.candidates.is_empty() {
            return bad("candidate family list is empty".into());
        }
        if self.mcmc.burn_in >= self.mcmc.n_iter {
            return bad("mcmc.burn_in must be below mcmc.n_iter".into());
        }
        if !(self.ranking.tolerance > 0.0) {
            return bad("ranking.tolerance must be positive".into());
        }
        if self.cluster.enabled && self.cluster.k < 2 {
            return bad("cluster.k must be at least 2".into());
        }
        if let KernelChoice::Fixed { kernel } = self.abc.kernel {
            kernel
                .validate()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        self.surrogate
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        match (&self.data, &self.schema) {
            (Some(_), None) => return bad("`data` needs a `schema`".into()),
            (None, Some(_)) => return bad("`schema` given without `data`".into()),
            _ => {}
        }
        for p in [&self.data, &self.schema, &self.embeddings]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        if self.cluster.enabled && self.data.is_some() && self.embeddings.is_none() {
            return bad("clustering on loaded data needs an `embeddings` TSV".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub family: Family,
    pub aic: f64,
    pub model_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorReport {
    pub feature: String,
    pub selected: FittedPrior,
    pub candidates: Vec<CandidateScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnedFeature {
    pub feature: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: String,
    pub rows: usize,
    pub encoded_features: Vec<String>,
    pub train_rows: usize,
    pub holdout_rows: usize,
    pub run_ranking: Option<Vec<RunSummary>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSection {
    pub cv: CvReport,
    pub cv_summary: String,
    pub actual: Vec<f64>,
    pub importance: Vec<(String, f64)>,
    pub top_features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorsSection {
    pub features: Vec<PriorReport>,
    pub residual: PriorReport,
    pub n_residuals: usize,
}

/// Weighted draws of the inferred features, kept for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub features: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcRun {
    pub label: String,
    pub n_rows: usize,
    pub n_observed: usize,
    pub n_sims: usize,
    pub ess: f64,
    pub ess_fraction: f64,
    pub ess_percent: String,
    pub kernel: Kernel,
    pub priors: Vec<PriorReport>,
    pub pinned: Vec<PinnedFeature>,
    pub posteriors: Vec<PosteriorSummary>,
    pub sufficiency: SufficiencyReport,
    pub draws: PosteriorDraws,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    pub model: ClusterModel,
    pub similarity: SimilarityMatrix,
    pub cluster_names: Vec<String>,
    pub sizes: Vec<usize>,
    pub sizes_line: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcSection {
    pub global: AbcRun,
    pub stratification: Option<Stratification>,
    pub clusters: Vec<AbcRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSection {
    pub global: ValidationReport,
    pub clusters: Vec<(String, ValidationReport)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub data: DataSummary,
    pub surrogate: SurrogateSection,
    pub priors: PriorsSection,
    pub abc: AbcSection,
    pub validation: ValidationSection,
}

/// In-memory results that are not part of the report.
#[derive(Debug)]
pub struct PipelineOutput {
    pub report: PipelineReport,
    pub model: SurrogateModel,
    pub posterior: WeightedPosterior,
    pub truth: Option<GroundTruth>,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub complete: bool,
    pub completed_stages: Vec<String>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hash every listed file and write `MANIFEST.json` next to them.
pub fn write_manifest(
    dir: &Path,
    files: &[PathBuf],
    completed: &[String],
    failure: Option<&PipelineError>,
) -> std::io::Result<PathBuf> {
    let mut entries = Vec::new();
    for f in files {
        let bytes = std::fs::read(f)?;
        let rel = f.strip_prefix(dir).unwrap_or(f);
        entries.push(ManifestEntry {
            path: rel.to_string_lossy().into_owned(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let (failed_stage, error) = match failure {
        Some(PipelineError::StageFailure { stage, cause }) => {
            (Some(stage.clone()), Some(cause.clone()))
        }
        Some(e) => (None, Some(e.to_string())),
        None => (None, None),
    };
    let m = Manifest {
        complete: failure.is_none(),
        completed_stages: completed.to_vec(),
        failed_stage,
        error,
        files: entries,
    };
    let path = dir.join("MANIFEST.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n",
    )?;
    Ok(path)
}

struct Loaded {
    raw: Dataset,
    ds: Dataset,
    truth: Option<GroundTruth>,
    embeddings: Option<EmbeddingTable>,
    source: String,
}

fn load(cfg: &PipelineConfig) -> Result<Loaded, String> {
    let embeddings = match &cfg.embeddings {
        Some(p) => Some(EmbeddingTable::read_tsv(p).map_err(|e| e.to_string())?),
        None => None,
    };
    let (raw, truth, source) = match (&cfg.data, &cfg.schema) {
        (Some(data), Some(schema)) => {
            let schema = dataset::load_schema(schema).map_err(|e| e.to_string())?;
            let raw = dataset::load_dataset(data, &schema).map_err(|e| e.to_string())?;
            (raw, None, data.display().to_string())
        }
        _ => {
            let seed = rng::derive_seed(cfg.seed, "generate");
            let (raw, truth) =
                dataset::generate_synthetic(&cfg.generator, seed).map_err(|e| e.to_string())?;
            (raw, Some(truth), "synthetic".to_string())
        }
    };
    let embeddings = embeddings.or_else(|| truth.as_ref().map(GroundTruth::embedding_table));
    let opts = PreprocessOptions {
        drop_constant: cfg.drop_constant_columns,
    };
    let ds =
        dataset::preprocess_with(&raw, opts, embeddings.as_ref()).map_err(|e| e.to_string())?;
    Ok(Loaded {
        raw,
        ds,
        truth,
        embeddings,
        source,
    })
}

fn prior_report(feature: &str, ranked: &[FittedPrior], selected: FittedPrior) -> PriorReport {
    PriorReport {
        feature: feature.to_string(),
        selected,
        candidates: ranked
            .iter()
            .map(|f| CandidateScore {
                family: f.family,
                aic: f.aic,
                model_prob: f.model_prob,
            })
            .collect(),
    }
}

/// AIC selection over `candidates`, then MCMC on the winner's hyperparameters.
pub fn build_prior(
    feature: &str,
    sample: &[f64],
    candidates: &[Family],
    mcmc: &McmcSettings,
    seed: u64,
) -> Result<PriorReport, String> {
    let ranked =
        distfit::select_model(sample, candidates).map_err(|e| format!("{feature}: {e}"))?;
    let mut best = ranked[0].clone();
    let cfg = McmcConfig {
        n_iter: mcmc.n_iter,
        burn_in: mcmc.burn_in,
        scales: None,
        seed,
    };
    match distfit::mcmc_posterior(best.family, sample, &cfg) {
        Ok(chain) => best.chain = Some(chain),
        Err(distfit::DistFitError::DegenerateSample(_)) => {}
        Err(e) => return Err(format!("{feature}: {e}")),
    }
    Ok(prior_report(feature, &ranked, best))
}

fn is_binary(ds: &Dataset, j: usize) -> bool {
    ds.features[j].kind == ColumnKind::Binary
        || matches!(ds.features[j].encoding, FeatureEncoding::Bit { .. })
}

/// Value a non-inferred feature is held at: the median, or the majority value
/// for binary columns.
pub fn pin_value(ds: &Dataset, j: usize) -> f64 {
    let v = ds.raw_column(j);
    if is_binary(ds, j) {
        let ones = v.iter().filter(|&&x| x >= 0.5).count();
        if 2 * ones > v.len() {
            1.0
        } else {
            0.0
        }
    } else {
        stats::median(&v)
    }
}

pub fn observed_sample(ds: &Dataset, mode: ObservedMode) -> Vec<f64> {
    match mode {
        ObservedMode::Pooled => ds.targets.clone(),
        ObservedMode::RunMeans if !ds.run_ids.is_empty() => {
            let mut runs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for (id, y) in ds.run_ids.iter().zip(&ds.targets) {
                runs.entry(id).or_default().push(*y);
            }
            runs.values().map(|ys| stats::mean(ys)).collect()
        }
        ObservedMode::RunMeans => ds.targets.clone(),
    }
}

/// Priors for every encoded feature of `ds`: fitted for the inferred
/// features, point masses elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePriors {
    pub priors: Vec<(String, FittedPrior)>,
    pub reports: Vec<PriorReport>,
    pub pinned: Vec<PinnedFeature>,
}

/// Fit priors for the non-constant features in `inferred` and pin the rest.
pub fn feature_priors(
    ds: &Dataset,
    inferred: &[String],
    candidates: &[Family],
    mcmc: &McmcSettings,
    seed: u64,
) -> Result<FeaturePriors, String> {
    let mut reports = Vec::new();
    for (j, name) in ds.feature_names().iter().enumerate() {
        let raw = ds.raw_column(j);
        if inferred.contains(name) && raw.iter().any(|&x| x != raw[0]) {
            let mseed = rng::derive_seed(seed, &format!("mcmc/{name}"));
            reports.push(build_prior(name, &raw, candidates, mcmc, mseed)?);
        }
    }
    let (priors, pinned) = complete_priors(ds, &reports);
    Ok(FeaturePriors {
        priors,
        reports,
        pinned,
    })
}

/// Use the selected prior of each report and pin every other feature.
pub fn complete_priors(
    ds: &Dataset,
    fitted: &[PriorReport],
) -> (Vec<(String, FittedPrior)>, Vec<PinnedFeature>) {
    let mut priors = Vec::new();
    let mut pinned = Vec::new();
    for (j, name) in ds.feature_names().iter().enumerate() {
        match fitted.iter().find(|r| &r.feature == name) {
            Some(r) => priors.push((name.clone(), r.selected.clone())),
            None => {
                let value = pin_value(ds, j);
                priors.push((name.clone(), FittedPrior::constant(value)));
                pinned.push(PinnedFeature {
                    feature: name.clone(),
                    value,
                });
            }
        }
    }
    (priors, pinned)
}

struct AbcOutcome {
    run: AbcRun,
    posterior: WeightedPosterior,
    observed: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn abc_on(
    label: &str,
    ds: &Dataset,
    model: &SurrogateModel,
    top: &[String],
    noise: &NoiseModel,
    kernel: Kernel,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<AbcOutcome, String> {
    let FeaturePriors {
        priors,
        reports,
        pinned,
    } = feature_priors(ds, top, &cfg.candidates, &cfg.mcmc, seed)?;
    let observed = observed_sample(ds, cfg.abc.observed);
    let sims = abc::simulate_forward(
        model,
        &priors,
        noise,
        cfg.abc.n_sims,
        cfg.abc.sims_per_draw,
        rng::derive_seed(seed, "simulate"),
    )
    .map_err(|e| e.to_string())?;
    let opts = WeighOptions {
        standardize: cfg.abc.standardize_summaries,
    };
    let wp = abc::weigh_with(&sims, &observed, &kernel, opts).map_err(|e| e.to_string())?;
    let posteriors = top
        .iter()
        .map(|f| abc::posterior_summary(&wp, f, &DEFAULT_LEVELS))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let summary = abc::summarize(&observed).map_err(|e| e.to_string())?;
    let sufficiency = abc::sufficiency_check(&observed, &summary).map_err(|e| e.to_string())?;
    let idx: Vec<usize> = top.iter().filter_map(|f| wp.feature_index(f)).collect();
    let draws = PosteriorDraws {
        features: top.to_vec(),
        values: wp
            .draws
            .iter()
            .map(|d| idx.iter().map(|&j| d[j]).collect())
            .collect(),
        weights: wp.weights.clone(),
    };
    Ok(AbcOutcome {
        run: AbcRun {
            label: label.to_string(),
            n_rows: ds.n_rows(),
            n_observed: observed.len(),
            n_sims: wp.len(),
            ess: wp.ess,
            ess_fraction: wp.ess_fraction(),
            ess_percent: wp.ess_percent(),
            kernel,
            priors: reports,
            pinned,
            posteriors,
            sufficiency,
            draws,
        },
        posterior: wp,
        observed,
    })
}

/// Rows split into (train, holdout) by a seeded shuffle.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, 0));
    let n_hold = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut hold: Vec<usize> = perm[..n_hold].to_vec();
    let mut train: Vec<usize> = perm[n_hold..].to_vec();
    hold.sort_unstable();
    train.sort_unstable();
    (train, hold)
}

pub const STAGES: [&str; 5] = ["surrogate", "importance", "priors", "abc", "validation"];

/// Run every stage in memory. Nothing is written to disk.
pub fn run_stages(
    cfg: &PipelineConfig,
    completed: &mut Vec<String>,
) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let root = cfg.seed;
    let loaded = load(cfg).map_err(stage_err("surrogate"))?;
    let ds = &loaded.ds;
    if ds.n_rows() < cfg.cv_folds.max(10) {
        return Err(stage_err("surrogate")(format!("only {} rows", ds.n_rows())));
    }

    // 1. Surrogate quality.
    let s1 = stage_err("surrogate");
    let cv = surrogate::cross_validate(
        ds,
        &cfg.surrogate,
        cfg.cv_folds,
        rng::derive_seed(root, "cv"),
    )
    .map_err(|e| s1(e.to_string()))?;
    let (train_idx, hold_idx) = holdout_split(
        ds.n_rows(),
        cfg.holdout_fraction,
        rng::derive_seed(root, "holdout"),
    );
    let train = ds.subset(&train_idx);
    let holdout = ds.subset(&hold_idx);
    let model = surrogate::fit(&train, &cfg.surrogate, rng::derive_seed(root, "fit"))
        .map_err(|e| s1(e.to_string()))?;
    completed.push("surrogate".into());

    // 2. Importance on a full-data refit.
    let s2 = stage_err("importance");
    let full = surrogate::fit(ds, &cfg.surrogate, rng::derive_seed(root, "fit-full"))
        .map_err(|e| s2(e.to_string()))?;
    let importance = surrogate::feature_importance(&full, full.width());
    let top: Vec<String> = importance
        .iter()
        .take(cfg.top_q)
        .filter(|(_, g)| *g > 0.0)
        .map(|(n, _)| n.clone())
        .collect();
    if top.is_empty() {
        return Err(s2("no feature carries positive gain".into()));
    }
    completed.push("importance".into());

    // 3. Residual distribution on held-out rows.
    let s3 = stage_err("priors");
    let eps = surrogate::residuals(&model, &holdout).map_err(|e| s3(e.to_string()))?;
    let continuous: Vec<Family> = cfg
        .candidates
        .iter()
        .copied()
        .filter(|f| !f.is_discrete())
        .collect();
    let continuous = if continuous.is_empty() {
        vec![Family::Logistic]
    } else {
        continuous
    };
    let residual = build_prior(
        "residual",
        &eps,
        &continuous,
        &cfg.mcmc,
        rng::derive_seed(root, "mcmc/residual"),
    )
    .map_err(&s3)?;
    let noise = NoiseModel::from_prior(&residual.selected);
    let kernel = match cfg.abc.kernel {
        KernelChoice::Residual => {
            Kernel::from_residuals(&residual.selected).map_err(|e| s3(e.to_string()))?
        }
        KernelChoice::Fixed { kernel } => kernel,
    };
    let mut feature_priors = Vec::new();
    for name in &top {
        let j = ds
            .feature_index(name)
            .expect("importance names come from the dataset");
        let raw = ds.raw_column(j);
        if raw.iter().all(|&x| x == raw[0]) {
            continue;
        }
        let seed = rng::derive_seed(
            rng::derive_seed(root, "abc/global"),
            &format!("mcmc/{name}"),
        );
        feature_priors
            .push(build_prior(name, &raw, &cfg.candidates, &cfg.mcmc, seed).map_err(&s3)?);
    }
    completed.push("priors".into());

    // 4. Weighted ABC, global then per cluster.
    let s4 = stage_err("abc");
    let global = abc_on(
        "global",
        ds,
        &model,
        &top,
        &noise,
        kernel,
        cfg,
        rng::derive_seed(root, "abc/global"),
    )
    .map_err(&s4)?;
    let mut stratification = None;
    let mut cluster_runs: Vec<AbcOutcome> = Vec::new();
    if cfg.cluster.enabled {
        let emb = loaded
            .embeddings
            .as_ref()
            .ok_or_else(|| s4("clustering needs embeddings".into()))?;
        let sim = geometry::cosine_matrix(emb).map_err(|e| s4(e.to_string()))?;
        let cm = geometry::spectral_cluster(&sim, cfg.cluster.k, rng::derive_seed(root, "cluster"))
            .map_err(|e| s4(e.to_string()))?;
        let strata = geometry::stratify(ds, &cm, &cfg.cluster.geometry_column)
            .map_err(|e| s4(e.to_string()))?;
        let names: Vec<String> = (0..cm.k)
            .map(|c| cluster_name(&cm, c, loaded.truth.as_ref()))
            .collect();
        let sizes: Vec<usize> = (0..cm.k)
            .map(|c| strata.get(&c).map_or(0, Dataset::n_rows))
            .collect();
        for (c, stratum) in &strata {
            if stratum.n_rows() < distfit::MIN_SAMPLE {
                continue;
            }
            let seed = rng::derive_seed(root, &format!("abc/cluster{c}"));
            cluster_runs.push(
                abc_on(&names[*c], stratum, &model, &top, &noise, kernel, cfg, seed)
                    .map_err(&s4)?,
            );
        }
        stratification = Some(Stratification {
            sizes_line: geometry::render_strata_sizes(&names, &sizes),
            model: cm,
            similarity: sim,
            cluster_names: names,
            sizes,
        });
    }
    completed.push("abc".into());

    // 5. Forward validation.
    let s5 = stage_err("validation");
    let vseed = rng::derive_seed(root, "validation");
    let global_validation =
        abc::forward_validate(&global.posterior, &model, &noise, &global.observed, vseed)
            .map_err(|e| s5(e.to_string()))?;
    let mut cluster_validation = Vec::new();
    for (i, o) in cluster_runs.iter().enumerate() {
        let v = abc::forward_validate(
            &o.posterior,
            &model,
            &noise,
            &o.observed,
            rng::derive_seed(vseed, &i.to_string()),
        )
        .map_err(|e| s5(e.to_string()))?;
        cluster_validation.push((o.run.label.clone(), v));
    }
    completed.push("validation".into());

    let run_ranking = if loaded.raw.run_ids.is_empty() {
        None
    } else {
        dataset::rank_runs(&loaded.raw, cfg.ranking.nominal, cfg.ranking.tolerance).ok()
    };
    let report = PipelineReport {
        seed: root,
        data: DataSummary {
            source: loaded.source.clone(),
            rows: ds.n_rows(),
            encoded_features: ds.feature_names(),
            train_rows: train.n_rows(),
            holdout_rows: holdout.n_rows(),
            run_ranking,
        },
        surrogate: SurrogateSection {
            cv_summary: cv.aggregate.to_string(),
            actual: ds.targets.clone(),
            cv,
            importance,
            top_features: top,
        },
        priors: PriorsSection {
            features: feature_priors,
            n_residuals: eps.len(),
            residual,
        },
        abc: AbcSection {
            global: global.run,
            stratification,
            clusters: cluster_runs.into_iter().map(|o| o.run).collect(),
        },
        validation: ValidationSection {
            global: global_validation,
            clusters: cluster_validation,
        },
    };
    Ok(PipelineOutput {
        report,
        model,
        posterior: global.posterior,
        truth: loaded.truth,
        files: Vec::new(),
    })
}

fn cluster_name(cm: &ClusterModel, c: usize, truth: Option<&GroundTruth>) -> String {
    // With ground truth, name a cluster after the planted shape most of its
    // members come from.
    if let Some(t) = truth {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for m in cm.members(c) {
            if let Some(tc) = t.category_cluster(m) {
                *votes.entry(tc).or_default() += 1;
            }
        }
        if let Some((&tc, _)) = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) {
            return t.cluster_names[tc].clone();
        }
    }
    format!("cluster{c}")
}

/// Run the pipeline and write report, model, posterior, plots and manifest to
/// `cfg.output_dir`. On failure the artifacts written so far are kept and the
/// manifest records the failing stage.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)
        .map_err(|e| PipelineError::Config(format!("{}: {e}", dir.display())))?;
    let mut completed = Vec::new();
    let mut files = Vec::new();
    let result = run_stages(cfg, &mut completed).and_then(|mut out| {
        let write_err = stage_err("report");
        let mut write = |name: &str, text: String| -> Result<(), PipelineError> {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| write_err(e.to_string()))?;
            files.push(p);
            Ok(())
        };
        let json = |v: &dyn erased::Json| v.pretty();
        write("report.json", json(&out.report))?;
        write(
            "model.json",
            out.model.to_json().map_err(|e| write_err(e.to_string()))?,
        )?;
        write("posterior.json", json(&out.posterior))?;
        if let Some(t) = &out.truth {
            write("truth.json", json(t))?;
        }
        let plots = crate::plot::emit_plots(&out.report, &dir)
            .map_err(|e| stage_err("plots")(e.to_string()))?;
        files.extend(plots);
        out.files = files.clone();
        Ok(out)
    });
    let failure = result.as_ref().err();
    if failure.is_some() {
        // Keep whatever exists on disk for inspection.
        files.retain(|p| p.exists());
    }
    let manifest = write_manifest(&dir, &files, &completed, failure)
        .map_err(|e| stage_err("manifest")(e.to_string()))?;
    result.map(|mut out| {
        out.files.push(manifest);
        out
    })
}

mod erased {
    pub trait Json {
        fn pretty(&self) -> String;
    }

    impl<T: serde::Serialize> Json for T {
        fn pretty(&self) -> String {
            serde_json::to_string_pretty(self).expect("report types serialize") + "\n"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_round_trip() {
        let cfg = PipelineConfig::default();
        let back: PipelineConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let partial: PipelineConfig =
            serde_json::from_str(r#"{"top_q": 5, "abc": {"n_sims": 200}}"#).unwrap();
        assert_eq!(partial.top_q, 5);
        assert_eq!(partial.abc.n_sims, 200);
        assert_eq!(partial.abc.sims_per_draw, 15);
    }

    #[test]
    fn config_validation() {
        let bad = PipelineConfig {
            top_q: 0,
            ..Default::default()
        };
        assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
        let bad = PipelineConfig {
            data: Some(PathBuf::from("/nonexistent/data.csv")),
            schema: Some(PathBuf::from("/nonexistent/schema.json")),
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn holdout_is_a_partition() {
        let (tr, ho) = holdout_split(103, 0.2, 4);
        assert_eq!(ho.len(), 21);
        let mut all: Vec<usize> = tr.iter().chain(&ho).copied().collect();
        all.sort();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
    }

    #[test]
    fn small_pipeline_runs_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            generator: GeneratorConfig {
                rows: 600,
                ..Default::default()
            },
            surrogate: Hyperparameters {
                n_trees: 60,
                ..Default::default()
            },
            cv_folds: 5,
            mcmc: McmcSettings {
                n_iter: 2000,
                burn_in: 500,
            },
            abc: AbcSettings {
                n_sims: 200,
                ..Default::default()
            },
            cluster: ClusterSettings {
                enabled: true,
                ..Default::default()
            },
            output_dir: dir.path().join("a"),
            seed: 3,
            ..Default::default()
        };
        let a = run_pipeline(&cfg).unwrap();
        assert_eq!(a.report.abc.clusters.len(), 4);
        assert_eq!(a.report.validation.clusters.len(), 4);
        let manifest: Manifest = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("a/MANIFEST.json")).unwrap(),
        )
        .unwrap();
        assert!(manifest.complete);
        for f in &manifest.files {
            let bytes = std::fs::read(dir.path().join("a").join(&f.path)).unwrap();
            assert_eq!(sha256_hex(&bytes), f.sha256);
        }
        let b = run_pipeline(&PipelineConfig {
            output_dir: dir.path().join("b"),
            ..cfg
        })
        .unwrap();
        let ra = std::fs::read(dir.path().join("a/report.json")).unwrap();
        let rb = std::fs::read(dir.path().join("b/report.json")).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn failure_keeps_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            generator: GeneratorConfig {
                rows: 300,
                ..Default::default()
            },
            surrogate: Hyperparameters {
                n_trees: 20,
                ..Default::default()
            },
            abc: AbcSettings {
                n_sims: 50,
                kernel: KernelChoice::Fixed {
                    kernel: Kernel::Indicator { epsilon: 0.0 },
                },
                ..Default::default()
            },
            mcmc: McmcSettings {
                n_iter: 500,
                burn_in: 100,
            },
            output_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let manifest: Manifest = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("MANIFEST.json")).unwrap(),
        )
        .unwrap();
        assert!(!manifest.complete);
        assert_eq!(manifest.failed_stage.as_deref(), Some("abc"));
        assert_eq!(
            manifest.completed_stages,
            vec!["surrogate", "importance", "priors"]
        );
    }
}
