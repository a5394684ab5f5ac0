//! `mixedabc` command-line tool. Every stage of the workflow can be run on its
//! own, and `pipeline` runs them all from one JSON config.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mixedabc::abc::{self, Kernel, NoiseModel, WeighOptions, DEFAULT_LEVELS};
use mixedabc::dataset::{self, Dataset, GeneratorConfig, PreprocessOptions};
use mixedabc::distfit::Family;
use mixedabc::geometry::{self, EmbeddingTable};
use mixedabc::pipeline::{
    self, McmcSettings, PipelineConfig, PipelineError, PipelineReport, PriorReport,
};
use mixedabc::surrogate::{self, CvReport, Hyperparameters, SurrogateModel};
use mixedabc::{plot, rng};

#[derive(Parser)]
#[command(
    name = "mixedabc",
    version,
    about = "Surrogate-based weighted ABC for mixed-type process data"
)]
struct Cli {
    /// Worker threads; overrides MIXEDABC_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with known ground truth.
    Generate(GenerateArgs),
    /// Cross-validate and fit the surrogate, report importance and residuals.
    Fit(FitArgs),
    /// AIC model selection and MCMC for the chosen features.
    Priors(PriorsArgs),
    /// Weighted ABC through a fitted surrogate.
    Abc(AbcArgs),
    /// Spectral clustering of geometry embeddings.
    Cluster(ClusterArgs),
    /// Run every stage from a JSON config.
    Pipeline(PipelineArgs),
    /// Render the SVG figures of a report.
    Plot(PlotArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// JSON column schema.
    #[arg(long)]
    schema: PathBuf,
    /// Embedding TSV for embedding-encoded columns.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 4000)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Ground truth JSON.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Schema JSON; defaults to `<out>.schema.json`.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Planted geometry embeddings as TSV.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Generator settings JSON; `--rows` still wins.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model JSON.
    #[arg(long)]
    out: PathBuf,
    /// Fit report JSON (CV metrics, importance, residuals).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Surrogate hyperparameters JSON.
    #[arg(long)]
    hyperparameters: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PriorsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated encoded feature names.
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    /// Fit report from `fit`; supplies the ranking and residuals.
    #[arg(long)]
    fit: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    top_q: usize,
    /// Comma-separated candidate families.
    #[arg(long, value_delimiter = ',')]
    candidates: Vec<String>,
    #[arg(long, default_value_t = McmcSettings::default().n_iter)]
    n_iter: usize,
    #[arg(long, default_value_t = McmcSettings::default().burn_in)]
    burn_in: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AbcArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Priors JSON from `priors`.
    #[arg(long)]
    priors: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n_sims: usize,
    #[arg(long, default_value_t = 15)]
    sims_per_draw: usize,
    /// `residual`, `gaussian=SIGMA`, `indicator=EPS` or `logistic=MU,S`.
    #[arg(long, default_value = "residual")]
    kernel: String,
    /// Standardize summaries by their simulation sds.
    #[arg(long)]
    standardize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weighted posterior JSON.
    #[arg(long)]
    out: PathBuf,
    /// Posterior summary and forward validation JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(
        long,
        conflicts_with = "descriptions",
        required_unless_present = "descriptions"
    )]
    embeddings: Option<PathBuf>,
    /// TSV of `label<TAB>token<TAB>token...`, embedded by token hashing.
    #[arg(long)]
    descriptions: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_sims: Option<usize>,
    #[arg(long)]
    top_q: Option<usize>,
    /// Enable per-cluster ABC with this many clusters.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, conflicts_with = "k")]
    no_cluster: bool,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Config(anyhow::Error),
    Stage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Stage(e)
    }
}

fn config_err(e: impl Display) -> Failure {
    Failure::Config(anyhow!("{e}"))
}

type CliResult = Result<(), Failure>;

#[derive(Serialize, Deserialize)]
struct FitReport {
    cv: CvReport,
    importance: Vec<(String, f64)>,
    residuals: Vec<f64>,
    train_rows: usize,
    holdout_rows: usize,
}

#[derive(Serialize, Deserialize)]
struct PriorsFile {
    features: Vec<PriorReport>,
    residual: Option<PriorReport>,
}

fn load_data(a: &DataArgs) -> Result<Dataset, Failure> {
    let schema = dataset::load_schema(&a.schema)
        .map_err(|e| config_err(format!("{}: {e}", a.schema.display())))?;
    let raw = dataset::load_dataset(&a.data, &schema)
        .map_err(|e| config_err(format!("{}: {e}", a.data.display())))?;
    let emb = match &a.embeddings {
        Some(p) => Some(
            EmbeddingTable::read_tsv(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };
    dataset::preprocess_with(&raw, PreprocessOptions::default(), emb.as_ref())
        .context("preprocessing")
        .map_err(Failure::Stage)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| path.display().to_string())
}

fn generate(a: GenerateArgs) -> CliResult {
    let mut cfg: GeneratorConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => GeneratorConfig::default(),
    };
    cfg.rows = a.rows;
    let (ds, truth) = dataset::generate_synthetic(&cfg, a.seed).map_err(config_err)?;
    dataset::write_csv(&ds, &a.out).context("writing data")?;
    let schema_path = a
        .schema
        .unwrap_or_else(|| a.out.with_extension("schema.json"));
    dataset::save_schema(&cfg.schema(), &schema_path).context("writing schema")?;
    if let Some(p) = &a.truth {
        write_json(p, &truth)?;
    }
    if let Some(p) = &a.embeddings {
        truth
            .embedding_table()
            .write_tsv(p)
            .context("writing embeddings")?;
    }
    println!(
        "wrote {} rows to {} (schema {})",
        ds.n_rows(),
        a.out.display(),
        schema_path.display()
    );
    Ok(())
}

fn fit(a: FitArgs) -> CliResult {
    let ds = load_data(&a.data)?;
    let hp: Hyperparameters = match &a.hyperparameters {
        Some(p) => read_json(p)?,
        None => Hyperparameters::default(),
    };
    hp.validate().map_err(config_err)?;
    if a.folds < 2 || !(a.holdout > 0.0 && a.holdout < 1.0) {
        return Err(config_err("need --folds ≥ 2 and --holdout in (0, 1)"));
    }
    let cv = surrogate::cross_validate(&ds, &hp, a.folds, rng::derive_seed(a.seed, "cv"))
        .context("cross-validation")?;
    let (train, hold) =
        pipeline::holdout_split(ds.n_rows(), a.holdout, rng::derive_seed(a.seed, "holdout"));
    let model =
        surrogate::fit(&ds.subset(&train), &hp, rng::derive_seed(a.seed, "fit")).context("fit")?;
    let full = surrogate::fit(&ds, &hp, rng::derive_seed(a.seed, "fit-full")).context("fit")?;
    let importance = surrogate::feature_importance(&full, full.width());
    let residuals = surrogate::residuals(&model, &ds.subset(&hold)).context("residuals")?;
    model.save(&a.out).context("writing model")?;
    println!("cross-validation ({} folds): {}", a.folds, cv.aggregate);
    for (name, gain) in importance.iter().take(10) {
        println!("  {name:<20} {gain:.4}");
    }
    if let Some(p) = &a.report {
        write_json(
            p,
            &FitReport {
                cv,
                importance,
                residuals,
                train_rows: train.len(),
                holdout_rows: hold.len(),
            },
        )?;
    }
    Ok(())
}

fn parse_families(names: &[String]) -> Result<Vec<Family>, Failure> {
    if names.is_empty() {
        return Ok(Family::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| {
            Family::from_tag(n.trim()).ok_or_else(|| config_err(format!("unknown family `{n}`")))
        })
        .collect()
}

fn priors(a: PriorsArgs) -> CliResult {
    let ds = load_data(&a.data)?;
    let candidates = parse_families(&a.candidates)?;
    let mcmc = McmcSettings {
        n_iter: a.n_iter,
        burn_in: a.burn_in,
    };
    if mcmc.burn_in >= mcmc.n_iter {
        return Err(config_err("--burn-in must be below --n-iter"));
    }
    let fit: Option<FitReport> = a.fit.as_deref().map(read_json).transpose()?;
    let features: Vec<String> = match (&fit, a.features.is_empty()) {
        (_, false) => a.features.clone(),
        (Some(f), true) => f
            .importance
            .iter()
            .take(a.top_q)
            .map(|(n, _)| n.clone())
            .collect(),
        (None, true) => return Err(config_err("give --features or --fit")),
    };
    for f in &features {
        if ds.feature_index(f).is_none() {
            return Err(config_err(format!("unknown feature `{f}`")));
        }
    }
    let fp = pipeline::feature_priors(&ds, &features, &candidates, &mcmc, a.seed)
        .map_err(|e| anyhow!(e))?;
    let residual = match &fit {
        Some(f) => {
            let continuous: Vec<Family> = candidates
                .iter()
                .copied()
                .filter(|c| !c.is_discrete())
                .collect();
            let seed = rng::derive_seed(a.seed, "mcmc/residual");
            Some(
                pipeline::build_prior("residual", &f.residuals, &continuous, &mcmc, seed)
                    .map_err(|e| anyhow!(e))?,
            )
        }
        None => None,
    };
    for r in fp.reports.iter().chain(&residual) {
        let theta: Vec<String> = r
            .selected
            .theta()
            .iter()
            .map(|t| format!("{t:.4}"))
            .collect();
        println!(
            "{:<20} {} ({}) AIC {:.1}, p = {:.3}",
            r.feature,
            r.selected.family.tag(),
            theta.join(", "),
            r.selected.aic,
            r.selected.model_prob
        );
    }
    write_json(
        &a.out,
        &PriorsFile {
            features: fp.reports,
            residual,
        },
    )?;
    Ok(())
}

fn parse_kernel(spec: &str, residual: Option<&PriorReport>) -> Result<Kernel, Failure> {
    let (name, arg) = spec.split_once('=').unwrap_or((spec, ""));
    let nums: Vec<f64> = if arg.is_empty() {
        Vec::new()
    } else {
        arg.split(',')
            .map(|x| {
                x.trim()
                    .parse::<f64>()
                    .map_err(|e| config_err(format!("kernel `{spec}`: {e}")))
            })
            .collect::<Result<_, _>>()?
    };
    let kernel = match (name, nums.as_slice()) {
        ("residual", []) => {
            let r =
                residual.ok_or_else(|| config_err("the residual kernel needs a residual prior"))?;
            Kernel::from_residuals(&r.selected).map_err(config_err)?
        }
        ("gaussian", [sigma]) => Kernel::Gaussian { sigma: *sigma },
        ("indicator", [epsilon]) => Kernel::Indicator { epsilon: *epsilon },
        ("logistic", [mu, s]) => Kernel::LogisticPdf { mu: *mu, s: *s },
        _ => return Err(config_err(format!("cannot parse kernel `{spec}`"))),
    };
    kernel.validate().map_err(config_err)?;
    Ok(kernel)
}

#[derive(Serialize)]
struct AbcSummary {
    ess: f64,
    ess_percent: String,
    kernel: Kernel,
    posteriors: Vec<abc::PosteriorSummary>,
    validation: abc::ValidationReport,
}

fn run_abc(a: AbcArgs) -> CliResult {
    let ds = load_data(&a.data)?;
    let model = SurrogateModel::load(&a.model)
        .map_err(|e| config_err(format!("{}: {e}", a.model.display())))?;
    let pf: PriorsFile = read_json(&a.priors)?;
    let kernel = parse_kernel(&a.kernel, pf.residual.as_ref())?;
    let noise = pf
        .residual
        .as_ref()
        .map_or(NoiseModel::Zero, |r| NoiseModel::from_prior(&r.selected));
    let (priors, pinned) = pipeline::complete_priors(&ds, &pf.features);
    for p in &pinned {
        println!("pinned {} = {}", p.feature, p.value);
    }
    let observed = ds.targets.clone();
    let sims = abc::simulate_forward(
        &model,
        &priors,
        &noise,
        a.n_sims,
        a.sims_per_draw,
        rng::derive_seed(a.seed, "simulate"),
    )
    .map_err(config_err)?;
    let wp = abc::weigh_with(
        &sims,
        &observed,
        &kernel,
        WeighOptions {
            standardize: a.standardize,
        },
    )
    .context("weighting")?;
    println!("ESS {:.1} of {} ({})", wp.ess, wp.len(), wp.ess_percent());
    let mut posteriors = Vec::new();
    for r in &pf.features {
        let s = abc::posterior_summary(&wp, &r.feature, &DEFAULT_LEVELS)
            .context("posterior summary")?;
        let ci = &s.intervals[0];
        println!(
            "{:<20} mean {:.4}, median {:.4}, 95% [{:.4}, {:.4}]",
            s.feature, s.mean, s.median, ci.lower, ci.upper
        );
        posteriors.push(s);
    }
    write_json(&a.out, &wp)?;
    let validation = abc::forward_validate(
        &wp,
        &model,
        &noise,
        &observed,
        rng::derive_seed(a.seed, "validation"),
    )
    .context("forward validation")?;
    println!(
        "forward validation |mean difference| = {:.4}",
        validation.mean_difference.abs()
    );
    if let Some(p) = &a.summary {
        write_json(
            p,
            &AbcSummary {
                ess: wp.ess,
                ess_percent: wp.ess_percent(),
                kernel,
                posteriors,
                validation,
            },
        )?;
    }
    Ok(())
}

fn read_descriptions(path: &Path) -> Result<Vec<(String, Vec<String>)>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut parts = l.split('\t');
            let label = parts.next().unwrap_or_default().to_string();
            (
                label,
                parts
                    .map(str::to_string)
                    .filter(|t| !t.is_empty())
                    .collect(),
            )
        })
        .collect())
}

fn cluster(a: ClusterArgs) -> CliResult {
    let emb =
        match (&a.embeddings, &a.descriptions) {
            (Some(p), _) => EmbeddingTable::read_tsv(p)
                .map_err(|e| config_err(format!("{}: {e}", p.display())))?,
            (None, Some(p)) => geometry::fallback_embed(&read_descriptions(p)?, a.dim, a.seed)
                .map_err(config_err)?,
            (None, None) => return Err(config_err("give --embeddings or --descriptions")),
        };
    let sim = geometry::cosine_matrix(&emb).context("similarity")?;
    let cm = geometry::spectral_cluster(&sim, a.k, a.seed).context("spectral clustering")?;
    for c in 0..cm.k {
        println!(
            "cluster {c}: {} (inner similarity {:.3})",
            cm.members(c).join(" "),
            cm.inner_similarity[c]
        );
    }
    println!("eigengap suggests k = {}", cm.eigengap_k());
    write_json(&a.out, &cm)?;
    if let Some(p) = &a.heatmap {
        let mut order: Vec<usize> = (0..sim.labels.len()).collect();
        order.sort_by_key(|&i| (cm.assignment[i], i));
        std::fs::write(p, plot::heatmap_svg(&sim, Some(&order))).context("writing heatmap")?;
    }
    Ok(())
}

fn run_pipeline(a: PipelineArgs) -> CliResult {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::from_json_file(p).map_err(config_err)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = a.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.n_sims {
        cfg.abc.n_sims = n;
    }
    if let Some(q) = a.top_q {
        cfg.top_q = q;
    }
    if let Some(k) = a.k {
        cfg.cluster.enabled = true;
        cfg.cluster.k = k;
    }
    if a.no_cluster {
        cfg.cluster.enabled = false;
    }
    let out = pipeline::run_pipeline(&cfg).map_err(|e| match e {
        PipelineError::Config(_) => config_err(e),
        PipelineError::StageFailure { .. } => Failure::Stage(anyhow!(e)),
    })?;
    let r = &out.report;
    println!("surrogate: {}", r.surrogate.cv_summary);
    println!("top features: {}", r.surrogate.top_features.join(", "));
    println!("global ESS: {}", r.abc.global.ess_percent);
    if let Some(st) = &r.abc.stratification {
        println!("strata: {}", st.sizes_line);
        for c in &r.abc.clusters {
            println!("  {} ESS: {}", c.label, c.ess_percent);
        }
    }
    println!(
        "forward validation |mean difference| = {:.4}",
        r.validation.global.mean_difference.abs()
    );
    println!(
        "wrote {} files to {}",
        out.files.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn run_plot(a: PlotArgs) -> CliResult {
    let report: PipelineReport = read_json(&a.report)?;
    std::fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    let files = plot::emit_plots(&report, &a.out).context("writing plots")?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn init_threads(flag: Option<usize>) -> CliResult {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("MIXEDABC_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| config_err(format!("MIXEDABC_THREADS={v} is not a count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(config_err("thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(config_err)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads(cli.threads).and_then(|()| match cli.command {
        Command::Generate(a) => generate(a),
        Command::Fit(a) => fit(a),
        Command::Priors(a) => priors(a),
        Command::Abc(a) => run_abc(a),
        Command::Cluster(a) => cluster(a),
        Command::Pipeline(a) => run_pipeline(a),
        Command::Plot(a) => run_plot(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
