//! Command-line front end. [`run`] parses arguments, executes one subcommand
//! and returns the process exit code.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::axe::{AxeRun, CacheStats};
use crate::data::{mean, Dataset, Explanation, QualityReport};
use crate::error::{Error, Result};
use crate::experiments::benchmark::{run_benchmark, BenchModel, BenchmarkConfig};
use crate::experiments::fairwash::{run_fairwash, FairwashMetric, FairwashSpec, Table2Row};
use crate::experiments::regions::run_region_heatmaps;
use crate::experiments::standins::{generate_standin, StandinKind};
use crate::experiments::synthetic::{run_synthetic_study, FourGaussianSpec, SyntheticConfig, DEFAULT_SD};
use crate::explainers::{explain_dataset, ExplainerConfig, ExplainerKind};
use crate::io::{self, ReportDocument, TopN};
use crate::knn::NeighborMode;
use crate::metrics::groundtruth::GroundTruthMetric;
use crate::metrics::sensitivity::{sensitivity_report, PerturbationPlan};
use crate::models::{fit_logistic, fit_mlp, AttackKind, BuiltinModel, ModelDocument};

#[derive(Debug, Parser)]
#[command(name = "axe-eval", version, about = "Evaluate local feature-importance explanations")]
struct Cli {
    /// Worker threads (0 = one per core). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Base seed for every random stream.
    #[arg(long, global = true, env = "AXE_EVAL_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score one explainer on one dataset with one or more metrics.
    Evaluate(EvaluateArgs),
    /// Four-Gaussian study: AXE across k, PGI and on-manifold rate across widths.
    Synthetic(SyntheticArgs),
    /// Ground-truth metric values over a grid of two-feature explanations.
    Regions(RegionsArgs),
    /// Fairwashing detection on a scaffolded biased model.
    Fairwash(FairwashArgs),
    /// Explainer benchmark over the datasets listed in a manifest.
    Benchmark(BenchmarkArgs),
    /// Write a synthetic stand-in dataset as CSV.
    Standin(StandinArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    Loo,
    IncludeSelf,
}

impl From<ModeArg> for NeighborMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Loo => NeighborMode::LeaveOneOut,
            ModeArg::IncludeSelf => NeighborMode::IncludeSelf,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AttackArg {
    Lime,
    Shap,
}

impl From<AttackArg> for AttackKind {
    fn from(a: AttackArg) -> Self {
        match a {
            AttackArg::Lime => AttackKind::Lime,
            AttackArg::Shap => AttackKind::Shap,
        }
    }
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Dataset CSV (header row, optional 0/1 `target` column).
    #[arg(long)]
    data: PathBuf,
    /// `logistic`, `mlp` (trained on the data's labels) or a model JSON file.
    #[arg(long, default_value = "logistic")]
    model: String,
    /// Explainer id or an explanation CSV (`row,explainer,<columns>`).
    #[arg(long)]
    explainer: String,
    /// Comma-separated metrics: axe, pgi, pgu, fa, ra, sa, sra, rc, pra.
    #[arg(long, value_delimiter = ',', default_value = "axe")]
    metric: Vec<String>,
    /// Top-n size, or `auc` for the mean over n = 1..N.
    #[arg(long, default_value = "1")]
    n: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Perturbation stddev for PGI/PGU (standardized units).
    #[arg(long, default_value_t = 0.5)]
    width: f64,
    /// Perturbations per datapoint for PGI/PGU.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Samples used by stochastic explainers.
    #[arg(long, default_value_t = 500)]
    explainer_samples: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Loo)]
    neighbor_mode: ModeArg,
    /// Coefficient basis of the ground truth for fa/ra/sa/sra/rc/pra.
    #[arg(long, value_enum, default_value_t = GroundTruthBasis::Standardized)]
    ground_truth: GroundTruthBasis,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum GroundTruthBasis {
    /// Logistic coefficients on standardized features.
    Standardized,
    /// The same model expressed per raw feature unit (coefficient / stddev).
    Raw,
}

#[derive(Debug, Args)]
struct SyntheticArgs {
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    width_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5000)]
    points_per_cluster: usize,
    #[arg(long, default_value_t = DEFAULT_SD)]
    sd: f64,
    #[arg(long, default_value_t = 1000)]
    pgi_samples: usize,
    #[arg(long, default_value_t = 10000)]
    manifold_samples: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Loo)]
    neighbor_mode: ModeArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RegionsArgs {
    /// Ground-truth importances of the two features.
    #[arg(long, value_delimiter = ',', num_args = 2, default_value = "0.7,0.3", allow_hyphen_values = true)]
    beta: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    resolution: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FairwashArgs {
    /// Dataset CSV with raw features.
    #[arg(long, conflicts_with = "standin")]
    data: Option<PathBuf>,
    /// Generate a stand-in dataset instead of reading one.
    #[arg(long)]
    standin: Option<String>,
    /// Rows generated for a stand-in.
    #[arg(long, default_value_t = 500)]
    rows: usize,
    /// Run every stand-in with both attacks and one and two foils.
    #[arg(long, conflicts_with_all = ["data", "standin", "protected", "foil"])]
    suite: bool,
    /// Protected feature (defaults to the stand-in's).
    #[arg(long)]
    protected: Option<String>,
    /// Foil feature; repeat for two foils (defaults to the stand-in's first).
    #[arg(long)]
    foil: Vec<String>,
    #[arg(long, value_enum, default_value_t = AttackArg::Lime)]
    attack: AttackArg,
    #[arg(long, value_delimiter = ',', default_value = "pgi,neg_pgu,axe")]
    metric: Vec<String>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    width: f64,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// JSON manifest listing datasets, models and optional settings.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StandinArgs {
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 1000)]
    rows: usize,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Evaluate(a) => evaluate(a, cli.seed),
        Command::Synthetic(a) => synthetic(a, cli.seed),
        Command::Regions(a) => regions(a),
        Command::Fairwash(a) => fairwash(a, cli.seed),
        Command::Benchmark(a) => benchmark(a, cli.seed),
        Command::Standin(a) => standin(a, cli.seed),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EvalMetric {
    Axe,
    Pgi,
    Pgu,
    GroundTruth(GroundTruthMetric),
}

impl EvalMetric {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "axe" => Ok(EvalMetric::Axe),
            "pgi" => Ok(EvalMetric::Pgi),
            "pgu" => Ok(EvalMetric::Pgu),
            other => other
                .parse::<GroundTruthMetric>()
                .map(EvalMetric::GroundTruth)
                .map_err(|_| Error::Config(format!("unknown metric '{other}'"))),
        }
    }

    fn id(self) -> &'static str {
        match self {
            EvalMetric::Axe => "axe",
            EvalMetric::Pgi => "pgi",
            EvalMetric::Pgu => "pgu",
            EvalMetric::GroundTruth(m) => m.id(),
        }
    }
}

fn load_model(spec: &str, raw: &Dataset, seed: u64) -> Result<(BuiltinModel, Dataset)> {
    match spec {
        "logistic" | "mlp" => {
            let labels = raw
                .labels()
                .ok_or_else(|| Error::Data(format!("training a {spec} model needs a 'target' column")))?
                .to_vec();
            let ds = raw.standardize();
            let model = if spec == "logistic" {
                BuiltinModel::Logistic(fit_logistic(&ds, &labels)?)
            } else {
                BuiltinModel::Mlp(fit_mlp(&ds, &labels, 16, seed)?)
            };
            Ok((model, ds))
        }
        path => {
            let path = Path::new(path);
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let doc = ModelDocument::from_json(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            if doc.column_names != raw.column_names() {
                return Err(Error::Data(format!(
                    "{}: model columns {:?} do not match dataset columns {:?}",
                    path.display(),
                    doc.column_names,
                    raw.column_names()
                )));
            }
            let ds = raw.standardize_with(&doc.standardization)?;
            Ok((doc.model()?, ds))
        }
    }
}

/// Averages per-point values over n = 1..=N and records the aggregate curve.
fn auc_report(metric: &str, n_features: usize, mut at: impl FnMut(usize) -> Result<QualityReport>) -> Result<QualityReport> {
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut curve = Vec::with_capacity(n_features);
    for n in 1..=n_features {
        let r = at(n)?;
        curve.push((n, r.aggregate_q));
        if sums.is_empty() {
            sums = vec![Vec::with_capacity(n_features); r.per_point_q.len()];
        }
        for (s, q) in sums.iter_mut().zip(&r.per_point_q) {
            s.push(*q);
        }
    }
    let per_point = sums.iter().map(|v| mean(v)).collect();
    let mut report = QualityReport::from_per_point(metric, per_point);
    report.auc_curve = Some(curve);
    Ok(report)
}

fn evaluate(a: &EvaluateArgs, seed: u64) -> Result<()> {
    let metrics = a.metric.iter().map(|m| EvalMetric::parse(m)).collect::<Result<Vec<_>>>()?;
    let top_n: TopN = a.n.parse()?;
    let raw = io::read_dataset_csv(&a.data)?;
    let (model, ds) = load_model(&a.model, &raw, seed)?;
    let n_features = ds.n_features();
    if let TopN::Fixed(n) = top_n {
        if n > n_features {
            return Err(Error::Bounds(format!("--n must be in [1, {n_features}], got {n}")));
        }
    }
    let explanations: Vec<Explanation> = match a.explainer.parse::<ExplainerKind>() {
        Ok(kind) => {
            let cfg = ExplainerConfig {
                sample_count: a.explainer_samples,
                seed,
                ..ExplainerConfig::new(kind)
            };
            explain_dataset(&model, &ds, &cfg)?
        }
        Err(_) => {
            let path = Path::new(&a.explainer);
            let e = io::read_explanations_csv(path, ds.column_names())?;
            if let Some(bad) = e.iter().find(|e| e.datapoint_index >= ds.n_rows()) {
                return Err(Error::Data(format!(
                    "{}: row index {} outside dataset of {} rows",
                    path.display(),
                    bad.datapoint_index,
                    ds.n_rows()
                )));
            }
            e
        }
    };
    if explanations.is_empty() {
        return Err(Error::Data("no explanations to evaluate".into()));
    }
    create_dir(&a.out)?;
    if a.model == "logistic" || a.model == "mlp" {
        let doc = ModelDocument::new(&model, &ds);
        let path = a.out.join("model.json");
        fs::write(&path, doc.to_json()? + "\n").map_err(|e| Error::io(&path, e))?;
    }
    io::write_explanations_csv(&a.out.join("explanations.csv"), ds.column_names(), &explanations)?;
    let rows: Vec<usize> = explanations.iter().map(|e| e.datapoint_index).collect();

    let config = json!({
        "data": a.data,
        "model": a.model,
        "explainer": a.explainer,
        "explainer_samples": a.explainer_samples,
        "n": top_n,
        "k": a.k,
        "width": a.width,
        "samples": a.samples,
        "neighbor_mode": NeighborMode::from(a.neighbor_mode),
        "ground_truth": a.ground_truth,
        "rank_correlation_basis": "magnitude",
        "seed": seed,
    });

    for metric in metrics {
        let (report, k, cache): (QualityReport, Option<usize>, Option<CacheStats>) = match metric {
            EvalMetric::Axe => {
                let run = AxeRun::new(&model, &ds, &explanations, a.k, a.neighbor_mode.into())?;
                let out = match top_n {
                    TopN::Fixed(n) => run.axe_score(n)?,
                    TopN::Auc => run.axe_auc()?,
                };
                (out.report, Some(a.k), Some(out.cache))
            }
            EvalMetric::Pgi | EvalMetric::Pgu => {
                let plan = if metric == EvalMetric::Pgi {
                    PerturbationPlan::important(1, a.width, a.samples, seed)?
                } else {
                    PerturbationPlan::unimportant(1, a.width, a.samples, seed)?
                };
                let report = match top_n {
                    TopN::Fixed(n) => sensitivity_report(&model, &ds, &explanations, &plan.with_n(n))?,
                    TopN::Auc => auc_report(metric.id(), n_features, |n| {
                        sensitivity_report(&model, &ds, &explanations, &plan.with_n(n))
                    })?,
                };
                (report, None, None)
            }
            EvalMetric::GroundTruth(gt) => {
                let coefficients = model.coefficients().ok_or_else(|| {
                    Error::Capability(format!("metric '{}' needs a logistic model's coefficients", gt.id()))
                })?;
                let truth: Vec<f64> = match a.ground_truth {
                    GroundTruthBasis::Standardized => coefficients.to_vec(),
                    GroundTruthBasis::Raw => coefficients
                        .iter()
                        .zip(ds.standardization())
                        .map(|(b, st)| if st.constant { 0.0 } else { b / st.std })
                        .collect(),
                };
                let truth = truth.as_slice();
                let at = |n: usize| -> Result<QualityReport> {
                    let q = explanations
                        .iter()
                        .map(|e| gt.compute(&e.importances, truth, n))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(QualityReport::from_per_point(gt.id(), q))
                };
                let report = match top_n {
                    TopN::Fixed(n) => at(n)?,
                    TopN::Auc if gt.uses_top_n() => auc_report(gt.id(), n_features, at)?,
                    TopN::Auc => at(n_features)?,
                };
                (report, None, None)
            }
        };
        let doc = ReportDocument::new(&report, k, top_n, cache, config.clone());
        io::write_json(&a.out.join(format!("{}.json", metric.id())), &doc)?;
        io::write_report_csv(&a.out.join(format!("{}_per_point.csv", metric.id())), &report, &rows)?;
        log::info!("{} = {}", metric.id(), report.aggregate_q);
        println!("{}\t{}", metric.id(), report.aggregate_q);
    }
    Ok(())
}

fn synthetic(a: &SyntheticArgs, seed: u64) -> Result<()> {
    let defaults = SyntheticConfig::default();
    let cfg = SyntheticConfig {
        spec: FourGaussianSpec::isotropic(a.sd, a.points_per_cluster, seed),
        k_grid: a.k_grid.clone().unwrap_or(defaults.k_grid),
        width_grid: a.width_grid.clone().unwrap_or(defaults.width_grid),
        pgi_samples: a.pgi_samples,
        manifold_samples: a.manifold_samples,
        neighbor_mode: a.neighbor_mode.into(),
    };
    let study = run_synthetic_study(&cfg)?;
    create_dir(&a.out)?;
    io::write_synthetic_csvs(&a.out, &study)?;
    io::write_json(&a.out.join("synthetic.json"), &json!({ "config": cfg, "result": study }))
}

fn regions(a: &RegionsArgs) -> Result<()> {
    let grid = run_region_heatmaps([a.beta[0], a.beta[1]], a.resolution)?;
    create_dir(&a.out)?;
    io::write_region_csvs(&a.out, &grid)
}

fn fairwash_metrics(ids: &[String]) -> Result<Vec<FairwashMetric>> {
    ids.iter().map(|m| m.parse()).collect()
}

fn fairwash(a: &FairwashArgs, seed: u64) -> Result<()> {
    let metrics = fairwash_metrics(&a.metric)?;
    let configure = |mut spec: FairwashSpec| {
        spec.metrics = metrics.clone();
        spec.k = a.k;
        spec.perturb_width = a.width;
        spec.perturb_samples = a.samples;
        spec.seed = seed;
        spec
    };
    let mut rows: Vec<Table2Row> = Vec::new();
    let mut results = Vec::new();
    if a.suite {
        for kind in StandinKind::ALL {
            let s = generate_standin(kind, a.rows, seed)?;
            for attack in [AttackKind::Lime, AttackKind::Shap] {
                for n_foils in 1..=2 {
                    let spec = configure(FairwashSpec::new(kind.id(), &s.protected, s.foils[..n_foils].to_vec(), attack));
                    let r = run_fairwash(&s.dataset, &spec)?;
                    rows.extend(r.rows.iter().cloned());
                    results.push(r);
                }
            }
        }
    } else {
        let (name, raw, protected, foils) = match (&a.data, &a.standin) {
            (Some(path), None) => {
                let protected = a
                    .protected
                    .clone()
                    .ok_or_else(|| Error::Config("--protected is required with --data".into()))?;
                if a.foil.is_empty() {
                    return Err(Error::Config("at least one --foil is required with --data".into()));
                }
                let name = path.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned());
                (name, io::read_dataset_csv(path)?, protected, a.foil.clone())
            }
            (None, Some(kind)) => {
                let s = generate_standin(kind.parse()?, a.rows, seed)?;
                let protected = a.protected.clone().unwrap_or(s.protected);
                let foils = if a.foil.is_empty() { s.foils[..1].to_vec() } else { a.foil.clone() };
                (s.kind.id().to_string(), s.dataset, protected, foils)
            }
            _ => return Err(Error::Config("give exactly one of --data, --standin or --suite".into())),
        };
        let spec = configure(FairwashSpec::new(name, protected, foils, a.attack.into()));
        let r = run_fairwash(&raw, &spec)?;
        rows.extend(r.rows.iter().cloned());
        results.push(r);
    }
    create_dir(&a.out)?;
    io::write_table2_csv(&a.out.join("table2.csv"), &rows)?;
    io::write_json(&a.out.join("fairwash.json"), &results)?;
    for r in &rows {
        println!("{}\t{}\t{}\tmargin={}\t{}", r.dataset, r.model, r.metric, r.margin, if r.pass { "pass" } else { "fail" });
    }
    Ok(())
}

/// One dataset entry of a benchmark manifest: a CSV path or a stand-in.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDataset {
    pub name: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub standin: Option<StandinKind>,
    #[serde(default)]
    pub rows: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub datasets: Vec<ManifestDataset>,
    #[serde(default = "default_models")]
    pub models: Vec<BenchModel>,
    #[serde(default)]
    pub config: Option<BenchmarkConfig>,
}

fn default_models() -> Vec<BenchModel> {
    vec![BenchModel::Lr, BenchModel::Nn]
}

fn benchmark(a: &BenchmarkArgs, seed: u64) -> Result<()> {
    let manifest: Manifest = io::read_json(&a.manifest)?;
    if manifest.datasets.is_empty() || manifest.models.is_empty() {
        return Err(Error::Config(format!("{}: manifest lists no datasets or models", a.manifest.display())));
    }
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let datasets = manifest
        .datasets
        .iter()
        .map(|d| {
            let ds = match (&d.path, d.standin) {
                (Some(p), None) => io::read_dataset_csv(&base.join(p))?,
                (None, Some(kind)) => generate_standin(kind, d.rows.unwrap_or(1000), seed)?.dataset,
                _ => {
                    return Err(Error::Config(format!(
                        "manifest dataset '{}' needs exactly one of 'path' or 'standin'",
                        d.name
                    )))
                }
            };
            Ok((d.name.clone(), ds))
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = BenchmarkConfig {
        seed,
        ..manifest.config.clone().unwrap_or_default()
    };
    let result = run_benchmark(&datasets, &manifest.models, &cfg)?;
    create_dir(&a.out)?;
    for cell in &result.cells {
        io::write_json(&a.out.join(format!("{}_{}.json", cell.dataset, cell.model)), cell)?;
        let fig = match cell.model {
            BenchModel::Nn => "fig7",
            BenchModel::Lr => "fig8",
        };
        io::write_scores_csv(&a.out.join(format!("{fig}_{}.csv", cell.dataset)), &cell.rows)?;
    }
    io::write_scores_csv(&a.out.join("benchmark.csv"), result.rows())?;
    io::write_json(&a.out.join("benchmark.json"), &json!({ "config": cfg, "result": result }))?;
    println!("k agreement fraction\t{}", result.k_agreement_fraction);
    Ok(())
}

fn standin(a: &StandinArgs, seed: u64) -> Result<()> {
    let s = generate_standin(a.kind.parse()?, a.rows, seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    io::write_dataset_csv(&a.out, &s.dataset)
}
