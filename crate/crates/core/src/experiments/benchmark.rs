//! Cross-product evaluation of explainers on trained models. Each top-n metric
//! is summarized by its mean over n = 1..N; scores are then z-standardized
//! across explainers within every (dataset, model, metric) cell.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::axe::AxeRun;
use crate::data::{mean, Dataset, Explanation};
use crate::error::{Error, Result};
use crate::explainers::{explain_dataset, ExplainerConfig, ExplainerKind};
use crate::knn::NeighborMode;
use crate::metrics::groundtruth::GroundTruthMetric;
use crate::metrics::sensitivity::{sensitivity_report, PerturbationPlan};
use crate::models::{fit_logistic, fit_mlp, predict_labels, BuiltinModel};

use super::z_scores;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchModel {
    Lr,
    Nn,
}

impl BenchModel {
    pub fn id(self) -> &'static str {
        match self {
            BenchModel::Lr => "lr",
            BenchModel::Nn => "nn",
        }
    }
}

impl fmt::Display for BenchModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for BenchModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" | "logistic" => Ok(BenchModel::Lr),
            "nn" | "mlp" => Ok(BenchModel::Nn),
            _ => Err(Error::Config(format!("unknown benchmark model '{s}'"))),
        }
    }
}

/// Benchmark metrics. `NegPgu` is PGU negated so higher is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMetric {
    Fa,
    Ra,
    Sa,
    Sra,
    Rc,
    Pra,
    Pgi,
    NegPgu,
    Axe,
}

impl BenchMetric {
    pub const ALL: [BenchMetric; 9] = [
        BenchMetric::Fa,
        BenchMetric::Ra,
        BenchMetric::Sa,
        BenchMetric::Sra,
        BenchMetric::Rc,
        BenchMetric::Pra,
        BenchMetric::Pgi,
        BenchMetric::NegPgu,
        BenchMetric::Axe,
    ];

    pub fn id(self) -> &'static str {
        match self {
            BenchMetric::Fa => "fa",
            BenchMetric::Ra => "ra",
            BenchMetric::Sa => "sa",
            BenchMetric::Sra => "sra",
            BenchMetric::Rc => "rc",
            BenchMetric::Pra => "pra",
            BenchMetric::Pgi => "pgi",
            BenchMetric::NegPgu => "neg_pgu",
            BenchMetric::Axe => "axe",
        }
    }

    fn ground_truth(self) -> Option<GroundTruthMetric> {
        match self {
            BenchMetric::Fa => Some(GroundTruthMetric::Fa),
            BenchMetric::Ra => Some(GroundTruthMetric::Ra),
            BenchMetric::Sa => Some(GroundTruthMetric::Sa),
            BenchMetric::Sra => Some(GroundTruthMetric::Sra),
            BenchMetric::Rc => Some(GroundTruthMetric::Rc),
            BenchMetric::Pra => Some(GroundTruthMetric::Pra),
            _ => None,
        }
    }

    /// Metrics that do not need a ground-truth explanation.
    pub fn is_agnostic(self) -> bool {
        self.ground_truth().is_none()
    }
}

impl fmt::Display for BenchMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for BenchMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "pgu" {
            return Ok(BenchMetric::NegPgu);
        }
        BenchMetric::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown benchmark metric '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub explainers: Vec<ExplainerKind>,
    /// Requested metrics; ground-truth metrics are skipped for neural nets.
    pub metrics: Vec<BenchMetric>,
    pub k: usize,
    /// Extra k values for the AXE ranking-agreement diagnostic.
    pub k_diagnostic: Vec<usize>,
    pub perturb_width: f64,
    pub perturb_samples: usize,
    pub explainer_samples: usize,
    pub mlp_hidden: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            explainers: ExplainerKind::ALL.to_vec(),
            metrics: BenchMetric::ALL.to_vec(),
            k: 5,
            k_diagnostic: vec![1, 3, 5, 9],
            perturb_width: 0.5,
            perturb_samples: 100,
            explainer_samples: 500,
            mlp_hidden: 16,
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.explainers.is_empty() {
            return Err(Error::Config("benchmark needs at least one explainer".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("benchmark needs at least one metric".into()));
        }
        if self.k == 0 || self.k_diagnostic.contains(&0) {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(self.perturb_width > 0.0) || self.perturb_samples == 0 || self.explainer_samples == 0 {
            return Err(Error::Config("perturbation width and sample counts must be positive".into()));
        }
        Ok(())
    }

    fn metrics_for(&self, model: BenchModel) -> Vec<BenchMetric> {
        self.metrics
            .iter()
            .copied()
            .filter(|m| model == BenchModel::Lr || m.is_agnostic())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub dataset: String,
    pub model: BenchModel,
    pub explainer: ExplainerKind,
    pub metric: BenchMetric,
    pub value: f64,
    pub z: f64,
}

/// AXE AUC per explainer at one k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRanking {
    pub k: usize,
    pub scores: Vec<(ExplainerKind, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub model: BenchModel,
    pub rows: Vec<ScoreRow>,
    pub k_rankings: Vec<KRanking>,
    /// Smallest fraction of explainer pairs ordered as at the reference k.
    pub k_pair_agreement: f64,
    pub k_agrees: bool,
}

/// Fraction of pairs with the same order in `a` and `b`; ties match ties only.
fn pair_agreement(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut same = 0;
    let mut total = 0;
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            if a[i].total_cmp(&a[j]) == b[i].total_cmp(&b[j]) {
                same += 1;
            }
        }
    }
    same as f64 / total as f64
}

/// A cell counts as agreeing when every k orders at least this fraction of
/// explainer pairs as the reference k does.
pub const K_AGREEMENT_THRESHOLD: f64 = 0.8;

fn train(model: BenchModel, ds: &Dataset, cfg: &BenchmarkConfig) -> Result<BuiltinModel> {
    let y = ds
        .labels()
        .ok_or_else(|| Error::Data("benchmark datasets need a target column".into()))?;
    Ok(match model {
        BenchModel::Lr => BuiltinModel::Logistic(fit_logistic(ds, y)?),
        BenchModel::Nn => BuiltinModel::Mlp(fit_mlp(ds, y, cfg.mlp_hidden, cfg.seed)?),
    })
}

fn metric_value(
    metric: BenchMetric,
    model: &BuiltinModel,
    ds: &Dataset,
    y_preds: &[u8],
    explanations: &[Explanation],
    cfg: &BenchmarkConfig,
) -> Result<f64> {
    let n_features = ds.n_features();
    if let Some(gt) = metric.ground_truth() {
        let truth = model
            .coefficients()
            .ok_or_else(|| Error::Capability("ground-truth metrics need a linear model".into()))?;
        let ns: Vec<usize> = if gt.uses_top_n() { (1..=n_features).collect() } else { vec![1] };
        let curve = ns
            .iter()
            .map(|&n| {
                let q = explanations
                    .iter()
                    .map(|e| gt.compute(&e.importances, truth, n))
                    .collect::<Result<Vec<_>>>()?;
                Ok(mean(&q))
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(mean(&curve));
    }
    match metric {
        BenchMetric::Axe => {
            let run = AxeRun::from_predictions(ds.features(), y_preds.to_vec(), explanations, cfg.k, NeighborMode::LeaveOneOut)?;
            Ok(run.axe_auc()?.report.aggregate_q)
        }
        BenchMetric::Pgi | BenchMetric::NegPgu => {
            let curve = (1..=n_features)
                .map(|n| {
                    let plan = if metric == BenchMetric::Pgi {
                        PerturbationPlan::important(n, cfg.perturb_width, cfg.perturb_samples, cfg.seed)?
                    } else {
                        PerturbationPlan::unimportant(n, cfg.perturb_width, cfg.perturb_samples, cfg.seed)?
                    };
                    Ok(sensitivity_report(model, ds, explanations, &plan)?.aggregate_q)
                })
                .collect::<Result<Vec<_>>>()?;
            let v = mean(&curve);
            Ok(if metric == BenchMetric::Pgi { v } else { -v })
        }
        _ => unreachable!("ground-truth metrics handled above"),
    }
}

/// Evaluates one (dataset, model) cell. `raw` must carry labels.
pub fn run_cell(name: &str, raw: &Dataset, model_kind: BenchModel, cfg: &BenchmarkConfig) -> Result<CellResult> {
    cfg.validate()?;
    let ds = raw.standardize();
    let model = train(model_kind, &ds, cfg)?;
    let y_preds = predict_labels(&model, &ds);
    let metrics = cfg.metrics_for(model_kind);

    let explanations = cfg
        .explainers
        .iter()
        .map(|&kind| {
            let ecfg = ExplainerConfig {
                sample_count: cfg.explainer_samples,
                seed: cfg.seed,
                ..ExplainerConfig::new(kind)
            };
            explain_dataset(&model, &ds, &ecfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for &metric in &metrics {
        let values = explanations
            .iter()
            .map(|e| metric_value(metric, &model, &ds, &y_preds, e, cfg))
            .collect::<Result<Vec<_>>>()?;
        for ((&explainer, value), z) in cfg.explainers.iter().zip(&values).zip(z_scores(&values)) {
            rows.push(ScoreRow {
                dataset: name.to_string(),
                model: model_kind,
                explainer,
                metric,
                value: *value,
                z,
            });
        }
    }

    let usable_k: Vec<usize> = cfg
        .k_diagnostic
        .iter()
        .copied()
        .filter(|&k| k < ds.n_rows())
        .collect();
    let k_rankings = usable_k
        .iter()
        .map(|&k| {
            let scores = cfg
                .explainers
                .iter()
                .zip(&explanations)
                .map(|(&kind, e)| {
                    let run = AxeRun::from_predictions(ds.features(), y_preds.clone(), e, k, NeighborMode::LeaveOneOut)?;
                    Ok((kind, run.axe_auc()?.report.aggregate_q))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(KRanking { k, scores })
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = k_rankings
        .iter()
        .find(|r| r.k == cfg.k)
        .or(k_rankings.first())
        .map(|r| r.scores.iter().map(|s| s.1).collect::<Vec<_>>());
    let k_pair_agreement = match &reference {
        Some(base) => k_rankings
            .iter()
            .map(|r| pair_agreement(base, &r.scores.iter().map(|s| s.1).collect::<Vec<_>>()))
            .fold(1.0, f64::min),
        None => 1.0,
    };
    Ok(CellResult {
        dataset: name.to_string(),
        model: model_kind,
        rows,
        k_rankings,
        k_pair_agreement,
        k_agrees: k_pair_agreement >= K_AGREEMENT_THRESHOLD,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub cells: Vec<CellResult>,
    /// Fraction of cells whose AXE explainer ranking is stable across k.
    pub k_agreement_fraction: f64,
}

impl BenchmarkResult {
    pub fn rows(&self) -> impl Iterator<Item = &ScoreRow> {
        self.cells.iter().flat_map(|c| c.rows.iter())
    }
}

/// Runs every (dataset, model) cell in order.
pub fn run_benchmark(datasets: &[(String, Dataset)], models: &[BenchModel], cfg: &BenchmarkConfig) -> Result<BenchmarkResult> {
    if datasets.is_empty() || models.is_empty() {
        return Err(Error::Config("benchmark needs at least one dataset and one model".into()));
    }
    let mut cells = Vec::new();
    for (name, ds) in datasets {
        for &m in models {
            cells.push(run_cell(name, ds, m, cfg)?);
        }
    }
    let agree = cells.iter().filter(|c| c.k_agrees).count();
    Ok(BenchmarkResult {
        k_agreement_fraction: agree as f64 / cells.len() as f64,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::standins::{generate_standin, StandinKind};

    fn small_cfg() -> BenchmarkConfig {
        BenchmarkConfig {
            explainers: vec![ExplainerKind::Grad, ExplainerKind::Lime, ExplainerKind::Random],
            perturb_samples: 20,
            explainer_samples: 200,
            ..Default::default()
        }
    }

    #[test]
    fn lr_cell_has_all_metrics_and_unit_z() {
        let s = generate_standin(StandinKind::Compas, 150, 2).unwrap();
        let cell = run_cell("compas", &s.dataset, BenchModel::Lr, &small_cfg()).unwrap();
        assert_eq!(cell.rows.len(), 9 * 3);
        for metric in BenchMetric::ALL {
            let z: Vec<f64> = cell.rows.iter().filter(|r| r.metric == metric).map(|r| r.z).collect();
            let m = z.iter().sum::<f64>() / 3.0;
            let v = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-12 || v == 0.0);
        }
        assert_eq!(cell.k_rankings.iter().map(|r| r.k).collect::<Vec<_>>(), vec![1, 3, 5, 9]);
    }

    #[test]
    fn nn_cell_uses_agnostic_metrics_only() {
        let s = generate_standin(StandinKind::German, 120, 3).unwrap();
        let mut cfg = small_cfg();
        cfg.k_diagnostic = vec![5];
        let cell = run_cell("german", &s.dataset, BenchModel::Nn, &cfg).unwrap();
        let mut metrics: Vec<BenchMetric> = cell.rows.iter().map(|r| r.metric).collect();
        metrics.dedup();
        assert_eq!(metrics, vec![BenchMetric::Pgi, BenchMetric::NegPgu, BenchMetric::Axe]);
        assert!(cell.k_agrees);
    }

    #[test]
    fn lr_ground_truth_scores_gradient_explanations_highly() {
        // The gradient of a logistic model is a positive multiple of its
        // coefficients, so every ranking metric is maximal.
        let s = generate_standin(StandinKind::Communities, 150, 5).unwrap();
        let cell = run_cell("c", &s.dataset, BenchModel::Lr, &small_cfg()).unwrap();
        for metric in [BenchMetric::Fa, BenchMetric::Ra, BenchMetric::Sa, BenchMetric::Sra, BenchMetric::Pra, BenchMetric::Rc] {
            let v = cell
                .rows
                .iter()
                .find(|r| r.metric == metric && r.explainer == ExplainerKind::Grad)
                .unwrap()
                .value;
            assert!((v - 1.0).abs() < 1e-12, "{metric} {v}");
        }
    }

    #[test]
    fn rejects_empty_inputs_and_unlabelled_data() {
        assert!(matches!(run_benchmark(&[], &[BenchModel::Lr], &small_cfg()), Err(Error::Config(_))));
        let s = generate_standin(StandinKind::Compas, 50, 2).unwrap();
        let unlabelled = Dataset::new(s.dataset.features().clone(), s.dataset.column_names().to_vec(), None).unwrap();
        assert!(matches!(run_cell("x", &unlabelled, BenchModel::Lr, &small_cfg()), Err(Error::Data(_))));
    }

    #[test]
    fn pair_agreement_counts_matching_orders() {
        assert_eq!(pair_agreement(&[1.0, 2.0, 3.0], &[0.1, 0.2, 0.3]), 1.0);
        assert!((pair_agreement(&[1.0, 2.0, 3.0], &[0.2, 0.1, 0.3]) - 2.0 / 3.0).abs() < 1e-15);
    }
}
