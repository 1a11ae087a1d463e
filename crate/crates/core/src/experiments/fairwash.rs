//! Fairwashing detection: a scaffolded model discriminates on a protected
//! feature while hiding behind foil features. Each metric scores one-hot
//! explanation sets pointing at the protected feature (E_rho), the foils
//! (E_phi, E_psi) and every other feature (E_omega, pooled). A metric passes
//! when E_rho outscores every foil set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::axe::AxeRun;
use crate::data::{mean, Dataset, Explanation};
use crate::error::{Error, Result};
use crate::knn::NeighborMode;
use crate::metrics::sensitivity::{sensitivity_report, PerturbationPlan};
use crate::models::{build_scaffold, AttackKind, ScaffoldConfig, ScaffoldDiagnostics};

use super::synthetic::one_hot_set;

/// Metrics reported in the ordering table. PGU is negated so that higher is
/// better for every entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairwashMetric {
    Axe,
    Pgi,
    NegPgu,
}

impl FairwashMetric {
    pub const ALL: [FairwashMetric; 3] = [FairwashMetric::Pgi, FairwashMetric::NegPgu, FairwashMetric::Axe];

    pub fn id(self) -> &'static str {
        match self {
            FairwashMetric::Axe => "axe",
            FairwashMetric::Pgi => "pgi",
            FairwashMetric::NegPgu => "neg_pgu",
        }
    }
}

impl fmt::Display for FairwashMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FairwashMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axe" => Ok(FairwashMetric::Axe),
            "pgi" => Ok(FairwashMetric::Pgi),
            "pgu" | "neg_pgu" => Ok(FairwashMetric::NegPgu),
            _ => Err(Error::Config(format!("unknown fairwash metric '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairwashSpec {
    /// Label used in the output table.
    pub dataset: String,
    pub protected: String,
    /// One or two foil feature names.
    pub foils: Vec<String>,
    pub attack: AttackKind,
    pub metrics: Vec<FairwashMetric>,
    pub n: usize,
    pub k: usize,
    pub perturb_width: f64,
    pub perturb_samples: usize,
    pub seed: u64,
}

impl FairwashSpec {
    pub fn new(dataset: impl Into<String>, protected: impl Into<String>, foils: Vec<String>, attack: AttackKind) -> Self {
        Self {
            dataset: dataset.into(),
            protected: protected.into(),
            foils,
            attack,
            metrics: FairwashMetric::ALL.to_vec(),
            n: 1,
            k: 5,
            perturb_width: 0.5,
            perturb_samples: 10,
            seed: 0,
        }
    }

    /// Model label such as `m_L (2 foils)`.
    pub fn model_label(&self) -> String {
        let plural = if self.foils.len() == 1 { "foil" } else { "foils" };
        format!("{} ({} {plural})", self.attack.model_name(), self.foils.len())
    }
}

/// One row of the ordering table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub dataset: String,
    pub model: String,
    pub metric: FairwashMetric,
    pub e_rho: f64,
    pub e_phi: f64,
    pub e_psi: Option<f64>,
    pub e_omega: Option<f64>,
    pub pass: bool,
    /// Smallest gap between E_rho and a foil set; positive when passing.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairwashResult {
    pub spec: FairwashSpec,
    pub rows: Vec<Table2Row>,
    pub diagnostics: ScaffoldDiagnostics,
}

fn resolve(ds: &Dataset, name: &str) -> Result<usize> {
    ds.column_index(name)
        .ok_or_else(|| Error::Config(format!("feature '{name}' not found in dataset")))
}

/// Runs the detection check on the raw dataset `raw` (standardized here).
pub fn run_fairwash(raw: &Dataset, spec: &FairwashSpec) -> Result<FairwashResult> {
    if spec.n != 1 {
        return Err(Error::Config("fairwash explanations are one-hot; n must be 1".into()));
    }
    if spec.metrics.is_empty() {
        return Err(Error::Config("no fairwash metrics requested".into()));
    }
    let ds = raw.standardize();
    let protected = resolve(&ds, &spec.protected)?;
    let foils = spec.foils.iter().map(|f| resolve(&ds, f)).collect::<Result<Vec<_>>>()?;
    let cfg = ScaffoldConfig {
        seed: spec.seed,
        ..ScaffoldConfig::for_attack(spec.attack)
    };
    let scaffold = build_scaffold(&ds, protected, &foils, &cfg)?;
    let others: Vec<usize> = (0..ds.n_features())
        .filter(|f| *f != protected && !foils.contains(f))
        .collect();
    let sets: Vec<(usize, Vec<Explanation>)> = (0..ds.n_features())
        .map(|f| (f, one_hot_set(&ds, f, "one_hot")))
        .collect();

    let mut rows = Vec::new();
    for &metric in &spec.metrics {
        // per-point scores for every one-hot set, indexed by feature
        let per_feature: Vec<Vec<f64>> = match metric {
            FairwashMetric::Axe => {
                let all: Vec<Explanation> = sets.iter().flat_map(|(_, e)| e.iter().cloned()).collect();
                let run = AxeRun::new(&scaffold, &ds, &all, spec.k, NeighborMode::LeaveOneOut)?;
                let q = run.axe_score(spec.n)?.report.per_point_q;
                q.chunks(ds.n_rows()).map(<[f64]>::to_vec).collect()
            }
            FairwashMetric::Pgi | FairwashMetric::NegPgu => {
                let plan = if metric == FairwashMetric::Pgi {
                    PerturbationPlan::important(spec.n, spec.perturb_width, spec.perturb_samples, spec.seed)?
                } else {
                    PerturbationPlan::unimportant(spec.n, spec.perturb_width, spec.perturb_samples, spec.seed)?
                };
                let sign = if metric == FairwashMetric::Pgi { 1.0 } else { -1.0 };
                sets.iter()
                    .map(|(_, e)| {
                        let r = sensitivity_report(&scaffold, &ds, e, &plan)?;
                        Ok(r.per_point_q.iter().map(|v| sign * v).collect())
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let set_mean = |f: usize| mean(&per_feature[f]);
        let e_rho = set_mean(protected);
        let e_phi = set_mean(foils[0]);
        let e_psi = foils.get(1).map(|&f| set_mean(f));
        let e_omega = if others.is_empty() {
            None
        } else {
            let pooled: Vec<f64> = others.iter().flat_map(|&f| per_feature[f].iter().copied()).collect();
            Some(mean(&pooled))
        };
        let margin = e_psi.map_or(e_rho - e_phi, |p| (e_rho - e_phi).min(e_rho - p));
        rows.push(Table2Row {
            dataset: spec.dataset.clone(),
            model: spec.model_label(),
            metric,
            e_rho,
            e_phi,
            e_psi,
            e_omega,
            pass: margin > 0.0,
            margin,
        });
    }
    Ok(FairwashResult {
        spec: spec.clone(),
        rows,
        diagnostics: scaffold.diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Protected column decides the label; the other two are noise.
    fn three_feature(rows: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut y = Vec::new();
        for _ in 0..rows {
            let p: f64 = rng.random_range(-1.0..1.0);
            data.extend([p, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            y.push(u8::from(p > 0.0));
        }
        Dataset::new(
            Matrix::new(rows, 3, data).unwrap(),
            vec!["prot".into(), "foil".into(), "other".into()],
            Some(y),
        )
        .unwrap()
    }

    #[test]
    fn axe_separates_protected_from_foil() {
        let ds = three_feature(300, 4);
        for attack in [AttackKind::Lime, AttackKind::Shap] {
            let mut spec = FairwashSpec::new("toy", "prot", vec!["foil".into()], attack);
            spec.metrics = vec![FairwashMetric::Axe];
            let res = run_fairwash(&ds, &spec).unwrap();
            let row = &res.rows[0];
            assert!(row.pass && row.margin >= 0.1, "{row:?} {:?}", res.diagnostics);
            assert!(row.e_psi.is_none() && row.e_omega.is_some());
        }
    }

    #[test]
    fn missing_feature_is_a_config_error() {
        let ds = three_feature(100, 1);
        let spec = FairwashSpec::new("toy", "prot", vec!["nope".into()], AttackKind::Lime);
        assert!(matches!(run_fairwash(&ds, &spec), Err(Error::Config(_))));
        let spec = FairwashSpec::new("toy", "missing", vec!["foil".into()], AttackKind::Lime);
        assert!(matches!(run_fairwash(&ds, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn table_has_one_row_per_metric() {
        let ds = three_feature(120, 2);
        let mut spec = FairwashSpec::new("toy", "prot", vec!["foil".into(), "other".into()], AttackKind::Shap);
        spec.perturb_samples = 5;
        let res = run_fairwash(&ds, &spec).unwrap();
        assert_eq!(res.rows.len(), 3);
        assert!(res.rows.iter().all(|r| r.e_psi.is_some() && r.e_omega.is_none()));
        assert!(res.rows.iter().find(|r| r.metric == FairwashMetric::NegPgu).unwrap().e_rho <= 0.0);
        assert_eq!(spec.model_label(), "m_S (2 foils)");
        assert_eq!(run_fairwash(&ds, &spec).unwrap(), res);
    }
}
