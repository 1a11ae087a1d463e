//! Four Gaussian clusters in the plane, labelled by the sign of the first
//! coordinate. One explanation points at X1 (`e_a`, correct), the other at X2
//! (`e_b`, irrelevant to the model).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::axe::AxeRun;
use crate::data::{Dataset, Explanation, Matrix};
use crate::error::{Error, Result};
use crate::knn::NeighborMode;
use crate::metrics::sensitivity::{pgi, OnManifoldEstimator, PerturbationPlan};
use crate::models::{predict_labels, ThresholdModel};

/// Cluster centres Q, R, S, T.
pub const CENTERS: [[f64; 2]; 4] = [[2.0, 2.0], [-2.0, 2.0], [-2.0, -2.0], [2.0, -2.0]];
pub const DEFAULT_SD: f64 = 0.8;
pub const DEFAULT_K_GRID: [usize; 5] = [1, 5, 50, 500, 5000];

/// Widths 1e-3 .. 1e2 in 1-2-5 steps.
pub fn symlog_width_grid() -> Vec<f64> {
    let mut out = Vec::new();
    for exp in -3..=2 {
        for m in [1.0, 2.0, 5.0] {
            let w = m * 10f64.powi(exp);
            if w <= 100.0 {
                out.push(w);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourGaussianSpec {
    /// One 2x2 covariance per cluster, in `CENTERS` order.
    pub covariances: [[[f64; 2]; 2]; 4],
    pub points_per_cluster: usize,
    pub seed: u64,
}

impl Default for FourGaussianSpec {
    fn default() -> Self {
        Self::isotropic(DEFAULT_SD, 5000, 0)
    }
}

impl FourGaussianSpec {
    pub fn isotropic(sd: f64, points_per_cluster: usize, seed: u64) -> Self {
        let v = sd * sd;
        Self {
            covariances: [[[v, 0.0], [0.0, v]]; 4],
            points_per_cluster,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_per_cluster == 0 {
            return Err(Error::Config("points_per_cluster must be >= 1".into()));
        }
        for (c, m) in self.covariances.iter().enumerate() {
            let ok = m[0][1] == m[1][0] && m[0][0] > 0.0 && m[0][0] * m[1][1] - m[0][1] * m[1][0] > 0.0;
            if !ok || m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("covariance of cluster {c} is not positive definite")));
            }
        }
        Ok(())
    }

    /// Raw (unstandardized) points and their cluster ids.
    pub fn generate(&self) -> Result<(Dataset, Vec<usize>)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let total = 4 * self.points_per_cluster;
        let mut data = Vec::with_capacity(2 * total);
        let mut ids = Vec::with_capacity(total);
        for (c, (mu, cov)) in CENTERS.iter().zip(&self.covariances).enumerate() {
            let l00 = cov[0][0].sqrt();
            let l10 = cov[1][0] / l00;
            let l11 = (cov[1][1] - l10 * l10).sqrt();
            for _ in 0..self.points_per_cluster {
                let z0: f64 = StandardNormal.sample(&mut rng);
                let z1: f64 = StandardNormal.sample(&mut rng);
                data.push(mu[0] + l00 * z0);
                data.push(mu[1] + l10 * z0 + l11 * z1);
                ids.push(c);
            }
        }
        let ds = Dataset::new(Matrix::new(total, 2, data)?, vec!["x1".into(), "x2".into()], None)?;
        Ok((ds, ids))
    }
}

/// `1[X_feature > 0]` in raw units, expressed on the standardized dataset `ds`.
pub fn axis_model(ds: &Dataset, feature: usize) -> ThresholdModel {
    let s = ds.standardization()[feature];
    ThresholdModel::single(feature, (0.0 - s.mean) / s.std, ds.n_features())
}

/// One-hot explanation on `feature` for every row.
pub fn one_hot_set(ds: &Dataset, feature: usize, id: &str) -> Vec<Explanation> {
    (0..ds.n_rows())
        .map(|i| Explanation::one_hot(ds.n_features(), feature, i, id))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub spec: FourGaussianSpec,
    pub k_grid: Vec<usize>,
    pub width_grid: Vec<f64>,
    pub pgi_samples: usize,
    pub manifold_samples: usize,
    pub neighbor_mode: NeighborMode,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            spec: FourGaussianSpec::default(),
            k_grid: DEFAULT_K_GRID.to_vec(),
            width_grid: symlog_width_grid(),
            pgi_samples: 1000,
            manifold_samples: 10000,
            neighbor_mode: NeighborMode::LeaveOneOut,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxeRow {
    pub k: usize,
    pub axe_e_a: f64,
    pub axe_e_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgiRow {
    pub width: f64,
    pub pgi_e_a: f64,
    pub pgi_e_b: f64,
    /// On-manifold probability of the perturbations PGI draws for `e_a`.
    pub on_manifold_e_a: f64,
    pub on_manifold_e_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStudy {
    pub axe: Vec<AxeRow>,
    pub pgi: Vec<PgiRow>,
    /// Q in standardized coordinates; PGI and on-manifold probabilities are
    /// evaluated there.
    pub query_point: Vec<f64>,
}

/// AXE at n = 1 for `e_a` and `e_b` across `k_grid`.
pub fn axe_sweep(ds: &Dataset, model: &ThresholdModel, k_grid: &[usize], mode: NeighborMode) -> Result<Vec<AxeRow>> {
    let y = predict_labels(model, ds);
    let ea = one_hot_set(ds, 0, "e_a");
    let eb = one_hot_set(ds, 1, "e_b");
    k_grid
        .iter()
        .map(|&k| {
            let a = AxeRun::from_predictions(ds.features(), y.clone(), &ea, k, mode)?.axe_score(1)?;
            let b = AxeRun::from_predictions(ds.features(), y.clone(), &eb, k, mode)?.axe_score(1)?;
            Ok(AxeRow {
                k,
                axe_e_a: a.report.aggregate_q,
                axe_e_b: b.report.aggregate_q,
            })
        })
        .collect()
}

pub fn run_synthetic_study(cfg: &SyntheticConfig) -> Result<SyntheticStudy> {
    if cfg.k_grid.is_empty() || cfg.width_grid.is_empty() {
        return Err(Error::Config("k and width grids must be non-empty".into()));
    }
    let (raw, ids) = cfg.spec.generate()?;
    let ds = raw.standardize();
    let model = axis_model(&ds, 0);
    let axe = axe_sweep(&ds, &model, &cfg.k_grid, cfg.neighbor_mode)?;

    let q = ds.transform(&CENTERS[0]);
    let estimator = OnManifoldEstimator::fit(&ds, Some(&ids))?;
    let seed = cfg.spec.seed;
    let pgi = cfg
        .width_grid
        .iter()
        .map(|&w| {
            let plan = PerturbationPlan::important(1, w, cfg.pgi_samples, seed)?;
            Ok(PgiRow {
                width: w,
                pgi_e_a: pgi(&model, &q, &[1.0, 0.0], &plan)?,
                pgi_e_b: pgi(&model, &q, &[0.0, 1.0], &plan)?,
                on_manifold_e_a: estimator.probability(&q, &[0], w, cfg.manifold_samples, seed)?,
                on_manifold_e_b: estimator.probability(&q, &[1], w, cfg.manifold_samples, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticStudy {
        axe,
        pgi,
        query_point: q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_grid_is_symlog_125() {
        let g = symlog_width_grid();
        assert_eq!(g.len(), 16);
        assert_eq!(g[0], 1e-3);
        assert_eq!(*g.last().unwrap(), 100.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn generated_clusters_have_requested_moments() {
        let spec = FourGaussianSpec {
            covariances: [[[0.5, 0.2], [0.2, 0.3]]; 4],
            points_per_cluster: 20000,
            seed: 3,
        };
        let (ds, ids) = spec.generate().unwrap();
        let rows: Vec<&[f64]> = (0..ds.n_rows()).filter(|&i| ids[i] == 2).map(|i| ds.row(i)).collect();
        let n = rows.len() as f64;
        let m0 = rows.iter().map(|r| r[0]).sum::<f64>() / n;
        let m1 = rows.iter().map(|r| r[1]).sum::<f64>() / n;
        let c01 = rows.iter().map(|r| (r[0] - m0) * (r[1] - m1)).sum::<f64>() / n;
        let c11 = rows.iter().map(|r| (r[1] - m1).powi(2)).sum::<f64>() / n;
        assert!((m0 + 2.0).abs() < 0.02 && (m1 + 2.0).abs() < 0.02);
        assert!((c01 - 0.2).abs() < 0.02 && (c11 - 0.3).abs() < 0.02);
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let mut spec = FourGaussianSpec::isotropic(0.8, 10, 0);
        spec.covariances[1] = [[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(spec.generate(), Err(Error::Config(_))));
    }

    #[test]
    fn small_study_orders_explanations() {
        let cfg = SyntheticConfig {
            spec: FourGaussianSpec::isotropic(DEFAULT_SD, 300, 1),
            k_grid: vec![1, 5, 50],
            width_grid: vec![0.01, 0.1, 10.0],
            pgi_samples: 200,
            manifold_samples: 2000,
            ..Default::default()
        };
        let s = run_synthetic_study(&cfg).unwrap();
        for r in &s.axe {
            assert!(r.axe_e_a > r.axe_e_b);
        }
        assert!(s.pgi.iter().all(|r| r.pgi_e_b == 0.0));
        assert_eq!(s.pgi[0].pgi_e_a, 0.0);
        assert!(s.pgi[2].pgi_e_a > 0.0);
        assert_eq!(run_synthetic_study(&cfg).unwrap(), s);
    }
}
