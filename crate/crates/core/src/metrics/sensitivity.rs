//! Perturbation metrics (PGI, PGU), the surrogate fidelity loss, and a
//! density-based on-manifold probability estimator.
//!
//! Perturbations are Gaussian, applied in standardized space, and never
//! clipped to the observed data range.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{importance_order, mean, pairwise_sum, top_n_features, Dataset, Explanation, Matrix, QualityReport};
use crate::error::{Error, Result};
use crate::explainers::Neighborhood;
use crate::models::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbTarget {
    Important,
    Unimportant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub target: PerturbTarget,
    pub n: usize,
    pub width: f64,
    pub samples: usize,
    pub seed: u64,
}

impl PerturbationPlan {
    pub fn new(target: PerturbTarget, n: usize, width: f64, samples: usize, seed: u64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::Config(format!("perturbation width must be positive, got {width}")));
        }
        if samples == 0 {
            return Err(Error::Config("perturbation samples must be >= 1".into()));
        }
        if n == 0 {
            return Err(Error::Bounds("top_n must be >= 1".into()));
        }
        Ok(Self {
            target,
            n,
            width,
            samples,
            seed,
        })
    }

    pub fn important(n: usize, width: f64, samples: usize, seed: u64) -> Result<Self> {
        Self::new(PerturbTarget::Important, n, width, samples, seed)
    }

    pub fn unimportant(n: usize, width: f64, samples: usize, seed: u64) -> Result<Self> {
        Self::new(PerturbTarget::Unimportant, n, width, samples, seed)
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    /// Independent random stream for datapoint `index`.
    pub fn rng_for(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }

    pub fn metric_id(&self) -> &'static str {
        match self.target {
            PerturbTarget::Important => "pgi",
            PerturbTarget::Unimportant => "pgu",
        }
    }
}

/// Coordinates perturbed under `target`, in ascending index order.
pub fn perturbed_coordinates(e: &[f64], n: usize, target: PerturbTarget) -> Result<Vec<usize>> {
    let mut coords = match target {
        PerturbTarget::Important => top_n_features(e, n)?,
        PerturbTarget::Unimportant => {
            top_n_features(e, n)?;
            let order = importance_order(e);
            order[order.len() - n..].to_vec()
        }
    };
    coords.sort_unstable();
    Ok(coords)
}

/// Sample mean of the prediction gap and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Prediction gap of `model` at `x` when the coordinates selected by `plan`
/// are perturbed, drawing from `rng`.
pub fn prediction_gap_with(model: &dyn Model, x: &[f64], e: &[f64], plan: &PerturbationPlan, rng: &mut ChaCha8Rng) -> Result<GapEstimate> {
    if e.len() != x.len() {
        return Err(Error::Bounds(format!(
            "explanation has {} features, point has {}",
            e.len(),
            x.len()
        )));
    }
    let coords = perturbed_coordinates(e, plan.n, plan.target)?;
    let noise = Normal::new(0.0, plan.width).map_err(|err| Error::Config(err.to_string()))?;
    let base = model.score(x);
    let mut xt = x.to_vec();
    let gaps: Vec<f64> = (0..plan.samples)
        .map(|_| {
            for &c in &coords {
                xt[c] = x[c] + noise.sample(rng);
            }
            (base - model.score(&xt)).abs()
        })
        .collect();
    let m = mean(&gaps);
    let sq: Vec<f64> = gaps.iter().map(|g| (g - m) * (g - m)).collect();
    let std_error = if gaps.len() > 1 {
        (pairwise_sum(&sq) / (gaps.len() - 1) as f64 / gaps.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(GapEstimate { mean: m, std_error })
}

/// Prediction gap at `x`, seeded from the plan alone.
pub fn prediction_gap(model: &dyn Model, x: &[f64], e: &[f64], plan: &PerturbationPlan) -> Result<GapEstimate> {
    prediction_gap_with(model, x, e, plan, &mut plan.rng_for(0))
}

fn require(plan: &PerturbationPlan, target: PerturbTarget) -> Result<()> {
    if plan.target != target {
        return Err(Error::Config(format!("perturbation plan targets {:?} features", plan.target)));
    }
    Ok(())
}

/// Mean |score(x) - score(x~)| when the top-n features of `e` are perturbed.
pub fn pgi(model: &dyn Model, x: &[f64], e: &[f64], plan: &PerturbationPlan) -> Result<f64> {
    require(plan, PerturbTarget::Important)?;
    Ok(prediction_gap(model, x, e, plan)?.mean)
}

/// Mean |score(x) - score(x~)| when the n least important features of `e`
/// are perturbed. Lower is better.
pub fn pgu(model: &dyn Model, x: &[f64], e: &[f64], plan: &PerturbationPlan) -> Result<f64> {
    require(plan, PerturbTarget::Unimportant)?;
    Ok(prediction_gap(model, x, e, plan)?.mean)
}

/// PGI or PGU (per the plan) for every explanation. Each explanation uses the
/// random stream of its datapoint index.
pub fn sensitivity_report(model: &dyn Model, ds: &Dataset, explanations: &[Explanation], plan: &PerturbationPlan) -> Result<QualityReport> {
    let per_point = explanations
        .par_iter()
        .map(|e| {
            if e.datapoint_index >= ds.n_rows() {
                return Err(Error::Bounds(format!("datapoint index {} out of range", e.datapoint_index)));
            }
            let mut rng = plan.rng_for(e.datapoint_index);
            Ok(prediction_gap_with(model, ds.row(e.datapoint_index), &e.importances, plan, &mut rng)?.mean)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(QualityReport::from_per_point(plan.metric_id(), per_point))
}

/// Kernel-weighted squared loss of the linear attribution `e` on a sampled
/// neighbourhood.
pub fn fidelity_loss(e: &[f64], neighborhood: &Neighborhood) -> f64 {
    let terms: Vec<f64> = neighborhood
        .deltas
        .iter()
        .zip(&neighborhood.targets)
        .zip(&neighborhood.weights)
        .map(|((d, t), w)| {
            let pred: f64 = d.iter().zip(e).map(|(a, b)| a * b).sum();
            w * (t - pred) * (t - pred)
        })
        .collect();
    pairwise_sum(&terms) / pairwise_sum(&neighborhood.weights)
}

/// Minimum number of rows for density estimation.
pub const MIN_MANIFOLD_ROWS: usize = 50;

/// Fraction of real rows allowed below the density threshold.
pub const MANIFOLD_TAIL: f64 = 0.01;

#[derive(Debug, Clone)]
struct Component {
    log_weight: f64,
    mean: DVector<f64>,
    // lower Cholesky factor of the covariance
    chol: DMatrix<f64>,
    log_norm: f64,
}

impl Component {
    fn log_density(&self, x: &[f64]) -> f64 {
        let d = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, b)| a - b));
        let z = self
            .chol
            .solve_lower_triangular(&d)
            .expect("cholesky factor is nonsingular");
        self.log_weight + self.log_norm - 0.5 * z.norm_squared()
    }
}

#[derive(Debug, Clone)]
enum Density {
    Mixture(Vec<Component>),
    Kernel { points: Matrix, bandwidth: Vec<f64> },
}

/// Density model of a dataset with a threshold below which a point is
/// considered off the data manifold.
#[derive(Debug, Clone)]
pub struct OnManifoldEstimator {
    density: Density,
    log_threshold: f64,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl OnManifoldEstimator {
    /// Fits a Gaussian mixture with one component per known cluster id, or a
    /// product-kernel density with Scott's-rule bandwidths when `clusters`
    /// is `None`.
    pub fn fit(ds: &Dataset, clusters: Option<&[usize]>) -> Result<Self> {
        let x = ds.features();
        if x.nrows() < MIN_MANIFOLD_ROWS {
            return Err(Error::Fit(format!(
                "density estimation needs at least {MIN_MANIFOLD_ROWS} rows, got {}",
                x.nrows()
            )));
        }
        let density = match clusters {
            Some(ids) => Density::Mixture(fit_mixture(x, ids)?),
            None => {
                let n = x.nrows() as f64;
                let d = x.ncols() as f64;
                let factor = n.powf(-1.0 / (d + 4.0));
                let bandwidth = (0..x.ncols())
                    .map(|j| {
                        let s = crate::data::ColumnStats::of(&x.column(j)).std;
                        if s > 0.0 { s * factor } else { factor }
                    })
                    .collect();
                Density::Kernel {
                    points: x.clone(),
                    bandwidth,
                }
            }
        };
        let mut est = Self {
            density,
            log_threshold: f64::NEG_INFINITY,
        };
        let mut logs: Vec<f64> = (0..x.nrows()).into_par_iter().map(|i| est.log_density(x.row(i))).collect();
        logs.sort_by(f64::total_cmp);
        est.log_threshold = logs[(MANIFOLD_TAIL * logs.len() as f64).floor() as usize];
        Ok(est)
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        match &self.density {
            Density::Mixture(comps) => {
                let parts: Vec<f64> = comps.iter().map(|c| c.log_density(x)).collect();
                log_sum_exp(&parts)
            }
            Density::Kernel { points, bandwidth } => {
                let log_norm: f64 = bandwidth
                    .iter()
                    .map(|h| -(h * (2.0 * std::f64::consts::PI).sqrt()).ln())
                    .sum::<f64>()
                    - (points.nrows() as f64).ln();
                let parts: Vec<f64> = points
                    .rows()
                    .map(|p| {
                        -0.5 * p
                            .iter()
                            .zip(x)
                            .zip(bandwidth)
                            .map(|((a, b), h)| ((a - b) / h).powi(2))
                            .sum::<f64>()
                    })
                    .collect();
                log_norm + log_sum_exp(&parts)
            }
        }
    }

    /// Log density that 99% of the fitted rows meet or exceed.
    pub fn log_threshold(&self) -> f64 {
        self.log_threshold
    }

    pub fn is_on_manifold(&self, x: &[f64]) -> bool {
        self.log_density(x) >= self.log_threshold
    }

    /// Fraction of Gaussian perturbations of `x` on `subset` that stay on the
    /// manifold.
    pub fn probability(&self, x: &[f64], subset: &[usize], width: f64, samples: usize, seed: u64) -> Result<f64> {
        if samples == 0 {
            return Err(Error::Config("samples must be >= 1".into()));
        }
        if let Some(&bad) = subset.iter().find(|&&c| c >= x.len()) {
            return Err(Error::Bounds(format!("feature index {bad} out of range")));
        }
        let noise = Normal::new(0.0, width).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vec<f64>> = (0..samples)
            .map(|_| {
                let mut p = x.to_vec();
                for &c in subset {
                    p[c] += noise.sample(&mut rng);
                }
                p
            })
            .collect();
        let hits = points.par_iter().filter(|p| self.is_on_manifold(p)).count();
        Ok(hits as f64 / samples as f64)
    }
}

fn fit_mixture(x: &Matrix, ids: &[usize]) -> Result<Vec<Component>> {
    if ids.len() != x.nrows() {
        return Err(Error::Data(format!(
            "{} cluster ids for {} rows",
            ids.len(),
            x.nrows()
        )));
    }
    let d = x.ncols();
    let n_clusters = ids.iter().max().map_or(0, |m| m + 1);
    let mut comps = Vec::new();
    for c in 0..n_clusters {
        let rows: Vec<&[f64]> = (0..x.nrows()).filter(|&i| ids[i] == c).map(|i| x.row(i)).collect();
        if rows.is_empty() {
            continue;
        }
        let m = rows.len() as f64;
        let mut mu = DVector::<f64>::zeros(d);
        for r in &rows {
            mu += DVector::from_column_slice(r);
        }
        mu /= m;
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for r in &rows {
            let dv = DVector::from_column_slice(r) - &mu;
            cov += &dv * dv.transpose();
        }
        cov /= m;
        let chol = match cov.clone().cholesky() {
            Some(ch) => ch,
            None => {
                log::warn!("cluster {c} covariance is singular; adding 1e-6 to its diagonal");
                (cov + DMatrix::identity(d, d) * 1e-6)
                    .cholesky()
                    .ok_or_else(|| Error::Fit(format!("cluster {c} covariance is not positive definite")))?
            }
        };
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        comps.push(Component {
            log_weight: (m / x.nrows() as f64).ln(),
            mean: mu,
            chol: l,
            log_norm: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
        });
    }
    Ok(comps)
}

/// Fits an [`OnManifoldEstimator`] to `ds` and evaluates the on-manifold
/// probability of perturbations of `x` on `subset`.
pub fn on_manifold_probability(
    ds: &Dataset,
    clusters: Option<&[usize]>,
    x: &[f64],
    subset: &[usize],
    width: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    OnManifoldEstimator::fit(ds, clusters)?.probability(x, subset, width, samples, seed)
}
