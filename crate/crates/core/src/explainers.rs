//! Post-hoc local feature-importance explainers.
//!
//! All explainers work in standardized feature space and are deterministic
//! given `(model, datapoint, config)`: the random stream for datapoint `i` is
//! seeded with `seed ^ i`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Explanation};
use crate::error::{Error, Result};
use crate::linalg::weighted_least_squares;
use crate::models::{model_gradient, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainerKind {
    Grad,
    InputXGrad,
    Smoothgrad,
    IntegratedGradients,
    Lime,
    Kernelshap,
    Random,
}

impl ExplainerKind {
    pub const ALL: [ExplainerKind; 7] = [
        ExplainerKind::Grad,
        ExplainerKind::InputXGrad,
        ExplainerKind::Smoothgrad,
        ExplainerKind::IntegratedGradients,
        ExplainerKind::Lime,
        ExplainerKind::Kernelshap,
        ExplainerKind::Random,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ExplainerKind::Grad => "grad",
            ExplainerKind::InputXGrad => "input_x_grad",
            ExplainerKind::Smoothgrad => "smoothgrad",
            ExplainerKind::IntegratedGradients => "integrated_gradients",
            ExplainerKind::Lime => "lime",
            ExplainerKind::Kernelshap => "kernelshap",
            ExplainerKind::Random => "random",
        }
    }

    pub fn needs_gradient(self) -> bool {
        matches!(
            self,
            ExplainerKind::Grad
                | ExplainerKind::InputXGrad
                | ExplainerKind::Smoothgrad
                | ExplainerKind::IntegratedGradients
        )
    }
}

impl fmt::Display for ExplainerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ExplainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExplainerKind::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown explainer '{s}'")))
    }
}

/// Reference point for integrated gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Zeros,
    #[default]
    DatasetMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerConfig {
    pub explainer: ExplainerKind,
    pub sample_count: usize,
    /// Gaussian noise stddev in standardized units (SmoothGrad, LIME).
    pub noise_width: f64,
    pub ig_steps: usize,
    pub baseline: Baseline,
    pub seed: u64,
}

impl ExplainerConfig {
    pub fn new(explainer: ExplainerKind) -> Self {
        Self {
            explainer,
            sample_count: 1000,
            noise_width: 0.5,
            ig_steps: 50,
            baseline: Baseline::DatasetMean,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 || self.ig_steps == 0 {
            return Err(Error::Config("explainer sample_count and ig_steps must be >= 1".into()));
        }
        if !(self.noise_width > 0.0 && self.noise_width.is_finite()) {
            return Err(Error::Config(format!(
                "noise_width must be positive, got {}",
                self.noise_width
            )));
        }
        Ok(())
    }

    fn rng_for(&self, datapoint_index: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ datapoint_index as u64)
    }
}

pub fn explain_grad(model: &dyn Model, x: &[f64]) -> Result<Vec<f64>> {
    model_gradient(model, x)
}

/// Gradient scaled elementwise by the input.
pub fn explain_input_x_grad(model: &dyn Model, x: &[f64]) -> Result<Vec<f64>> {
    let g = model_gradient(model, x)?;
    Ok(g.iter().zip(x).map(|(a, b)| a * b).collect())
}

/// Mean gradient over Gaussian-perturbed copies of `x`.
pub fn explain_smoothgrad<R: Rng>(model: &dyn Model, x: &[f64], samples: usize, width: f64, rng: &mut R) -> Result<Vec<f64>> {
    let noise = Normal::new(0.0, width).map_err(|e| Error::Config(e.to_string()))?;
    let mut acc = vec![0.0; x.len()];
    for _ in 0..samples {
        let p: Vec<f64> = x.iter().map(|v| v + noise.sample(rng)).collect();
        for (a, g) in acc.iter_mut().zip(model_gradient(model, &p)?) {
            *a += g;
        }
    }
    Ok(acc.into_iter().map(|a| a / samples as f64).collect())
}

/// Path-integrated gradients from `baseline` to `x` (midpoint rule).
pub fn explain_integrated_gradients(model: &dyn Model, x: &[f64], baseline: &[f64], steps: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; x.len()];
    for t in 0..steps {
        let alpha = (t as f64 + 0.5) / steps as f64;
        let p: Vec<f64> = baseline
            .iter()
            .zip(x)
            .map(|(b, v)| b + alpha * (v - b))
            .collect();
        for (a, g) in acc.iter_mut().zip(model_gradient(model, &p)?) {
            *a += g;
        }
    }
    Ok(acc
        .iter()
        .zip(x.iter().zip(baseline))
        .map(|(a, (v, b))| (v - b) * a / steps as f64)
        .collect())
}

/// Synthetic neighbourhood of a point together with the model's responses:
/// `targets[r] = score(x + deltas[r]) - score(x)`.
#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub deltas: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Result of a LIME-style surrogate fit.
#[derive(Debug, Clone)]
pub struct LimeFit {
    pub coefficients: Vec<f64>,
    pub neighborhood: Neighborhood,
    pub used_ridge: bool,
}

/// Gaussian neighbourhood of `x` with kernel weights
/// `exp(-|delta|^2 / (2 width^2))`.
pub fn gaussian_neighborhood<R: Rng>(model: &dyn Model, x: &[f64], samples: usize, width: f64, rng: &mut R) -> Result<Neighborhood> {
    let noise = Normal::new(0.0, width).map_err(|e| Error::Config(e.to_string()))?;
    let base = model.score(x);
    let mut deltas = Vec::with_capacity(samples);
    let mut targets = Vec::with_capacity(samples);
    let mut weights = Vec::with_capacity(samples);
    for _ in 0..samples {
        let d: Vec<f64> = x.iter().map(|_| noise.sample(rng)).collect();
        let p: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        let r2: f64 = d.iter().map(|v| v * v).sum();
        targets.push(model.score(&p) - base);
        weights.push((-r2 / (2.0 * width * width)).exp());
        deltas.push(d);
    }
    Ok(Neighborhood {
        deltas,
        targets,
        weights,
    })
}

/// Linear surrogate anchored at `score(x)`: the kernel-weighted least-squares
/// fit of `score(x + delta) - score(x)` on `delta`.
pub fn lime_fit<R: Rng>(model: &dyn Model, x: &[f64], samples: usize, width: f64, rng: &mut R) -> Result<LimeFit> {
    let neighborhood = gaussian_neighborhood(model, x, samples, width, rng)?;
    let (coefficients, used_ridge) = weighted_least_squares(
        &neighborhood.deltas,
        &neighborhood.targets,
        &neighborhood.weights,
        x.len(),
    );
    Ok(LimeFit {
        coefficients,
        neighborhood,
        used_ridge,
    })
}

pub fn explain_lime<R: Rng>(model: &dyn Model, x: &[f64], samples: usize, width: f64, rng: &mut R) -> Result<Vec<f64>> {
    Ok(lime_fit(model, x, samples, width, rng)?.coefficients)
}

/// Shapley kernel weight of a coalition of size `s` among `n` features.
pub fn shapley_kernel_weight(n: usize, s: usize) -> f64 {
    (n as f64 - 1.0) / (binomial(n, s) * s as f64 * (n - s) as f64)
}

pub fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coalition value: score of `x` with features outside the coalition replaced
/// by `background`.
fn coalition_value(model: &dyn Model, x: &[f64], background: &[f64], z: &[bool]) -> f64 {
    let p: Vec<f64> = x
        .iter()
        .zip(background)
        .zip(z)
        .map(|((v, b), &keep)| if keep { *v } else { *b })
        .collect();
    model.score(&p)
}

/// KernelSHAP against a single background point.
///
/// Coalitions are enumerated exactly when `2^N - 2 <= samples`, otherwise
/// `samples` coalitions are drawn from the Shapley kernel distribution. The
/// efficiency constraint `sum(e) = v(all) - v(none)` is imposed by
/// eliminating the last coefficient.
pub fn explain_kernelshap<R: Rng>(model: &dyn Model, x: &[f64], background: &[f64], samples: usize, rng: &mut R) -> Result<Vec<f64>> {
    let n = x.len();
    let v_none = model.score(background);
    let v_all = model.score(x);
    let total = v_all - v_none;
    if n == 1 {
        return Ok(vec![total]);
    }
    let enumerate = n < 63 && (1u64 << n) - 2 <= samples as u64;
    let mut coalitions: Vec<(Vec<bool>, f64)> = Vec::new();
    if enumerate {
        for mask in 1..(1u64 << n) - 1 {
            let z: Vec<bool> = (0..n).map(|j| mask >> j & 1 == 1).collect();
            let s = z.iter().filter(|&&b| b).count();
            coalitions.push((z, shapley_kernel_weight(n, s)));
        }
    } else {
        // size s carries total kernel mass (n-1)/(s(n-s))
        let mass: Vec<f64> = (1..n).map(|s| 1.0 / (s as f64 * (n - s) as f64)).collect();
        let mass_total: f64 = mass.iter().sum();
        let unit = Uniform::new(0.0, mass_total).map_err(|e| Error::Config(e.to_string()))?;
        for _ in 0..samples {
            let mut u = unit.sample(rng);
            let mut s = n - 1;
            for (i, m) in mass.iter().enumerate() {
                if u < *m {
                    s = i + 1;
                    break;
                }
                u -= m;
            }
            let mut idx: Vec<usize> = (0..n).collect();
            for i in 0..s {
                let j = rng.random_range(i..n);
                idx.swap(i, j);
            }
            let mut z = vec![false; n];
            for &j in &idx[..s] {
                z[j] = true;
            }
            coalitions.push((z, 1.0));
        }
    }
    let last = n - 1;
    let mut rows = Vec::with_capacity(coalitions.len());
    let mut y = Vec::with_capacity(coalitions.len());
    let mut w = Vec::with_capacity(coalitions.len());
    for (z, weight) in &coalitions {
        let zl = f64::from(u8::from(z[last]));
        rows.push((0..last).map(|j| f64::from(u8::from(z[j])) - zl).collect::<Vec<f64>>());
        y.push(coalition_value(model, x, background, z) - v_none - zl * total);
        w.push(*weight);
    }
    let (mut e, _) = weighted_least_squares(&rows, &y, &w, last);
    let rest: f64 = e.iter().sum();
    e.push(total - rest);
    Ok(e)
}

/// I.i.d. Uniform(-1, 1) importances.
pub fn explain_random<R: Rng>(n_features: usize, rng: &mut R) -> Vec<f64> {
    let dist = Uniform::new(-1.0, 1.0).unwrap();
    (0..n_features)
        .map(|_| loop {
            let v: f64 = dist.sample(rng);
            if v != -1.0 {
                break v;
            }
        })
        .collect()
}

/// Explains row `index` of `ds` with the configured explainer.
pub fn explain(model: &dyn Model, ds: &Dataset, index: usize, cfg: &ExplainerConfig) -> Result<Explanation> {
    explain_point(model, ds, ds.row(index), index, cfg)
}

/// Explains an arbitrary point `x`, using `ds` for background statistics and
/// `index` to derive the random stream.
pub fn explain_point(model: &dyn Model, ds: &Dataset, x: &[f64], index: usize, cfg: &ExplainerConfig) -> Result<Explanation> {
    cfg.validate()?;
    let mut rng = cfg.rng_for(index);
    let e = match cfg.explainer {
        ExplainerKind::Grad => explain_grad(model, x)?,
        ExplainerKind::InputXGrad => explain_input_x_grad(model, x)?,
        ExplainerKind::Smoothgrad => explain_smoothgrad(model, x, cfg.sample_count, cfg.noise_width, &mut rng)?,
        ExplainerKind::IntegratedGradients => {
            let baseline = match cfg.baseline {
                Baseline::Zeros => vec![0.0; x.len()],
                Baseline::DatasetMean => ds.column_means(),
            };
            explain_integrated_gradients(model, x, &baseline, cfg.ig_steps)?
        }
        ExplainerKind::Lime => explain_lime(model, x, cfg.sample_count, cfg.noise_width, &mut rng)?,
        ExplainerKind::Kernelshap => explain_kernelshap(model, x, &ds.column_means(), cfg.sample_count, &mut rng)?,
        ExplainerKind::Random => explain_random(x.len(), &mut rng),
    };
    Explanation::new(e, index, cfg.explainer.id())
}

/// Explains every row of `ds`. Rows are processed in parallel; output order
/// and values do not depend on scheduling.
pub fn explain_dataset(model: &dyn Model, ds: &Dataset, cfg: &ExplainerConfig) -> Result<Vec<Explanation>> {
    cfg.validate()?;
    if cfg.explainer.needs_gradient() {
        model_gradient(model, ds.row(0))?;
    }
    let means = ds.column_means();
    (0..ds.n_rows())
        .into_par_iter()
        .map(|i| {
            if cfg.explainer == ExplainerKind::Kernelshap {
                let mut rng = cfg.rng_for(i);
                let e = explain_kernelshap(model, ds.row(i), &means, cfg.sample_count, &mut rng)?;
                Explanation::new(e, i, cfg.explainer.id())
            } else if cfg.explainer == ExplainerKind::IntegratedGradients && cfg.baseline == Baseline::DatasetMean {
                let e = explain_integrated_gradients(model, ds.row(i), &means, cfg.ig_steps)?;
                Explanation::new(e, i, cfg.explainer.id())
            } else {
                explain(model, ds, i, cfg)
            }
        })
        .collect()
}
