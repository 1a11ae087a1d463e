//! Binary classifiers: logistic regression, a one-hidden-layer MLP, simple
//! threshold rules, and the scaffolded adversarial model.
//!
//! All models consume standardized feature vectors. `score` is a value in
//! `[0, 1]`; the hard label is `score >= 0.5`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnStats, Dataset, Matrix};
use crate::error::{Error, Result};
use crate::knn::{KnnModel, NeighborMode};

/// Classification threshold on the continuous score.
pub const LABEL_THRESHOLD: f64 = 0.5;

/// A binary classifier over `n_features()`-dimensional inputs.
pub trait Model: Send + Sync {
    fn n_features(&self) -> usize;

    /// Continuous output in `[0, 1]`.
    fn score(&self, x: &[f64]) -> f64;

    fn label(&self, x: &[f64]) -> u8 {
        u8::from(self.score(x) >= LABEL_THRESHOLD)
    }

    /// Analytic gradient of [`Model::score`], when the model has one.
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

impl<M: Model + ?Sized> Model for &M {
    fn n_features(&self) -> usize {
        (**self).n_features()
    }
    fn score(&self, x: &[f64]) -> f64 {
        (**self).score(x)
    }
    fn label(&self, x: &[f64]) -> u8 {
        (**self).label(x)
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        (**self).gradient(x)
    }
}

impl<M: Model + ?Sized> Model for Box<M> {
    fn n_features(&self) -> usize {
        (**self).n_features()
    }
    fn score(&self, x: &[f64]) -> f64 {
        (**self).score(x)
    }
    fn label(&self, x: &[f64]) -> u8 {
        (**self).label(x)
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        (**self).gradient(x)
    }
}

/// Gradient of the model score at `x`, or a capability error.
pub fn model_gradient(model: &dyn Model, x: &[f64]) -> Result<Vec<f64>> {
    model
        .gradient(x)
        .ok_or_else(|| Error::Capability("model has no analytic gradient".into()))
}

/// Hard labels of `model` on every row of `ds` (the `Y_preds` vector).
pub fn predict_labels(model: &dyn Model, ds: &Dataset) -> Vec<u8> {
    (0..ds.n_rows())
        .into_par_iter()
        .map(|i| model.label(ds.row(i)))
        .collect()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression: `score = sigmoid(intercept + coefficients . x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn new(coefficients: Vec<f64>, intercept: f64) -> Result<Self> {
        if coefficients.is_empty() || coefficients.iter().chain([&intercept]).any(|v| !v.is_finite()) {
            return Err(Error::Config("linear model parameters must be finite and non-empty".into()));
        }
        Ok(Self {
            coefficients,
            intercept,
        })
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

impl Model for LinearModel {
    fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let s = self.score(x);
        let ds = s * (1.0 - s);
        Some(self.coefficients.iter().map(|b| ds * b).collect())
    }
}

/// Returns a constant score everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantModel {
    pub value: f64,
    pub n_features: usize,
}

impl Model for ConstantModel {
    fn n_features(&self) -> usize {
        self.n_features
    }
    fn score(&self, _x: &[f64]) -> f64 {
        self.value
    }
    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; self.n_features])
    }
}

/// Hard rule over single-feature thresholds: outputs 1 when an odd number of
/// the listed `x[feature] > threshold` tests hold. With one rule this is a
/// plain threshold classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub rules: Vec<(usize, f64)>,
    pub n_features: usize,
}

impl ThresholdModel {
    pub fn single(feature: usize, threshold: f64, n_features: usize) -> Self {
        Self {
            rules: vec![(feature, threshold)],
            n_features,
        }
    }
}

impl Model for ThresholdModel {
    fn n_features(&self) -> usize {
        self.n_features
    }
    fn score(&self, x: &[f64]) -> f64 {
        let odd = self.rules.iter().filter(|&&(f, t)| x[f] > t).count() % 2 == 1;
        if odd {
            1.0
        } else {
            0.0
        }
    }
}

fn check_labels(ds: &Dataset, labels: &[u8]) -> Result<()> {
    if labels.len() != ds.n_rows() {
        return Err(Error::Fit(format!(
            "{} labels for {} rows",
            labels.len(),
            ds.n_rows()
        )));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Fit("labels must be 0 or 1".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Fit("labels contain a single class".into()));
    }
    Ok(())
}

/// L2 penalty used by both built-in fitters.
pub const L2_PENALTY: f64 = 1e-4;

struct LogisticObjective<'a> {
    x: &'a Matrix,
    y: &'a [u8],
}

impl LogisticObjective<'_> {
    /// Mean log-loss plus `L2_PENALTY / 2 * |beta|^2`; `params` is
    /// `[beta_1..beta_N, beta_0]`.
    fn value_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let n = self.x.ncols();
        let nu = self.x.nrows() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; n + 1];
        for (row, &y) in self.x.rows().zip(self.y) {
            let z = params[n] + row.iter().zip(params).map(|(a, b)| a * b).sum::<f64>();
            // log(1 + e^z) - y z, computed stably
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            loss += softplus - f64::from(y) * z;
            let r = sigmoid(z) - f64::from(y);
            for (g, v) in grad.iter_mut().zip(row) {
                *g += r * v;
            }
            grad[n] += r;
        }
        loss /= nu;
        for g in &mut grad {
            *g /= nu;
        }
        for j in 0..n {
            loss += 0.5 * L2_PENALTY * params[j] * params[j];
            grad[j] += L2_PENALTY * params[j];
        }
        (loss, grad)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Fits L2-regularized logistic regression by gradient descent with
/// backtracking line search. Stops at gradient norm `<= 1e-6` or after
/// 10 000 iterations.
pub fn fit_logistic(ds: &Dataset, labels: &[u8]) -> Result<LinearModel> {
    check_labels(ds, labels)?;
    let obj = LogisticObjective {
        x: ds.features(),
        y: labels,
    };
    let n = ds.n_features();
    let mut params = vec![0.0; n + 1];
    let (mut loss, mut grad) = obj.value_and_grad(&params);
    let mut step = 1.0;
    for _ in 0..10_000 {
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2.sqrt() <= 1e-6 {
            break;
        }
        step *= 2.0;
        loop {
            let trial: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - step * g).collect();
            let (tl, tg) = obj.value_and_grad(&trial);
            if tl <= loss - 0.5 * step * gnorm2 || step < 1e-12 {
                params = trial;
                loss = tl;
                grad = tg;
                break;
            }
            step *= 0.5;
        }
    }
    let intercept = params.pop().unwrap();
    LinearModel::new(params, intercept)
}

/// One-hidden-layer network: `N -> H (tanh) -> 1 (sigmoid)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub n_inputs: usize,
    pub hidden: usize,
    /// Row-major `hidden x n_inputs`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpModel {
    /// Random initialization with scaled Gaussian weights and zero biases.
    pub fn init(n_inputs: usize, hidden: usize, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("hidden layer width must be >= 1".into()));
        }
        if n_inputs == 0 {
            return Err(Error::Config("MLP needs at least one input".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, 1.0 / (n_inputs as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).unwrap();
        Ok(Self {
            n_inputs,
            hidden,
            w1: (0..hidden * n_inputs).map(|_| n1.sample(&mut rng)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| n2.sample(&mut rng)).collect(),
            b2: 0.0,
        })
    }

    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|h| {
                let w = &self.w1[h * self.n_inputs..(h + 1) * self.n_inputs];
                (self.b1[h] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).tanh()
            })
            .collect()
    }

    fn output_logit(&self, act: &[f64]) -> f64 {
        self.b2 + self.w2.iter().zip(act).map(|(a, b)| a * b).sum::<f64>()
    }

    fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.extend(&self.w1);
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.push(self.b2);
        p
    }

    fn set_params(&mut self, p: &[f64]) {
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.b1.len());
        let (c, d) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = d[0];
    }

    /// Regularized mean log-loss gradient with respect to the flattened
    /// parameters (same layout as `params`).
    fn loss_gradient(&self, x: &Matrix, y: &[u8]) -> Vec<f64> {
        let (nh, ni) = (self.hidden, self.n_inputs);
        let mut g = vec![0.0; self.n_params()];
        for (row, &t) in x.rows().zip(y) {
            let act = self.hidden_activations(row);
            let r = sigmoid(self.output_logit(&act)) - f64::from(t);
            for h in 0..nh {
                let back = r * self.w2[h] * (1.0 - act[h] * act[h]);
                let gw = &mut g[h * ni..(h + 1) * ni];
                for (gv, xv) in gw.iter_mut().zip(row) {
                    *gv += back * xv;
                }
                g[nh * ni + h] += back;
                g[nh * ni + nh + h] += r * act[h];
            }
            g[nh * ni + 2 * nh] += r;
        }
        let nu = x.nrows() as f64;
        for v in &mut g {
            *v /= nu;
        }
        for (gv, w) in g[..nh * ni].iter_mut().zip(&self.w1) {
            *gv += L2_PENALTY * w;
        }
        for (gv, w) in g[nh * ni + nh..nh * ni + 2 * nh].iter_mut().zip(&self.w2) {
            *gv += L2_PENALTY * w;
        }
        g
    }
}

impl Model for MlpModel {
    fn n_features(&self) -> usize {
        self.n_inputs
    }

    fn score(&self, x: &[f64]) -> f64 {
        sigmoid(self.output_logit(&self.hidden_activations(x)))
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let act = self.hidden_activations(x);
        let s = sigmoid(self.output_logit(&act));
        let ds = s * (1.0 - s);
        let mut g = vec![0.0; self.n_inputs];
        for h in 0..self.hidden {
            let c = ds * self.w2[h] * (1.0 - act[h] * act[h]);
            let w = &self.w1[h * self.n_inputs..(h + 1) * self.n_inputs];
            for (gv, wv) in g.iter_mut().zip(w) {
                *gv += c * wv;
            }
        }
        Some(g)
    }
}

/// Training schedule for [`fit_mlp_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub seed: u64,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            seed: 0,
            iterations: 3000,
            learning_rate: 0.05,
        }
    }
}

/// Full-batch Adam on the L2-regularized log-loss. Deterministic for a
/// given seed.
pub fn fit_mlp(ds: &Dataset, labels: &[u8], hidden: usize, seed: u64) -> Result<MlpModel> {
    fit_mlp_with(
        ds,
        labels,
        &MlpConfig {
            hidden,
            seed,
            ..MlpConfig::default()
        },
    )
}

pub fn fit_mlp_with(ds: &Dataset, labels: &[u8], cfg: &MlpConfig) -> Result<MlpModel> {
    check_labels(ds, labels)?;
    let mut model = MlpModel::init(ds.n_features(), cfg.hidden, cfg.seed)?;
    let mut p = model.params();
    let mut m = vec![0.0; p.len()];
    let mut v = vec![0.0; p.len()];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    for t in 1..=cfg.iterations {
        let g = model.loss_gradient(ds.features(), labels);
        if norm(&g) <= 1e-6 {
            break;
        }
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
        model.set_params(&p);
    }
    Ok(model)
}

/// Either built-in trainable model.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinModel {
    Logistic(LinearModel),
    Mlp(MlpModel),
}

impl BuiltinModel {
    pub fn kind(&self) -> &'static str {
        match self {
            BuiltinModel::Logistic(_) => "logistic",
            BuiltinModel::Mlp(_) => "mlp",
        }
    }

    /// Coefficients usable as a ground-truth explanation (linear models only).
    pub fn coefficients(&self) -> Option<&[f64]> {
        match self {
            BuiltinModel::Logistic(m) => Some(&m.coefficients),
            BuiltinModel::Mlp(_) => None,
        }
    }
}

impl Model for BuiltinModel {
    fn n_features(&self) -> usize {
        match self {
            BuiltinModel::Logistic(m) => m.n_features(),
            BuiltinModel::Mlp(m) => m.n_features(),
        }
    }
    fn score(&self, x: &[f64]) -> f64 {
        match self {
            BuiltinModel::Logistic(m) => m.score(x),
            BuiltinModel::Mlp(m) => m.score(x),
        }
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        match self {
            BuiltinModel::Logistic(m) => m.gradient(x),
            BuiltinModel::Mlp(m) => m.gradient(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ModelParameters {
    Logistic(LinearModel),
    Mlp(MlpModel),
}

/// JSON persistence form of a built-in model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(rename = "type")]
    pub kind: String,
    pub column_names: Vec<String>,
    parameters: ModelParameters,
    pub standardization: Vec<ColumnStats>,
}

impl ModelDocument {
    pub fn new(model: &BuiltinModel, ds: &Dataset) -> Self {
        let parameters = match model {
            BuiltinModel::Logistic(m) => ModelParameters::Logistic(m.clone()),
            BuiltinModel::Mlp(m) => ModelParameters::Mlp(m.clone()),
        };
        Self {
            kind: model.kind().to_string(),
            column_names: ds.column_names().to_vec(),
            parameters,
            standardization: ds.standardization().to_vec(),
        }
    }

    pub fn model(&self) -> Result<BuiltinModel> {
        match (self.kind.as_str(), &self.parameters) {
            ("logistic", ModelParameters::Logistic(m)) => Ok(BuiltinModel::Logistic(m.clone())),
            ("mlp", ModelParameters::Mlp(m)) => Ok(BuiltinModel::Mlp(m.clone())),
            (kind, _) => Err(Error::Data(format!("model document of type '{kind}' has mismatched parameters"))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Perturbation family the scaffold's detector learns to recognize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    /// Gaussian noise on every feature (targets LIME-style explainers).
    Lime,
    /// Random coalitions of features replaced by the dataset mean (targets
    /// SHAP-style explainers).
    Shap,
}

impl AttackKind {
    pub fn model_name(self) -> &'static str {
        match self {
            AttackKind::Lime => "m_L",
            AttackKind::Shap => "m_S",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaffoldConfig {
    pub attack: AttackKind,
    /// Gaussian width for LIME-style synthetic points (standardized units).
    pub perturb_width: f64,
    /// Synthetic points generated per real row for detector training.
    pub synthetic_per_row: usize,
    pub detector_k: usize,
    pub seed: u64,
}

impl Default for ScaffoldConfig {
    fn default() -> Self {
        Self::for_attack(AttackKind::Lime)
    }
}

impl ScaffoldConfig {
    /// Defaults per attack. Gaussian perturbations stay close to their parent
    /// row, so the LIME detector needs more synthetic points per row to keep
    /// both routing accuracies above 95%; mean-substituted points are far
    /// easier to separate and one per row suffices.
    pub fn for_attack(attack: AttackKind) -> Self {
        Self {
            attack,
            perturb_width: 0.5,
            synthetic_per_row: match attack {
                AttackKind::Lime => 10,
                AttackKind::Shap => 1,
            },
            detector_k: 5,
            seed: 0,
        }
    }
}

/// Build-time detector accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaffoldDiagnostics {
    /// Fraction of dataset rows the detector routes to the biased model.
    pub real_routed_real: f64,
    /// Fraction of fresh synthetic points routed to the innocuous model.
    pub synthetic_routed_synthetic: f64,
    /// Real-row votes among the detector's k neighbours needed to call a
    /// point real.
    pub min_real_votes: usize,
}

/// Adversarial model that behaves like `biased` on data-like inputs and like
/// `innocuous` on inputs its detector flags as synthetic.
#[derive(Debug, Clone)]
pub struct ScaffoldedModel {
    pub biased: ThresholdModel,
    pub innocuous: ThresholdModel,
    detector: KnnModel,
    min_real_votes: usize,
    column_means: Vec<f64>,
    config: ScaffoldConfig,
    pub diagnostics: ScaffoldDiagnostics,
}

/// Split point for a single-feature rule: the median, moved up to the midpoint
/// of the two largest distinct values when no value exceeds the median (as
/// happens with skewed binary columns).
pub fn split_threshold(values: &[f64]) -> Result<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 || v[0] == v[n - 1] {
        return Err(Error::Data("cannot split a constant column".into()));
    }
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    if v[n - 1] > median {
        return Ok(median);
    }
    let max = v[n - 1];
    let below = v.iter().rev().find(|&&x| x < max).copied().unwrap();
    Ok(0.5 * (below + max))
}

impl ScaffoldedModel {
    /// Draws one synthetic point derived from `row`.
    pub fn synthetic_point<R: Rng>(
        attack: AttackKind,
        row: &[f64],
        column_means: &[f64],
        width: f64,
        rng: &mut R,
    ) -> Vec<f64> {
        match attack {
            AttackKind::Lime => {
                let noise = Normal::new(0.0, width).unwrap();
                row.iter().map(|v| v + noise.sample(rng)).collect()
            }
            AttackKind::Shap => {
                let n = row.len();
                let replaced = if n > 1 { rng.random_range(1..n) } else { 1 };
                let mut idx: Vec<usize> = (0..n).collect();
                for i in 0..replaced {
                    let j = rng.random_range(i..n);
                    idx.swap(i, j);
                }
                let mut out = row.to_vec();
                for &j in &idx[..replaced] {
                    out[j] = column_means[j];
                }
                out
            }
        }
    }

    pub fn config(&self) -> &ScaffoldConfig {
        &self.config
    }

    /// True when the detector considers `x` a real datapoint.
    pub fn is_real(&self, x: &[f64]) -> bool {
        self.detector.positive_neighbors_point(x) >= self.min_real_votes
    }
}

/// Builds a scaffolded model that discriminates on `protected` but presents
/// `foils` (one or two features) to perturbation-based explainers.
pub fn build_scaffold(ds: &Dataset, protected: usize, foils: &[usize], cfg: &ScaffoldConfig) -> Result<ScaffoldedModel> {
    let n = ds.n_features();
    if protected >= n || foils.iter().any(|&f| f >= n) {
        return Err(Error::Bounds("scaffold feature index out of range".into()));
    }
    if foils.is_empty() || foils.len() > 2 {
        return Err(Error::Config(format!("scaffold needs one or two foils, got {}", foils.len())));
    }
    if foils.contains(&protected) {
        return Err(Error::Config("protected feature cannot also be a foil".into()));
    }
    if foils.len() == 2 && foils[0] == foils[1] {
        return Err(Error::Config("foil features must be distinct".into()));
    }
    if !(cfg.perturb_width > 0.0) || cfg.synthetic_per_row == 0 || cfg.detector_k == 0 {
        return Err(Error::Config("invalid scaffold configuration".into()));
    }
    let protected_col = ds.features().column(protected);
    let biased = ThresholdModel::single(
        protected,
        split_threshold(&protected_col).map_err(|_| Error::Data("protected column is constant".into()))?,
        n,
    );
    let mut rules = Vec::new();
    for &f in foils {
        rules.push((
            f,
            split_threshold(&ds.features().column(f)).map_err(|_| Error::Data("foil column is constant".into()))?,
        ));
    }
    let innocuous = ThresholdModel { rules, n_features: n };

    let column_means = ds.column_means();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let nu = ds.n_rows();
    let mut data = ds.features().as_slice().to_vec();
    for _ in 0..cfg.synthetic_per_row {
        for i in 0..nu {
            data.extend(ScaffoldedModel::synthetic_point(
                cfg.attack,
                ds.row(i),
                &column_means,
                cfg.perturb_width,
                &mut rng,
            ));
        }
    }
    let total = nu * (1 + cfg.synthetic_per_row);
    let mut targets = vec![1u8; nu];
    targets.resize(total, 0);
    let train = Matrix::new(total, n, data)?;
    let all: Vec<usize> = (0..n).collect();
    let detector = KnnModel::fit(&train, &targets, &all, cfg.detector_k, NeighborMode::IncludeSelf)?;

    // Synthetic points outnumber real rows, so a plain majority vote can
    // route real rows away from the biased model. Require the largest number
    // of real-row votes that still keeps 95% of the rows routed real.
    let real_votes: Vec<usize> = (0..nu)
        .into_par_iter()
        .map(|i| detector.positive_neighbors_point(ds.row(i)))
        .collect();
    let min_real_votes = (1..=cfg.detector_k)
        .rev()
        .find(|&m| real_votes.iter().filter(|&&v| v >= m).count() as f64 >= 0.95 * nu as f64)
        .unwrap_or(1);
    let real_hits = real_votes.iter().filter(|&&v| v >= min_real_votes).count();
    let fresh: Vec<Vec<f64>> = (0..nu)
        .map(|i| ScaffoldedModel::synthetic_point(cfg.attack, ds.row(i), &column_means, cfg.perturb_width, &mut rng))
        .collect();
    let synth_hits = fresh
        .par_iter()
        .filter(|p| detector.positive_neighbors_point(p) < min_real_votes)
        .count();
    let diagnostics = ScaffoldDiagnostics {
        real_routed_real: real_hits as f64 / nu as f64,
        synthetic_routed_synthetic: synth_hits as f64 / nu as f64,
        min_real_votes,
    };
    log::info!(
        "scaffold detector: {:.3} of real rows routed real, {:.3} of synthetic routed synthetic",
        diagnostics.real_routed_real,
        diagnostics.synthetic_routed_synthetic
    );
    Ok(ScaffoldedModel {
        biased,
        innocuous,
        detector,
        min_real_votes,
        column_means,
        config: cfg.clone(),
        diagnostics,
    })
}

impl Model for ScaffoldedModel {
    fn n_features(&self) -> usize {
        self.biased.n_features
    }

    fn score(&self, x: &[f64]) -> f64 {
        if self.is_real(x) {
            self.biased.score(x)
        } else {
            self.innocuous.score(x)
        }
    }
}

impl ScaffoldedModel {
    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(rows: Vec<Vec<f64>>) -> Dataset {
        let n = rows[0].len();
        let names = (0..n).map(|j| format!("x{j}")).collect();
        Dataset::new(Matrix::from_rows(&rows).unwrap(), names, None).unwrap()
    }

    fn finite_diff(m: &dyn Model, x: &[f64]) -> Vec<f64> {
        let h = 1e-4;
        (0..x.len())
            .map(|j| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[j] += h;
                b[j] -= h;
                (m.score(&a) - m.score(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn blobs(seed: u64, n: usize, sep: f64) -> (Dataset, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = if i % 2 == 0 { sep } else { -sep };
            rows.push(vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)]);
            y.push(u8::from(i % 2 == 0));
        }
        (dataset(rows), y)
    }

    #[test]
    fn logistic_separable_blobs() {
        let (train, y) = blobs(1, 400, 2.0);
        let m = fit_logistic(&train, &y).unwrap();
        let (test, yt) = blobs(2, 400, 2.0);
        let acc = |d: &Dataset, y: &[u8]| {
            (0..d.n_rows()).filter(|&i| m.label(d.row(i)) == y[i]).count() as f64 / d.n_rows() as f64
        };
        assert!(acc(&train, &y) >= 0.99);
        assert!(acc(&test, &yt) >= 0.99);
    }

    #[test]
    fn logistic_rejects_single_class() {
        let (d, _) = blobs(1, 10, 2.0);
        assert!(matches!(fit_logistic(&d, &[1; 10]), Err(Error::Fit(_))));
    }

    #[test]
    fn logistic_symmetric_data_has_no_off_axis_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..100 {
            let a: f64 = rng.random_range(0.1..2.0);
            let b: f64 = rng.random_range(-2.0..2.0);
            for (sa, sb) in [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
                rows.push(vec![sa * a, sb * b]);
                y.push(u8::from(sa > 0.0));
            }
        }
        let m = fit_logistic(&dataset(rows), &y).unwrap();
        assert!(m.coefficients[1].abs() <= 0.05 * m.coefficients[0].abs());
    }

    fn xor_data() -> (Dataset, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..400 {
            let (a, b) = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)][i % 4];
            rows.push(vec![a + noise.sample(&mut rng), b + noise.sample(&mut rng)]);
            y.push(u8::from(a * b > 0.0));
        }
        (dataset(rows), y)
    }

    #[test]
    fn mlp_learns_xor_and_logistic_cannot() {
        let (d, y) = xor_data();
        let acc = |m: &dyn Model| (0..d.n_rows()).filter(|&i| m.label(d.row(i)) == y[i]).count() as f64 / d.n_rows() as f64;
        let mlp = fit_mlp(&d, &y, 16, 1).unwrap();
        assert!(acc(&mlp) >= 0.95, "mlp accuracy {}", acc(&mlp));
        let lr = fit_logistic(&d, &y).unwrap();
        assert!(acc(&lr) <= 0.6, "lr accuracy {}", acc(&lr));
    }

    #[test]
    fn mlp_is_deterministic_and_rejects_zero_width() {
        let (d, y) = xor_data();
        let cfg = MlpConfig {
            hidden: 4,
            seed: 3,
            iterations: 50,
            ..MlpConfig::default()
        };
        let a = fit_mlp_with(&d, &y, &cfg).unwrap();
        let b = fit_mlp_with(&d, &y, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(fit_mlp(&d, &y, 0, 1).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let lr = LinearModel::new(vec![0.8, -1.3, 0.2], 0.1).unwrap();
        let mlp = MlpModel::init(3, 16, 5).unwrap();
        let unit = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| unit.sample(&mut rng)).collect();
            for m in [&lr as &dyn Model, &mlp] {
                let g = model_gradient(m, &x).unwrap();
                assert!(max_abs_diff(&g, &finite_diff(m, &x)) <= 1e-4);
                assert_eq!(m.label(&x), u8::from(m.score(&x) >= 0.5));
            }
        }
        let lr_grad = lr.gradient(&[0.0, 0.0, 0.0]).unwrap();
        let s = lr.score(&[0.0, 0.0, 0.0]);
        for (g, b) in lr_grad.iter().zip(&lr.coefficients) {
            assert!((g - s * (1.0 - s) * b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_model_gradient_is_zero() {
        let c = ConstantModel { value: 0.3, n_features: 2 };
        assert_eq!(model_gradient(&c, &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        let t = ThresholdModel::single(0, 0.0, 2);
        assert!(matches!(model_gradient(&t, &[1.0, 2.0]), Err(Error::Capability(_))));
    }

    #[test]
    fn model_document_round_trip_is_bit_exact() {
        let (d, y) = xor_data();
        let mlp = fit_mlp_with(&d, &y, &MlpConfig { hidden: 3, iterations: 20, ..MlpConfig::default() }).unwrap();
        for model in [BuiltinModel::Mlp(mlp), BuiltinModel::Logistic(fit_logistic(&d, &y).unwrap())] {
            let doc = ModelDocument::new(&model, &d);
            let back = ModelDocument::from_json(&doc.to_json().unwrap()).unwrap();
            assert_eq!(back.model().unwrap(), model);
            assert_eq!(back, doc);
        }
    }

    #[test]
    fn threshold_and_xor_rules() {
        let t = ThresholdModel {
            rules: vec![(0, 0.0), (1, 0.0)],
            n_features: 2,
        };
        assert_eq!(t.label(&[1.0, -1.0]), 1);
        assert_eq!(t.label(&[1.0, 1.0]), 0);
        assert_eq!(t.label(&[-1.0, -1.0]), 0);
    }

    #[test]
    fn split_threshold_handles_binary_columns() {
        assert_eq!(split_threshold(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        // median equals the max for a mostly-ones binary column
        assert_eq!(split_threshold(&[0.0, 1.0, 1.0, 1.0]).unwrap(), 0.5);
        assert!(split_threshold(&[4.0, 4.0]).is_err());
    }

    fn scaffold_data(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..600)
            .map(|_| {
                let p = f64::from(rng.random_range(0..=1u8));
                let f1: f64 = rng.random_range(0.0..1.0);
                let f2 = f64::from(rng.random_range(0..=1u8));
                vec![p, f1, f2, p + 0.3 * rng.random_range(-1.0f64..1.0)]
            })
            .collect();
        dataset(rows).standardize()
    }

    #[test]
    fn scaffold_routes_real_and_synthetic_inputs() {
        let ds = scaffold_data(21);
        let cfg = ScaffoldConfig { seed: 2, ..ScaffoldConfig::default() };
        let m = build_scaffold(&ds, 0, &[1], &cfg).unwrap();
        let agree_biased = (0..ds.n_rows())
            .filter(|&i| m.label(ds.row(i)) == m.biased.label(ds.row(i)))
            .count() as f64
            / ds.n_rows() as f64;
        assert!(agree_biased >= 0.95, "{agree_biased}");
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let means = ds.column_means();
        let agree_innocuous = (0..ds.n_rows())
            .filter(|&i| {
                let p = ScaffoldedModel::synthetic_point(AttackKind::Lime, ds.row(i), &means, 0.5, &mut rng);
                m.label(&p) == m.innocuous.label(&p)
            })
            .count() as f64
            / ds.n_rows() as f64;
        assert!(agree_innocuous >= 0.90, "{agree_innocuous}");
        assert!(m.diagnostics.real_routed_real >= 0.95);
    }

    #[test]
    fn scaffold_rejects_bad_features() {
        let ds = scaffold_data(1);
        let cfg = ScaffoldConfig::default();
        assert!(build_scaffold(&ds, 0, &[0], &cfg).is_err());
        assert!(build_scaffold(&ds, 0, &[], &cfg).is_err());
        assert!(build_scaffold(&ds, 9, &[1], &cfg).is_err());
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, i as f64]).collect();
        assert!(matches!(build_scaffold(&dataset(rows), 0, &[1], &cfg), Err(Error::Data(_))));
    }

    #[test]
    fn scaffold_on_rows_depends_only_on_protected() {
        let ds = scaffold_data(5);
        let m = build_scaffold(&ds, 0, &[1, 2], &ScaffoldConfig::default()).unwrap();
        // swapping a non-protected value for another observed one keeps the
        // label whenever the detector still calls the point real
        let other = ds.row(7).to_vec();
        for i in 0..100 {
            let mut x = ds.row(i).to_vec();
            x[1] = other[1];
            if m.is_real(&x) {
                assert_eq!(m.label(&x), m.biased.label(ds.row(i)));
            }
        }
    }
}
