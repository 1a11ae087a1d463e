//! The AXE metric: how accurately a k-NN model restricted to an
//! explanation's top-n features recovers the classifier's own predictions.
//!
//! Only the model's labels on the dataset rows are ever used, so the score is
//! blind to model behaviour off the data. k-NN models are cached by sorted
//! feature subset and shared across datapoints.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{mean, top_n_features, Dataset, Explanation, Matrix, QualityReport};
use crate::error::{Error, Result};
use crate::knn::{KnnModel, NeighborMode};
use crate::models::{predict_labels, Model};

/// Cache activity of one scoring call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxeOutcome {
    pub report: QualityReport,
    pub cache: CacheStats,
}

/// One AXE evaluation context: dataset, model predictions, explanations and
/// the k-NN settings, plus the subset cache.
#[derive(Debug)]
pub struct AxeRun<'a> {
    features: &'a Matrix,
    y_preds: Vec<u8>,
    explanations: &'a [Explanation],
    k: usize,
    mode: NeighborMode,
    cache: Mutex<BTreeMap<Vec<usize>, Arc<KnnModel>>>,
    totals: Mutex<CacheStats>,
}

impl<'a> AxeRun<'a> {
    /// Builds a run whose targets are `model`'s labels on the rows of `ds`.
    pub fn new(model: &dyn Model, ds: &'a Dataset, explanations: &'a [Explanation], k: usize, mode: NeighborMode) -> Result<Self> {
        if model.n_features() != ds.n_features() {
            return Err(Error::Config(format!(
                "model expects {} features, dataset has {}",
                model.n_features(),
                ds.n_features()
            )));
        }
        Self::from_predictions(ds.features(), predict_labels(model, ds), explanations, k, mode)
    }

    /// Builds a run from precomputed model predictions `y_preds`, one per row
    /// of `features`.
    pub fn from_predictions(
        features: &'a Matrix,
        y_preds: Vec<u8>,
        explanations: &'a [Explanation],
        k: usize,
        mode: NeighborMode,
    ) -> Result<Self> {
        if y_preds.len() != features.nrows() {
            return Err(Error::Data(format!(
                "{} predictions for {} rows",
                y_preds.len(),
                features.nrows()
            )));
        }
        if explanations.is_empty() {
            return Err(Error::Data("no explanations to evaluate".into()));
        }
        for e in explanations {
            if e.datapoint_index >= features.nrows() {
                return Err(Error::Bounds(format!(
                    "explanation refers to row {} of {}",
                    e.datapoint_index,
                    features.nrows()
                )));
            }
            if e.len() != features.ncols() {
                return Err(Error::Bounds(format!(
                    "explanation has {} features, dataset has {}",
                    e.len(),
                    features.ncols()
                )));
            }
        }
        if k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        let available = mode.available(features.nrows());
        if k > available {
            return Err(Error::Config(format!(
                "k = {k} exceeds the {available} neighbours available to each query"
            )));
        }
        Ok(Self {
            features,
            y_preds,
            explanations,
            k,
            mode,
            cache: Mutex::new(BTreeMap::new()),
            totals: Mutex::new(CacheStats::default()),
        })
    }

    pub fn y_preds(&self) -> &[u8] {
        &self.y_preds
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> NeighborMode {
        self.mode
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// AXE at top-n: per-point recovery indicators and their mean.
    pub fn axe_score(&self, n: usize) -> Result<AxeOutcome> {
        let subsets: Vec<Vec<usize>> = self
            .explanations
            .iter()
            .map(|e| {
                let mut s = top_n_features(&e.importances, n)?;
                s.sort_unstable();
                Ok(s)
            })
            .collect::<Result<_>>()?;

        let wanted: BTreeSet<&Vec<usize>> = subsets.iter().collect();
        let missing: Vec<Vec<usize>> = {
            let cache = self.cache.lock().expect("cache lock");
            wanted.iter().filter(|s| !cache.contains_key(**s)).map(|s| (*s).clone()).collect()
        };
        let fitted = missing
            .par_iter()
            .map(|s| KnnModel::fit(self.features, &self.y_preds, s, self.k, self.mode).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let models: BTreeMap<&Vec<usize>, Arc<KnnModel>> = {
            let mut cache = self.cache.lock().expect("cache lock");
            for (s, m) in missing.iter().zip(fitted) {
                cache.insert(s.clone(), m);
            }
            wanted.iter().map(|s| (*s, Arc::clone(&cache[*s]))).collect()
        };

        let per_point = self
            .explanations
            .par_iter()
            .zip(subsets.par_iter())
            .map(|(e, s)| {
                let row = e.datapoint_index;
                let pred = models[s].predict_row(row)?;
                Ok(if pred == self.y_preds[row] { 1.0 } else { 0.0 })
            })
            .collect::<Result<Vec<f64>>>()?;

        let stats = CacheStats {
            misses: missing.len(),
            hits: self.explanations.len() - missing.len(),
            size: wanted.len(),
        };
        {
            let mut t = self.totals.lock().expect("stats lock");
            t.hits += stats.hits;
            t.misses += stats.misses;
            t.size = self.cache.lock().expect("cache lock").len();
        }
        Ok(AxeOutcome {
            report: QualityReport::from_per_point("axe", per_point),
            cache: stats,
        })
    }

    /// Mean AXE over every n in `1..=N`, with the full curve. Per-point values
    /// are the per-point means over n.
    pub fn axe_auc(&self) -> Result<AxeOutcome> {
        let n_features = self.n_features();
        let mut curve = Vec::with_capacity(n_features);
        let mut acc = vec![Vec::with_capacity(n_features); self.explanations.len()];
        let mut stats = CacheStats::default();
        for n in 1..=n_features {
            let out = self.axe_score(n)?;
            curve.push((n, out.report.aggregate_q));
            for (a, q) in acc.iter_mut().zip(&out.report.per_point_q) {
                a.push(*q);
            }
            stats.hits += out.cache.hits;
            stats.misses += out.cache.misses;
            stats.size += out.cache.size;
        }
        let per_point: Vec<f64> = acc.iter().map(|v| mean(v)).collect();
        let values: Vec<f64> = curve.iter().map(|c| c.1).collect();
        let mut report = QualityReport::from_per_point("axe", per_point);
        report.aggregate_q = mean(&values);
        report.auc_curve = Some(curve);
        Ok(AxeOutcome { report, cache: stats })
    }

    /// Cumulative cache activity over the life of the run.
    pub fn cache_stats(&self) -> CacheStats {
        *self.totals.lock().expect("stats lock")
    }
}

/// AXE at top-n without any model sharing: a fresh k-NN fit per datapoint.
pub fn axe_score_uncached(
    features: &Matrix,
    y_preds: &[u8],
    explanations: &[Explanation],
    n: usize,
    k: usize,
    mode: NeighborMode,
) -> Result<QualityReport> {
    let per_point = explanations
        .par_iter()
        .map(|e| {
            let mut s = top_n_features(&e.importances, n)?;
            s.sort_unstable();
            let m = KnnModel::fit(features, y_preds, &s, k, mode)?;
            let row = e.datapoint_index;
            Ok(if m.predict_row(row)? == y_preds[row] { 1.0 } else { 0.0 })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(QualityReport::from_per_point("axe", per_point))
}
