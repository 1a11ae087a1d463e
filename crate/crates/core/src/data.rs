//! Shared data model: datasets, explanations, evaluation configuration and
//! quality reports.
//!
//! Every downstream module works on a *standardized* [`Dataset`]: features are
//! z-scored with population statistics, and the original per-column
//! statistics travel with the dataset so values can be mapped back.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Data(format!(
                "matrix data has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Data(format!(
                    "row {i} has {} values, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            data,
            rows: rows.len(),
            cols,
        })
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Gathers the listed columns into a new matrix, in the listed order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for row in self.rows() {
            data.extend(cols.iter().map(|&j| row[j]));
        }
        Matrix {
            data,
            rows: self.rows,
            cols: cols.len(),
        }
    }
}

/// Population mean and standard deviation of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
    /// Set when the column was constant; `std` is then forced to 1.
    pub constant: bool,
}

impl ColumnStats {
    /// Population statistics (divide by ν, not ν − 1).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = pairwise_sum(values) / n;
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let std = (pairwise_sum(&sq) / n).sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            ColumnStats {
                mean,
                std: 1.0,
                constant: true,
            }
        } else {
            ColumnStats {
                mean,
                std,
                constant: false,
            }
        }
    }
}

/// A ν×N table of numeric features with optional binary labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Matrix,
    column_names: Vec<String>,
    labels: Option<Vec<u8>>,
    standardization: Vec<ColumnStats>,
    standardized: bool,
}

impl Dataset {
    pub fn new(features: Matrix, column_names: Vec<String>, labels: Option<Vec<u8>>) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::Data(format!(
                "dataset must have at least one row and one column, got {}x{}",
                features.nrows(),
                features.ncols()
            )));
        }
        if column_names.len() != features.ncols() {
            return Err(Error::Data(format!(
                "{} column names for {} feature columns",
                column_names.len(),
                features.ncols()
            )));
        }
        if let Some(pos) = features.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, column '{}'",
                pos / features.ncols(),
                column_names[pos % features.ncols()]
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != features.nrows() {
                return Err(Error::Data(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    features.nrows()
                )));
            }
            if let Some(i) = labels.iter().position(|&y| y > 1) {
                return Err(Error::Data(format!("label at row {i} is not 0 or 1")));
            }
        }
        let standardization = (0..features.ncols())
            .map(|j| ColumnStats::of(&features.column(j)))
            .collect();
        Ok(Self {
            features,
            column_names,
            labels,
            standardization,
            standardized: false,
        })
    }

    /// Returns the z-scored dataset. The statistics used are retained so the
    /// transform can be inverted; constant columns map to zero.
    pub fn standardize(&self) -> Dataset {
        if self.standardized {
            return self.clone();
        }
        let cols = self.n_features();
        let mut data = self.features.as_slice().to_vec();
        for (idx, v) in data.iter_mut().enumerate() {
            let s = &self.standardization[idx % cols];
            *v = (*v - s.mean) / s.std;
        }
        for (name, s) in self.column_names.iter().zip(&self.standardization) {
            if s.constant {
                log::warn!("column '{name}' is constant; assigned stddev 1");
            }
        }
        Dataset {
            features: Matrix {
                data,
                rows: self.n_rows(),
                cols,
            },
            column_names: self.column_names.clone(),
            labels: self.labels.clone(),
            standardization: self.standardization.clone(),
            standardized: true,
        }
    }

    /// Standardizes with externally supplied statistics, e.g. those stored
    /// alongside a trained model.
    pub fn standardize_with(&self, stats: &[ColumnStats]) -> Result<Dataset> {
        if stats.len() != self.n_features() {
            return Err(Error::Data(format!(
                "{} standardization entries for {} columns",
                stats.len(),
                self.n_features()
            )));
        }
        if stats.iter().any(|s| !(s.std > 0.0 && s.std.is_finite() && s.mean.is_finite())) {
            return Err(Error::Data("standardization statistics must be finite with positive stddev".into()));
        }
        let raw = Dataset {
            standardization: stats.to_vec(),
            standardized: false,
            ..self.clone()
        };
        Ok(raw.standardize())
    }

    /// Maps a standardized row back to original units.
    pub fn inverse_transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.standardization)
            .map(|(v, s)| v * s.std + s.mean)
            .collect()
    }

    /// Maps a row in original units into this dataset's standardized space.
    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.standardization)
            .map(|(v, s)| (v - s.mean) / s.std)
            .collect()
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn standardization(&self) -> &[ColumnStats] {
        &self.standardization
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Column-wise mean of the feature matrix as stored.
    pub fn column_means(&self) -> Vec<f64> {
        (0..self.n_features())
            .map(|j| pairwise_sum(&self.features.column(j)) / self.n_rows() as f64)
            .collect()
    }
}

/// A signed feature-importance vector for one datapoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub importances: Vec<f64>,
    pub datapoint_index: usize,
    pub explainer_id: String,
}

impl Explanation {
    pub fn new(importances: Vec<f64>, datapoint_index: usize, explainer_id: impl Into<String>) -> Result<Self> {
        if importances.is_empty() {
            return Err(Error::Data("explanation has no features".into()));
        }
        if importances.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "explanation for datapoint {datapoint_index} has non-finite entries"
            )));
        }
        Ok(Self {
            importances,
            datapoint_index,
            explainer_id: explainer_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.importances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.importances.is_empty()
    }

    /// One-hot explanation marking a single feature as important.
    pub fn one_hot(n_features: usize, feature: usize, datapoint_index: usize, explainer_id: &str) -> Self {
        let mut importances = vec![0.0; n_features];
        importances[feature] = 1.0;
        Self {
            importances,
            datapoint_index,
            explainer_id: explainer_id.to_string(),
        }
    }
}

/// Reference importance vector used by the ground-truth comparison metrics.
/// For a linear model these are the coefficients without the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthExplanation {
    pub importances: Vec<f64>,
}

impl GroundTruthExplanation {
    pub fn new(importances: Vec<f64>) -> Result<Self> {
        if importances.is_empty() || importances.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("ground truth must be a non-empty finite vector".into()));
        }
        Ok(Self { importances })
    }
}

/// Indices of the `n` largest-magnitude importances, most important first.
/// Equal magnitudes are ordered by ascending feature index.
pub fn top_n_features(importances: &[f64], n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > importances.len() {
        return Err(Error::Bounds(format!(
            "top-n requires 1 <= n <= {}, got {n}",
            importances.len()
        )));
    }
    let mut order = importance_order(importances);
    order.truncate(n);
    Ok(order)
}

/// Full ranking of features by descending |importance| (ties by index).
pub fn importance_order(importances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..importances.len()).collect();
    order.sort_by(|&a, &b| compare_magnitude(importances, a, b));
    order
}

fn compare_magnitude(importances: &[f64], a: usize, b: usize) -> Ordering {
    importances[b]
        .abs()
        .total_cmp(&importances[a].abs())
        .then(a.cmp(&b))
}

/// Hyperparameters for one metric run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub top_n: usize,
    pub k_neighbors: usize,
    pub perturb_width: f64,
    pub perturb_samples: usize,
    pub seed: u64,
    pub aggregate_auc: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            top_n: 1,
            k_neighbors: 5,
            perturb_width: 0.5,
            perturb_samples: 1000,
            seed: 0,
            aggregate_auc: false,
        }
    }
}

impl EvalConfig {
    /// Validates every bound against a dataset with `n_features` columns.
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.top_n == 0 || self.top_n > n_features {
            return Err(Error::Bounds(format!(
                "top_n must be in [1, {n_features}], got {}",
                self.top_n
            )));
        }
        if self.k_neighbors == 0 {
            return Err(Error::Config("k_neighbors must be >= 1".into()));
        }
        if !(self.perturb_width > 0.0 && self.perturb_width.is_finite()) {
            return Err(Error::Config(format!(
                "perturb_width must be positive, got {}",
                self.perturb_width
            )));
        }
        if self.perturb_samples == 0 {
            return Err(Error::Config("perturb_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-datapoint quality values and their aggregate for one metric run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub metric_id: String,
    pub per_point_q: Vec<f64>,
    pub aggregate_q: f64,
    pub auc_curve: Option<Vec<(usize, f64)>>,
}

impl QualityReport {
    pub fn from_per_point(metric_id: impl Into<String>, per_point_q: Vec<f64>) -> Self {
        let aggregate_q = mean(&per_point_q);
        Self {
            metric_id: metric_id.into(),
            per_point_q,
            aggregate_q,
            auc_curve: None,
        }
    }
}

/// Pairwise (cascade) summation with a fixed split order, so results do not
/// depend on how the work that produced `values` was scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Arithmetic mean using [`pairwise_sum`]. Empty input yields NaN.
pub fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(cols: Vec<Vec<f64>>) -> Dataset {
        let rows = cols[0].len();
        let n = cols.len();
        let data = (0..rows).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
        let names = (0..n).map(|j| format!("x{j}")).collect();
        Dataset::new(Matrix::new(rows, n, data).unwrap(), names, None).unwrap()
    }

    #[test]
    fn top_n_examples() {
        assert_eq!(top_n_features(&[0.7, 0.3], 1).unwrap(), vec![0]);
        assert_eq!(top_n_features(&[-0.9, 0.1, 0.5], 2).unwrap(), vec![0, 2]);
        assert_eq!(top_n_features(&[0.4, -0.4], 1).unwrap(), vec![0]);
        assert!(matches!(top_n_features(&[0.4, -0.4], 0), Err(Error::Bounds(_))));
        assert!(matches!(top_n_features(&[0.4, -0.4], 3), Err(Error::Bounds(_))));
    }

    #[test]
    fn tie_break_matches_stable_sort_oracle() {
        // A stable sort on descending magnitude preserves index order for ties.
        let e: [f64; 6] = [0.4, -0.4, 0.1, 0.4, -0.1, 0.0];
        let mut oracle: Vec<usize> = (0..e.len()).collect();
        oracle.sort_by(|&a, &b| e[b].abs().partial_cmp(&e[a].abs()).unwrap());
        assert_eq!(importance_order(&e), oracle);
        assert_eq!(top_n_features(&e, 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn standardize_two_values() {
        let s = ds(vec![vec![1.0, 3.0]]).standardize();
        assert_eq!(s.row(0), &[-1.0]);
        assert_eq!(s.row(1), &[1.0]);
        // independent oracle for the population statistics
        let m = (1.0 + 3.0) / 2.0;
        let sd = (((1.0f64 - m).powi(2) + (3.0f64 - m).powi(2)) / 2.0).sqrt();
        assert_eq!(s.standardization()[0].mean, m);
        assert_eq!(s.standardization()[0].std, sd);
        assert_eq!(s.inverse_transform(s.row(1)), vec![3.0]);
    }

    #[test]
    fn constant_column_flagged() {
        let s = ds(vec![vec![5.0, 5.0, 5.0], vec![1.0, 2.0, 3.0]]).standardize();
        assert!(s.standardization()[0].constant);
        assert_eq!(s.standardization()[0].std, 1.0);
        assert!((0..3).all(|i| s.row(i)[0] == 0.0));
        assert!(!s.standardization()[1].constant);
    }

    #[test]
    fn standardize_is_idempotent_on_standardized_values() {
        let raw = ds(vec![vec![0.3, -1.2, 4.4, 2.0, 0.0, -0.7]]).standardize();
        let again = ds(vec![raw.features().column(0)]).standardize();
        for i in 0..raw.n_rows() {
            assert!((raw.row(i)[0] - again.row(i)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn external_statistics_reproduce_own_standardization() {
        let raw = ds(vec![vec![0.3, -1.2, 4.4], vec![2.0, 2.0, 1.0]]);
        let own = raw.standardize();
        let ext = raw.standardize_with(own.standardization()).unwrap();
        assert_eq!(own.features(), ext.features());
        let shifted = [ColumnStats { mean: 1.0, std: 2.0, constant: false }; 2];
        assert_eq!(raw.standardize_with(&shifted).unwrap().row(0), &[-0.35, 0.5]);
        assert!(raw.standardize_with(&shifted[..1]).is_err());
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(Dataset::new(Matrix::new(0, 1, vec![]).unwrap(), vec!["a".into()], None).is_err());
        let m = Matrix::new(2, 1, vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(Dataset::new(m, vec!["a".into()], None), Err(Error::Data(_))));
        let m = Matrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(Dataset::new(m, vec!["a".into()], Some(vec![0, 2])).is_err());
    }

    #[test]
    fn eval_config_bounds() {
        let cfg = EvalConfig::default();
        assert!(cfg.validate(3).is_ok());
        assert!(EvalConfig { top_n: 4, ..cfg.clone() }.validate(3).is_err());
        assert!(EvalConfig { k_neighbors: 0, ..cfg.clone() }.validate(3).is_err());
        assert!(EvalConfig { perturb_width: 0.0, ..cfg.clone() }.validate(3).is_err());
        assert!(EvalConfig { perturb_samples: 0, ..cfg }.validate(3).is_err());
    }

    #[test]
    fn report_aggregate_is_mean() {
        let q: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let r = QualityReport::from_per_point("x", q.clone());
        let naive: f64 = q.iter().sum::<f64>() / q.len() as f64;
        assert!((r.aggregate_q - naive).abs() < 1e-12);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn top_n_invariant_under_positive_scaling(
                e in prop::collection::vec(-10.0f64..10.0, 1..12),
                c in 1e-3f64..1e3,
                n_frac in 0.0f64..1.0,
            ) {
                let n = 1 + ((e.len() - 1) as f64 * n_frac) as usize;
                let scaled: Vec<f64> = e.iter().map(|v| v * c).collect();
                // scaling may merge or split near-ties only through rounding;
                // compare on values whose magnitudes are well separated
                let mut mags: Vec<f64> = e.iter().map(|v| v.abs()).collect();
                mags.sort_by(f64::total_cmp);
                prop_assume!(mags.windows(2).all(|w| w[1] - w[0] > 1e-9 || w[1] == w[0]));
                prop_assert_eq!(top_n_features(&e, n).unwrap(), top_n_features(&scaled, n).unwrap());
            }
        }
    }
}
