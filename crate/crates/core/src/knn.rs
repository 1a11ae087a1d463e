//! Exact k-nearest-neighbour classification over feature subsets.
//!
//! Distances are squared Euclidean over the selected (standardized) columns,
//! accumulated in subset order. Candidates are ranked by `(distance, row)` so
//! ties always resolve toward the lower row index. A neighbour mean of exactly
//! 0.5 predicts 1.
//!
//! Two query paths exist: a brute-force scan with selection, and a sweep
//! along the first subset coordinate that prunes candidates whose distance on
//! that axis alone already exceeds the current k-th best. Both return the same
//! neighbour set.

use std::collections::BinaryHeap;

use crate::data::Matrix;
use crate::error::{Error, Result};

/// Whether a training row may appear in its own neighbour set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborMode {
    /// The query row is excluded from its own neighbours.
    #[default]
    LeaveOneOut,
    /// The query row is a candidate neighbour of itself (at distance 0).
    IncludeSelf,
}

impl NeighborMode {
    /// Number of training rows a row query can draw from.
    pub fn available(self, n_rows: usize) -> usize {
        match self {
            NeighborMode::LeaveOneOut => n_rows.saturating_sub(1),
            NeighborMode::IncludeSelf => n_rows,
        }
    }
}

/// A fitted k-NN classifier over one ordered feature subset.
#[derive(Debug, Clone)]
pub struct KnnModel {
    subset: Vec<usize>,
    train: Matrix,
    targets: Vec<u8>,
    k: usize,
    mode: NeighborMode,
    /// Row indices ordered by the first subset coordinate, with that
    /// coordinate alongside.
    sweep: Vec<(f64, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    row: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.row.cmp(&other.row))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

impl KnnModel {
    /// Fits a model on the `subset` columns of `features` with the given
    /// binary `targets`.
    pub fn fit(features: &Matrix, targets: &[u8], subset: &[usize], k: usize, mode: NeighborMode) -> Result<Self> {
        if subset.is_empty() {
            return Err(Error::Config("k-NN feature subset is empty".into()));
        }
        let mut seen = vec![false; features.ncols()];
        for &j in subset {
            if j >= features.ncols() {
                return Err(Error::Bounds(format!(
                    "feature index {j} out of range for {} columns",
                    features.ncols()
                )));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(Error::Config(format!("feature index {j} repeated in subset")));
            }
        }
        if targets.len() != features.nrows() {
            return Err(Error::Data(format!(
                "{} targets for {} rows",
                targets.len(),
                features.nrows()
            )));
        }
        if targets.iter().any(|&t| t > 1) {
            return Err(Error::Data("k-NN targets must be 0 or 1".into()));
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
        let train = features.select_columns(subset);
        let mut sweep: Vec<(f64, u32)> = (0..train.nrows())
            .map(|i| (train.get(i, 0), i as u32))
            .collect();
        sweep.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(Self {
            subset: subset.to_vec(),
            train,
            targets: targets.to_vec(),
            k,
            mode,
            sweep,
        })
    }

    pub fn subset(&self) -> &[usize] {
        &self.subset
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> NeighborMode {
        self.mode
    }

    pub fn n_rows(&self) -> usize {
        self.train.nrows()
    }

    /// Predicts the target of training row `row` from its neighbours.
    pub fn predict_row(&self, row: usize) -> Result<u8> {
        Ok(self.vote(&self.neighbors_row(row)?))
    }

    /// Predicts the target of an arbitrary full-width feature vector. Every
    /// training row is a candidate.
    pub fn predict_point(&self, x: &[f64]) -> u8 {
        let q: Vec<f64> = self.subset.iter().map(|&j| x[j]).collect();
        self.vote(&self.search(&q, None))
    }

    /// Fraction of positive targets among the neighbours of a full-width point.
    pub fn neighbor_mean_point(&self, x: &[f64]) -> f64 {
        let q: Vec<f64> = self.subset.iter().map(|&j| x[j]).collect();
        let nb = self.search(&q, None);
        nb.iter().map(|&i| f64::from(self.targets[i])).sum::<f64>() / nb.len() as f64
    }

    /// Number of positive targets among the neighbours of a full-width point.
    pub fn positive_neighbors_point(&self, x: &[f64]) -> usize {
        let q: Vec<f64> = self.subset.iter().map(|&j| x[j]).collect();
        self.search(&q, None).iter().map(|&i| usize::from(self.targets[i])).sum()
    }

    /// Neighbour rows of training row `row`, nearest first.
    pub fn neighbors_row(&self, row: usize) -> Result<Vec<usize>> {
        if row >= self.train.nrows() {
            return Err(Error::Bounds(format!(
                "query row {row} out of range for {} rows",
                self.train.nrows()
            )));
        }
        let exclude = match self.mode {
            NeighborMode::LeaveOneOut => Some(row),
            NeighborMode::IncludeSelf => None,
        };
        Ok(self.search(self.train.row(row), exclude))
    }

    fn vote(&self, neighbors: &[usize]) -> u8 {
        let positives: usize = neighbors.iter().map(|&i| usize::from(self.targets[i])).sum();
        u8::from(2 * positives >= neighbors.len())
    }

    fn search(&self, q: &[f64], exclude: Option<usize>) -> Vec<usize> {
        let n = self.train.nrows();
        let k = self.k.min(n - usize::from(exclude.is_some()));
        if k * 16 <= n {
            self.search_sweep(q, exclude, k)
        } else {
            self.search_brute(q, exclude, k)
        }
    }

    fn search_brute(&self, q: &[f64], exclude: Option<usize>, k: usize) -> Vec<usize> {
        let mut cands: Vec<Candidate> = self
            .train
            .rows()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, r)| Candidate {
                dist: sq_distance(q, r),
                row: i as u32,
            })
            .collect();
        if k < cands.len() {
            cands.select_nth_unstable(k - 1);
            cands.truncate(k);
        }
        cands.sort_unstable();
        cands.into_iter().map(|c| c.row as usize).collect()
    }

    fn search_sweep(&self, q: &[f64], exclude: Option<usize>, k: usize) -> Vec<usize> {
        let q0 = q[0];
        let start = self.sweep.partition_point(|&(v, _)| v < q0);
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let mut left = start; // next candidate on the left is left - 1
        let mut right = start;
        loop {
            let dl = (left > 0).then(|| {
                let d = q0 - self.sweep[left - 1].0;
                d * d
            });
            let dr = (right < self.sweep.len()).then(|| {
                let d = self.sweep[right].0 - q0;
                d * d
            });
            let take_left = match (dl, dr) {
                (None, None) => break,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (Some(a), Some(b)) => a <= b,
            };
            let axis = if take_left { dl.unwrap() } else { dr.unwrap() };
            if heap.len() == k && axis > heap.peek().unwrap().dist {
                // the nearer side is already too far on this axis alone
                break;
            }
            let row = if take_left {
                left -= 1;
                self.sweep[left].1
            } else {
                right += 1;
                self.sweep[right - 1].1
            };
            if Some(row as usize) == exclude {
                continue;
            }
            let cand = Candidate {
                dist: sq_distance(q, self.train.row(row as usize)),
                row,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().unwrap() {
                heap.pop();
                heap.push(cand);
            }
        }
        heap.into_sorted_vec().into_iter().map(|c| c.row as usize).collect()
    }
}
