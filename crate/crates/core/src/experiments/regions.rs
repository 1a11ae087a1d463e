//! Ground-truth metric maps over all two-feature explanations `(i1, i2)` in
//! `[-1, 1]^2` for a fixed reference `(b1, b2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::groundtruth::GroundTruthMetric;

/// Metrics drawn, each with the top-n it is evaluated at (`None` for PRA).
pub const PANELS: [(GroundTruthMetric, Option<usize>); 5] = [
    (GroundTruthMetric::Fa, Some(1)),
    (GroundTruthMetric::Ra, Some(2)),
    (GroundTruthMetric::Sa, Some(2)),
    (GroundTruthMetric::Sra, Some(2)),
    (GroundTruthMetric::Pra, None),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPanel {
    pub metric: GroundTruthMetric,
    pub n: Option<usize>,
    /// Row-major: `values[r * resolution + c]` is the metric at
    /// `(i1, i2) = (axis[c], axis[r])`.
    pub values: Vec<f64>,
}

impl RegionPanel {
    /// Sorted distinct values in the panel.
    pub fn distinct_values(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGrid {
    pub beta: [f64; 2],
    /// Cell centres along each axis.
    pub axis: Vec<f64>,
    pub panels: Vec<RegionPanel>,
}

pub fn run_region_heatmaps(beta: [f64; 2], resolution: usize) -> Result<RegionGrid> {
    if resolution == 0 {
        return Err(Error::Config("grid resolution must be >= 1".into()));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Config("beta must be finite".into()));
    }
    let step = 2.0 / resolution as f64;
    let axis: Vec<f64> = (0..resolution).map(|c| -1.0 + (c as f64 + 0.5) * step).collect();
    let panels = PANELS
        .iter()
        .map(|&(metric, n)| {
            let mut values = Vec::with_capacity(resolution * resolution);
            for &i2 in &axis {
                for &i1 in &axis {
                    values.push(metric.compute(&[i1, i2], &beta, n.unwrap_or(1))?);
                }
            }
            Ok(RegionPanel { metric, n, values })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegionGrid { beta, axis, panels })
}
