//! Scripted studies built on the metric modules: ground-truth region maps,
//! the four-Gaussian AXE/PGI comparison, fairwashing detection and the
//! multi-explainer benchmark.

pub mod benchmark;
pub mod fairwash;
pub mod regions;
pub mod standins;
pub mod synthetic;

/// Population z-scores; all zeros when the values do not vary.
pub fn z_scores(values: &[f64]) -> Vec<f64> {
    let m = crate::data::mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    let sd = (crate::data::pairwise_sum(&sq) / values.len() as f64).sqrt();
    if !(sd > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - m) / sd).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_scores_are_centred_and_unit() {
        let z = z_scores(&[0.3, 0.9, 0.1, 0.5]);
        let m: f64 = z.iter().sum::<f64>() / 4.0;
        let v: f64 = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        assert_eq!(z_scores(&[2.0, 2.0]), vec![0.0, 0.0]);
    }
}
