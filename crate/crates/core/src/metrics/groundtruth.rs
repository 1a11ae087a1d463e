//! Ground-truth comparison metrics: FA, RA, SA, SRA, RC and PRA.
//!
//! Features are ranked by |importance| with ties broken by ascending index.
//! A zero importance counts as positive for the sign-based metrics. Every
//! metric is symmetric in its two arguments.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{importance_order, top_n_features};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruthMetric {
    Fa,
    Ra,
    Sa,
    Sra,
    Rc,
    Pra,
}

impl GroundTruthMetric {
    pub const ALL: [GroundTruthMetric; 6] = [
        GroundTruthMetric::Fa,
        GroundTruthMetric::Ra,
        GroundTruthMetric::Sa,
        GroundTruthMetric::Sra,
        GroundTruthMetric::Rc,
        GroundTruthMetric::Pra,
    ];

    pub fn id(self) -> &'static str {
        match self {
            GroundTruthMetric::Fa => "fa",
            GroundTruthMetric::Ra => "ra",
            GroundTruthMetric::Sa => "sa",
            GroundTruthMetric::Sra => "sra",
            GroundTruthMetric::Rc => "rc",
            GroundTruthMetric::Pra => "pra",
        }
    }

    /// Whether the metric takes a top-n parameter.
    pub fn uses_top_n(self) -> bool {
        !matches!(self, GroundTruthMetric::Rc | GroundTruthMetric::Pra)
    }

    /// Evaluates the metric; `n` is ignored by RC and PRA.
    pub fn compute(self, e: &[f64], e_star: &[f64], n: usize) -> Result<f64> {
        match self {
            GroundTruthMetric::Fa => feature_agreement(e, e_star, n),
            GroundTruthMetric::Ra => rank_agreement(e, e_star, n),
            GroundTruthMetric::Sa => sign_agreement(e, e_star, n),
            GroundTruthMetric::Sra => signed_rank_agreement(e, e_star, n),
            GroundTruthMetric::Rc => rank_correlation(e, e_star),
            GroundTruthMetric::Pra => pairwise_rank_agreement(e, e_star),
        }
    }
}

impl fmt::Display for GroundTruthMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for GroundTruthMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GroundTruthMetric::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown ground-truth metric '{s}'")))
    }
}

/// One metric value at a given top-n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtMetricResult {
    pub metric_id: String,
    pub n: usize,
    pub value: f64,
}

fn check_pair(e: &[f64], e_star: &[f64]) -> Result<()> {
    if e.len() != e_star.len() {
        return Err(Error::Bounds(format!(
            "explanation has {} features, ground truth has {}",
            e.len(),
            e_star.len()
        )));
    }
    if e.is_empty() {
        return Err(Error::Bounds("empty explanation".into()));
    }
    Ok(())
}

fn tops(e: &[f64], e_star: &[f64], n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    check_pair(e, e_star)?;
    Ok((top_n_features(e, n)?, top_n_features(e_star, n)?))
}

#[inline]
fn positive(v: f64) -> bool {
    v >= 0.0
}

/// Fraction of top-n features shared by both explanations.
pub fn feature_agreement(e: &[f64], e_star: &[f64], n: usize) -> Result<f64> {
    let (a, b) = tops(e, e_star, n)?;
    Ok(a.iter().filter(|f| b.contains(f)).count() as f64 / n as f64)
}

/// Fraction of top-n positions holding the same feature in both rankings.
pub fn rank_agreement(e: &[f64], e_star: &[f64], n: usize) -> Result<f64> {
    let (a, b) = tops(e, e_star, n)?;
    Ok(a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / n as f64)
}

/// Fraction of top-n features shared by both explanations with equal sign.
pub fn sign_agreement(e: &[f64], e_star: &[f64], n: usize) -> Result<f64> {
    let (a, b) = tops(e, e_star, n)?;
    let hits = a
        .iter()
        .filter(|&&f| b.contains(&f) && positive(e[f]) == positive(e_star[f]))
        .count();
    Ok(hits as f64 / n as f64)
}

/// Fraction of top-n positions holding the same feature with equal sign.
pub fn signed_rank_agreement(e: &[f64], e_star: &[f64], n: usize) -> Result<f64> {
    let (a, b) = tops(e, e_star, n)?;
    let hits = a
        .iter()
        .zip(&b)
        .filter(|(&x, &y)| x == y && positive(e[x]) == positive(e_star[x]))
        .count();
    Ok(hits as f64 / n as f64)
}

/// Ranks of |values| (1 = largest), averaging over ties.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let order = importance_order(values);
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && mags[order[j + 1]] == mags[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &f in &order[i..=j] {
            ranks[f] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation between the |importance| rankings, with average ranks
/// for ties. Returns 0 when either ranking is constant. With two features the
/// result is always ±1 (or 0) and carries little information.
pub fn rank_correlation(e: &[f64], e_star: &[f64]) -> Result<f64> {
    check_pair(e, e_star)?;
    let ra = average_ranks(e);
    let rb = average_ranks(e_star);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (a, b) in ra.iter().zip(&rb) {
        cov += (a - ma) * (b - mb);
        va += (a - ma) * (a - ma);
        vb += (b - mb) * (b - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

/// Fraction of feature pairs whose relative order agrees between the two
/// rankings. A single feature counts as full agreement.
pub fn pairwise_rank_agreement(e: &[f64], e_star: &[f64]) -> Result<f64> {
    check_pair(e, e_star)?;
    let n = e.len();
    if n == 1 {
        return Ok(1.0);
    }
    let position = |order: Vec<usize>| {
        let mut pos = vec![0usize; n];
        for (p, f) in order.into_iter().enumerate() {
            pos[f] = p;
        }
        pos
    };
    let pa = position(importance_order(e));
    let pb = position(importance_order(e_star));
    let mut agree = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if (pa[i] < pa[j]) == (pb[i] < pb[j]) {
                agree += 1;
            }
        }
    }
    Ok(agree as f64 / (n * (n - 1) / 2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const GT: [f64; 2] = [0.7, 0.3];

    #[test]
    fn feature_agreement_examples() {
        assert_eq!(feature_agreement(&[0.5, 0.1], &GT, 2).unwrap(), 1.0);
        assert_eq!(feature_agreement(&[0.1, 0.9], &[0.9, 0.1], 1).unwrap(), 0.0);
        assert!(matches!(feature_agreement(&[0.5, 0.1], &GT, 0), Err(Error::Bounds(_))));
        assert!(feature_agreement(&[0.5, 0.1], &GT, 3).is_err());
        assert!(feature_agreement(&[0.5], &GT, 1).is_err());
    }

    #[test]
    fn rank_agreement_examples() {
        assert_eq!(rank_agreement(&[0.3, 0.7], &GT, 2).unwrap(), 0.0);
        assert_eq!(rank_agreement(&[0.8, 0.2], &GT, 2).unwrap(), 1.0);
    }

    #[test]
    fn sign_agreement_examples() {
        assert_eq!(sign_agreement(&[-0.5, 0.2], &GT, 2).unwrap(), 0.5);
        assert_eq!(sign_agreement(&[0.4, -0.1, 0.2], &[0.4, -0.1, 0.2], 3).unwrap(), 1.0);
        // zero counts as positive
        assert_eq!(sign_agreement(&[0.0, 0.0], &[0.1, 0.2], 2).unwrap(), 1.0);
    }

    #[test]
    fn signed_rank_agreement_examples() {
        let e = [0.4, -0.3, 0.2];
        assert_eq!(signed_rank_agreement(&e, &e, 3).unwrap(), 1.0);
        assert_eq!(signed_rank_agreement(&[0.3, 0.7], &GT, 2).unwrap(), 0.0);
    }

    #[test]
    fn rank_correlation_examples() {
        let e = [0.1, 0.5, -0.9, 0.3];
        assert!((rank_correlation(&e, &e).unwrap() - 1.0).abs() < 1e-12);
        let rev = [0.9, 0.3, -0.1, 0.5];
        assert!((rank_correlation(&e, &rev).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(rank_correlation(&[0.3, 0.7], &GT).unwrap(), -1.0);
        assert_eq!(rank_correlation(&[0.7, 0.3], &GT).unwrap(), 1.0);
        assert_eq!(rank_correlation(&[0.5, 0.5], &GT).unwrap(), 0.0);
        assert_eq!(average_ranks(&[0.2, -0.5, 0.5, 0.1]), vec![3.0, 1.5, 1.5, 4.0]);
    }

    #[test]
    fn pairwise_rank_agreement_examples() {
        assert_eq!(pairwise_rank_agreement(&[0.9, 0.5, 0.1], &[0.8, 0.6, 0.2]).unwrap(), 1.0);
        // enumerate the three pairs: (0,1) swapped, (0,2) and (1,2) kept
        assert!((pairwise_rank_agreement(&[0.5, 0.9, 0.1], &[0.9, 0.5, 0.1]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        for e in [[0.2, 0.6], [0.6, 0.2], [-0.6, 0.2], [0.4, -0.4]] {
            assert_eq!(
                pairwise_rank_agreement(&e, &GT).unwrap(),
                feature_agreement(&e, &GT, 1).unwrap()
            );
            assert_eq!(rank_agreement(&e, &GT, 2).unwrap(), feature_agreement(&e, &GT, 1).unwrap());
        }
    }

    /// Direct transcription of each definition, computed from full sorts.
    fn oracle(metric: GroundTruthMetric, e: &[f64], g: &[f64], n: usize) -> f64 {
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[b].abs().partial_cmp(&v[a].abs()).unwrap().then(a.cmp(&b)));
            idx
        };
        let (ra, rb) = (rank(e), rank(g));
        let (ta, tb) = (&ra[..n], &rb[..n]);
        let same_sign = |f: usize| (e[f] >= 0.0) == (g[f] >= 0.0);
        match metric {
            GroundTruthMetric::Fa => ta.iter().filter(|f| tb.contains(f)).count() as f64 / n as f64,
            GroundTruthMetric::Ra => (0..n).filter(|&p| ta[p] == tb[p]).count() as f64 / n as f64,
            GroundTruthMetric::Sa => ta.iter().filter(|&&f| tb.contains(&f) && same_sign(f)).count() as f64 / n as f64,
            GroundTruthMetric::Sra => (0..n).filter(|&p| ta[p] == tb[p] && same_sign(ta[p])).count() as f64 / n as f64,
            GroundTruthMetric::Pra => {
                let pos = |r: &[usize], f: usize| r.iter().position(|&x| x == f).unwrap();
                let len = e.len();
                let mut agree = 0;
                let mut total = 0;
                for i in 0..len {
                    for j in i + 1..len {
                        total += 1;
                        if (pos(&ra, i) < pos(&ra, j)) == (pos(&rb, i) < pos(&rb, j)) {
                            agree += 1;
                        }
                    }
                }
                agree as f64 / total as f64
            }
            GroundTruthMetric::Rc => {
                // distinct magnitudes: classic 1 - 6 sum d^2 / (n (n^2 - 1))
                let len = e.len() as f64;
                let pos = |r: &[usize], f: usize| r.iter().position(|&x| x == f).unwrap() as f64;
                let d2: f64 = (0..e.len()).map(|f| (pos(&ra, f) - pos(&rb, f)).powi(2)).sum();
                1.0 - 6.0 * d2 / (len * (len * len - 1.0))
            }
        }
    }

    #[test]
    fn random_pairs_match_definitions_and_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let len = 5;
            let e: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = rng.random_range(1..=len);
            for m in GroundTruthMetric::ALL {
                let v = m.compute(&e, &g, n).unwrap();
                assert!((v - oracle(m, &e, &g, n)).abs() < 1e-12, "{m} {e:?} {g:?}");
                assert_eq!(v, m.compute(&g, &e, n).unwrap());
            }
        }
    }

    #[test]
    fn region_is_constant_for_positive_ordered_explanations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reference: Vec<f64> = GroundTruthMetric::ALL
            .iter()
            .map(|m| m.compute(&[0.6, 0.2], &GT, 2).unwrap())
            .collect();
        for _ in 0..500 {
            let i1: f64 = rng.random_range(0.01..1.0);
            let i2: f64 = rng.random_range(0.0..i1);
            for (m, r) in GroundTruthMetric::ALL.iter().zip(&reference) {
                assert_eq!(m.compute(&[i1, i2], &GT, 2).unwrap(), *r);
            }
        }
    }
}
