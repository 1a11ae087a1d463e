//! Weighted least squares via the normal equations.

use nalgebra::{DMatrix, DVector};

/// Solves `min_b sum_r w_r (y_r - a_r . b)^2` for rows `a_r` of width `p`.
///
/// Uses a Cholesky factorization of `A^T W A`. When that matrix is not
/// positive definite a ridge of `1e-6` is added to its diagonal; the second
/// return value reports whether that happened.
pub fn weighted_least_squares(rows: &[Vec<f64>], y: &[f64], w: &[f64], p: usize) -> (Vec<f64>, bool) {
    let mut ata = DMatrix::<f64>::zeros(p, p);
    let mut aty = DVector::<f64>::zeros(p);
    for ((a, &yv), &wv) in rows.iter().zip(y).zip(w) {
        for i in 0..p {
            let wa = wv * a[i];
            aty[i] += wa * yv;
            for j in 0..=i {
                ata[(i, j)] += wa * a[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            ata[(j, i)] = ata[(i, j)];
        }
    }
    if let Some(ch) = ata.clone().cholesky() {
        return (ch.solve(&aty).iter().copied().collect(), false);
    }
    log::warn!("singular least-squares design; solving with ridge penalty 1e-6");
    let ridged = ata + DMatrix::<f64>::identity(p, p) * 1e-6;
    let sol = match ridged.clone().cholesky() {
        Some(ch) => ch.solve(&aty),
        None => ridged
            .lu()
            .solve(&aty)
            .unwrap_or_else(|| DVector::zeros(p)),
    };
    (sol.iter().copied().collect(), true)
}
