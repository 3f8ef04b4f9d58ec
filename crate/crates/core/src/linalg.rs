use nalgebra::{DMatrix, DVector};

pub const POWER_ITER_TOL: f64 = 1e-10;
pub const POWER_ITER_MAX: usize = 10_000;

/// Largest singular value of `x`, by power iteration on `xᵀx`.
///
/// Stops when the Rayleigh quotient changes by less than `tol` relative, or
/// after `max_iters` multiplications.
pub fn spectral_norm(x: &DMatrix<f64>, tol: f64, max_iters: usize) -> f64 {
    let p = x.ncols();
    if p == 0 || x.nrows() == 0 {
        return 0.0;
    }
    // Deterministic start with no symmetry that could make it orthogonal to
    // the top eigenvector of a structured matrix.
    let mut v = DVector::from_fn(p, |j, _| 1.0 + 0.1 * ((j as f64 + 1.0).sqrt()).fract());
    v.normalize_mut();
    let gram = x.tr_mul(x);
    let mut lambda = 0.0_f64;
    for _ in 0..max_iters {
        let u = &gram * &v;
        let next = v.dot(&u);
        let norm = u.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = u / norm;
        if (next - lambda).abs() <= tol * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_matrix() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let s = spectral_norm(&x, POWER_ITER_TOL, POWER_ITER_MAX);
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn matches_svd() {
        let x = DMatrix::from_fn(7, 4, |i, j| ((i * 3 + j * 5) % 7) as f64 - 2.5 + 0.1 * j as f64);
        let expected = x.clone().svd(false, false).singular_values.max();
        let s = spectral_norm(&x, POWER_ITER_TOL, POWER_ITER_MAX);
        assert!((s - expected).abs() <= 1e-8 * expected, "{s} vs {expected}");
    }

    #[test]
    fn zero_matrix() {
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 2), 1e-10, 100), 0.0);
    }
}
