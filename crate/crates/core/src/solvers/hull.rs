//! Minimum-norm point of a convex hull (Wolfe's algorithm).
//!
//! For points `v_i = y_i x_i / m_i`, the hard-margin problem
//! `min ‖w‖ s.t. v_iᵀw ≥ 1` is solvable iff the hull of the `v_i` misses the
//! origin, and then `w = u/‖u‖²` where `u` is the hull's min-norm point.
//! The solver uses this as a separability certificate.

use nalgebra::{DMatrix, DVector};

const MAX_MAJOR: usize = 10_000;
const MAX_MINOR: usize = 10_000;
const OPT_TOL: f64 = 1e-12;
const DROP_TOL: f64 = 1e-15;

#[derive(Debug, Clone)]
pub struct HullPoint {
    /// Convex weights over the columns (sum to one).
    pub weights: DVector<f64>,
    pub point: DVector<f64>,
}

fn combine(v: &DMatrix<f64>, ws: &[(usize, f64)]) -> DVector<f64> {
    let mut x = DVector::zeros(v.nrows());
    for &(j, l) in ws {
        x.axpy(l, &v.column(j), 1.0);
    }
    x
}

/// Minimizer of `‖Σ mu_k v_k‖` over the affine hull of the working set.
fn affine_minimizer(v: &DMatrix<f64>, ws: &[(usize, f64)]) -> Option<Vec<f64>> {
    let k = ws.len();
    let mut a = DMatrix::zeros(k + 1, k + 1);
    for (r, &(i, _)) in ws.iter().enumerate() {
        for (c, &(j, _)) in ws.iter().enumerate() {
            a[(r, c)] = v.column(i).dot(&v.column(j));
        }
        a[(r, k)] = 1.0;
        a[(k, r)] = 1.0;
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = a.lu().solve(&rhs)?;
    let mu: Vec<f64> = sol.iter().take(k).copied().collect();
    mu.iter().all(|m| m.is_finite()).then_some(mu)
}

/// Point of minimum Euclidean norm in the convex hull of the columns of `v`.
pub fn min_norm_point(v: &DMatrix<f64>) -> HullPoint {
    let k = v.ncols();
    assert!(k > 0, "hull of an empty point set");
    let scale = v
        .column_iter()
        .map(|c| c.norm_squared())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);

    let start = (0..k)
        .min_by(|&a, &b| v.column(a).norm_squared().total_cmp(&v.column(b).norm_squared()))
        .unwrap();
    // Working set of (column, convex weight).
    let mut ws: Vec<(usize, f64)> = vec![(start, 1.0)];
    let mut x: DVector<f64> = v.column(start).into();

    'major: for _ in 0..MAX_MAJOR {
        let (j, best) = (0..k)
            .map(|j| (j, x.dot(&v.column(j))))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if x.norm_squared() - best <= OPT_TOL * scale || ws.iter().any(|&(i, _)| i == j) {
            break;
        }
        ws.push((j, 0.0));

        for _ in 0..MAX_MINOR {
            let Some(mu) = affine_minimizer(v, &ws) else {
                // Affinely dependent working set; keep the last hull point.
                ws.pop();
                break 'major;
            };
            if mu.iter().all(|&m| m > DROP_TOL) {
                for (entry, m) in ws.iter_mut().zip(mu) {
                    entry.1 = m;
                }
                x = combine(v, &ws);
                continue 'major;
            }
            // Move toward the affine minimizer until a weight hits zero.
            let mut step = 1.0_f64;
            for (&(_, l), &m) in ws.iter().zip(&mu) {
                if m <= DROP_TOL && l - m > 0.0 {
                    step = step.min(l / (l - m));
                }
            }
            for (entry, m) in ws.iter_mut().zip(&mu) {
                entry.1 += step * (m - entry.1);
            }
            let smallest = ws
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .map(|(i, _)| i)
                .unwrap();
            ws.remove(smallest);
            ws.retain(|&(_, l)| l > DROP_TOL);
            let total: f64 = ws.iter().map(|&(_, l)| l).sum();
            for entry in ws.iter_mut() {
                entry.1 /= total;
            }
            x = combine(v, &ws);
        }
        break;
    }

    let mut weights = DVector::zeros(k);
    for &(j, l) in &ws {
        weights[j] += l;
    }
    HullPoint { weights, point: x }
}
