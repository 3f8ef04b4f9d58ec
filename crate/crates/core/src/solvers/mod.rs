//! Max-margin and robust max-margin classifiers.
//!
//! [`solve_svm`] handles the hard-margin problem with per-sample right-hand
//! sides, `min ½‖w‖² s.t. y_i x_iᵀw ≥ m_i`, by coordinate ascent on its dual
//! `max_{α ≥ 0} Σ m_i α_i - ½‖Σ α_i y_i x_i‖²`. The robust problem
//! `min ‖w‖ s.t. y_i x_iᵀw ≥ 1 + eps_i ‖w‖` is reduced to it by looking for a
//! fixed point of `g(s) = ‖solve_svm(margins = 1 + eps s)‖` (see [`rm_solve`]).

pub mod hull;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Dual coefficients above this count as support.
pub const DUAL_TOL: f64 = 1e-8;
/// Relative feasibility tolerance, scaled by `1 + ‖w‖`.
pub const FEAS_TOL: f64 = 1e-8;
pub const KKT_TOL: f64 = 1e-6;
/// Bisection stops once `|g(s) - s| < FP_TOL (1 + ‖w_M‖)`.
pub const FP_TOL: f64 = 1e-10;
/// Coordinate ascent stops when no coordinate improves the dual by more than this.
pub const CD_IMPROVEMENT_TOL: f64 = 1e-14;
/// ... and no constraint is violated (projected gradient) by more than this, relative.
pub const CD_VIOLATION_TOL: f64 = 1e-12;
pub const CD_MAX_SWEEPS: usize = 1_000_000;
/// Dual optimum above this means the margins cannot be met.
pub const DUAL_DIVERGENCE: f64 = 1e12;
pub const BISECTION_MAX_ITERS: usize = 200;
/// `‖eps‖_∞ ‖w_M‖` at or above `1 - EXISTENCE_SLACK` is treated as infeasible.
pub const EXISTENCE_SLACK: f64 = 1e-9;
/// Relative activity tolerance used when classifying constraints as active.
pub const ACTIVE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSolution {
    pub weights: DVector<f64>,
    /// Non-negative multipliers. For robust solutions these are the
    /// coefficients of `w = Σ α_i (y_i x_i - eps_i ŵ)`.
    pub duals: DVector<f64>,
    pub support_set: Vec<usize>,
    pub objective_norm: f64,
    pub status: SolveStatus,
}

impl MarginSolution {
    fn infeasible(n: usize, p: usize) -> Self {
        Self {
            weights: DVector::zeros(p),
            duals: DVector::zeros(n),
            support_set: Vec::new(),
            objective_norm: f64::INFINITY,
            status: SolveStatus::Infeasible,
        }
    }

    fn from_duals(weights: DVector<f64>, duals: DVector<f64>, status: SolveStatus) -> Self {
        let support_set = duals
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > DUAL_TOL)
            .map(|(i, _)| i)
            .collect();
        Self {
            objective_norm: weights.norm(),
            weights,
            duals,
            support_set,
            status,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Dual coordinate ascent state for one dataset.
struct DualAscent {
    /// Column `i` is `y_i x_i`.
    signed: DMatrix<f64>,
    sq_norms: Vec<f64>,
}

struct AscentResult {
    duals: DVector<f64>,
    weights: DVector<f64>,
    converged: bool,
}

impl DualAscent {
    fn new(d: &Dataset) -> Self {
        let signed = d.signed_columns();
        let sq_norms = signed.column_iter().map(|c| c.norm_squared()).collect();
        Self { signed, sq_norms }
    }

    fn weights_from(&self, duals: &DVector<f64>) -> DVector<f64> {
        &self.signed * duals
    }

    fn run(&self, margins: &DVector<f64>, start: Option<&DVector<f64>>) -> AscentResult {
        let n = self.signed.ncols();
        let mut alpha = start.cloned().unwrap_or_else(|| DVector::zeros(n));
        let mut w = self.weights_from(&alpha);
        let scale = margins.max().max(1.0);
        let mut converged = false;
        for sweep in 0..CD_MAX_SWEEPS {
            let mut max_gain = 0.0_f64;
            let mut max_violation = 0.0_f64;
            for i in 0..n {
                let q = self.sq_norms[i];
                if q == 0.0 {
                    continue;
                }
                let col = self.signed.column(i);
                let grad = margins[i] - col.dot(&w);
                let violation = if alpha[i] > 0.0 { grad.abs() } else { grad.max(0.0) };
                max_violation = max_violation.max(violation);
                let next = (alpha[i] + grad / q).max(0.0);
                let delta = next - alpha[i];
                if delta != 0.0 {
                    alpha[i] = next;
                    w.axpy(delta, &col, 1.0);
                    max_gain = max_gain.max(delta * grad - 0.5 * delta * delta * q);
                }
            }
            if sweep % 256 == 255 {
                // Refresh to stop rounding drift in the running sum.
                w = self.weights_from(&alpha);
            }
            if max_gain < CD_IMPROVEMENT_TOL && max_violation <= CD_VIOLATION_TOL * scale {
                converged = true;
                break;
            }
        }
        let weights = self.weights_from(&alpha);
        AscentResult {
            duals: alpha,
            weights,
            converged,
        }
    }
}

fn check_margins(d: &Dataset, margins: &DVector<f64>) -> Result<()> {
    if margins.len() != d.n() {
        return Err(Error::DimensionMismatch {
            expected: d.n(),
            actual: margins.len(),
        });
    }
    if let Some(i) = margins.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "margin {} at sample {i} must be positive",
            margins[i]
        )));
    }
    Ok(())
}

/// Optimal dual value `½‖w‖²` from the hull certificate, or `None` when the
/// hull contains the origin.
fn hull_dual_value(d: &Dataset, margins: &DVector<f64>) -> Option<f64> {
    let mut v = d.signed_columns();
    for (i, mut col) in v.column_iter_mut().enumerate() {
        col /= margins[i];
    }
    let u = hull::min_norm_point(&v).point.norm_squared();
    (u > 0.0).then(|| 0.5 / u)
}

/// `min ½‖w‖² s.t. y_i x_iᵀw ≥ m_i` for positive `margins`.
///
/// Infeasibility (no separating direction) is reported via the status.
pub fn solve_svm(d: &Dataset, margins: &DVector<f64>) -> Result<MarginSolution> {
    check_margins(d, margins)?;
    let ascent = DualAscent::new(d);
    Ok(solve_with(&ascent, d, margins, None))
}

fn solve_with(
    ascent: &DualAscent,
    d: &Dataset,
    margins: &DVector<f64>,
    start: Option<&DVector<f64>>,
) -> MarginSolution {
    match hull_dual_value(d, margins) {
        Some(v) if v <= DUAL_DIVERGENCE => {}
        _ => return MarginSolution::infeasible(d.n(), d.p()),
    }
    let r = ascent.run(margins, start);
    let status = if r.converged {
        SolveStatus::Optimal
    } else {
        SolveStatus::NotConverged
    };
    MarginSolution::from_duals(r.weights, r.duals, status)
}

/// The max-margin classifier `w_M = argmin ‖w‖ s.t. y_i x_iᵀw ≥ 1`.
pub fn max_margin(d: &Dataset) -> MarginSolution {
    let ones = DVector::from_element(d.n(), 1.0);
    solve_with(&DualAscent::new(d), d, &ones, None)
}

/// `1/‖w_M‖`: uniform budgets below it admit a robust classifier.
pub fn rm_existence_bound(d: &Dataset) -> Result<f64> {
    existence_bound_from(&max_margin(d))
}

pub fn existence_bound_from(wm: &MarginSolution) -> Result<f64> {
    match wm.status {
        SolveStatus::Optimal => Ok(1.0 / wm.objective_norm),
        SolveStatus::Infeasible => Err(Error::Infeasible("data is not linearly separable".into())),
        SolveStatus::NotConverged => Err(Error::Infeasible(
            "max-margin solver did not converge".into(),
        )),
    }
}

/// Robust classifier for uniform budget `eps`: `w_M / (1 - eps ‖w_M‖)`.
pub fn rm_uniform_closed_form(wm: &MarginSolution, eps: f64) -> Result<DVector<f64>> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be non-negative, got {eps}")));
    }
    let scale = 1.0 - eps * wm.objective_norm;
    if !wm.is_optimal() || scale <= 0.0 {
        return Err(Error::Infeasible(format!(
            "uniform budget {eps} is not below 1/‖w_M‖ = {}",
            1.0 / wm.objective_norm
        )));
    }
    Ok(&wm.weights / scale)
}

/// Robust max-margin classifier `min ‖w‖ s.t. y_i x_iᵀw ≥ 1 + eps_i ‖w‖`.
///
/// Bisects `h(s) = g(s) - s`, `g(s) = ‖solve_svm(d, 1 + eps s)‖`, on
/// `[‖w_M‖, ‖w_M‖/(1 - ‖eps‖_∞ ‖w_M‖)]`. `g` is the optimal value of a convex
/// program whose right-hand side is affine in `s`, so `h` is convex; it is
/// non-negative at the left end and non-positive at the right end, and the
/// robust norm is its smallest root.
pub fn rm_solve(d: &Dataset) -> MarginSolution {
    let ascent = DualAscent::new(d);
    let ones = DVector::from_element(d.n(), 1.0);
    let wm = solve_with(&ascent, d, &ones, None);
    if !wm.is_optimal() || !d.has_perturbation() {
        return wm;
    }
    rm_from_max_margin(&ascent, d, &wm)
}

/// `g(s) = ‖w‖` of the hard-margin solution with margins `1 + eps_i s`;
/// `None` when that problem is infeasible.
pub fn fixed_point_norm(d: &Dataset, s: f64) -> Result<Option<f64>> {
    let margins = d.budgets().map(|e| 1.0 + e * s);
    let sol = solve_svm(d, &margins)?;
    Ok(sol.is_optimal().then_some(sol.objective_norm))
}

fn rm_from_max_margin(ascent: &DualAscent, d: &Dataset, wm: &MarginSolution) -> MarginSolution {
    let lo_norm = wm.objective_norm;
    let eps_max = d.max_budget();
    if eps_max * lo_norm >= 1.0 - EXISTENCE_SLACK {
        return MarginSolution::infeasible(d.n(), d.p());
    }
    let hi_norm = lo_norm / (1.0 - eps_max * lo_norm);
    let tol = FP_TOL * (1.0 + lo_norm);
    let budgets = d.budgets();

    let mut warm = wm.duals.clone();
    let mut eval = |s: f64| -> MarginSolution {
        let margins = budgets.map(|e| 1.0 + e * s);
        let sol = solve_with(ascent, d, &margins, Some(&warm));
        if sol.status != SolveStatus::Infeasible {
            warm = sol.duals.clone();
        }
        sol
    };

    let at_hi = eval(hi_norm);
    if !at_hi.is_optimal() {
        return at_hi;
    }
    if at_hi.objective_norm - hi_norm > tol {
        return MarginSolution::infeasible(d.n(), d.p());
    }

    let (mut lo, mut hi) = (lo_norm, hi_norm);
    let mut best = (hi_norm, at_hi);
    let mut converged = false;
    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let sol = eval(mid);
        if !sol.is_optimal() {
            return sol;
        }
        let h = sol.objective_norm - mid;
        if h.abs() < tol {
            best = (mid, sol);
            converged = true;
            break;
        }
        if h > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            best = (mid, sol);
        }
        if hi - lo <= f64::EPSILON * hi {
            converged = (best.1.objective_norm - best.0).abs() < tol;
            break;
        }
    }

    let (_, svm) = best;
    let status = if converged {
        SolveStatus::Optimal
    } else {
        SolveStatus::NotConverged
    };
    robust_form(d, svm.weights, &svm.duals, status)
}

/// Rewrites SVM duals `w = Σ β_i y_i x_i` at margins `1 + eps_i s` as robust
/// stationarity coefficients `w = Σ α_i (y_i x_i - eps_i ŵ)`, `α = c β` with
/// `c = ‖w‖ / (‖w‖ - Σ β_i eps_i)`.
fn robust_form(d: &Dataset, weights: DVector<f64>, beta: &DVector<f64>, status: SolveStatus) -> MarginSolution {
    let norm = weights.norm();
    let shrink = beta.dot(d.budgets());
    let c = norm / (norm - shrink);
    MarginSolution::from_duals(weights, beta * c, status)
}

/// Indices whose robust constraint is active within `tol (1 + ‖w‖)`.
pub fn support_vectors(sol: &MarginSolution, d: &Dataset, tol: f64) -> Vec<usize> {
    let norm = sol.weights.norm();
    let Ok(robust) = d.robust_margins(&sol.weights) else {
        return Vec::new();
    };
    robust
        .iter()
        .enumerate()
        .filter(|(_, &m)| (m - 1.0).abs() <= tol * (1.0 + norm))
        .map(|(i, _)| i)
        .collect()
}

/// `‖w - Σ_{i∈S} α_i (y_i x_i - eps_i ŵ)‖ / (1 + ‖w‖)`.
pub fn kkt_residual(sol: &MarginSolution, d: &Dataset) -> f64 {
    let w = &sol.weights;
    let norm = w.norm();
    let mut r = w.clone();
    let mut shrink = 0.0;
    for &i in &sol.support_set {
        let a = sol.duals[i];
        r.axpy(-a * d.labels()[i], &d.features().row(i).transpose(), 1.0);
        shrink += a * d.budgets()[i];
    }
    if norm > 0.0 {
        r.axpy(shrink / norm, w, 1.0);
    }
    r.norm() / (1.0 + norm)
}

/// `min_i (y_i x_iᵀw - eps_i ‖w‖ - 1)`; negative values are constraint violations.
pub fn min_constraint_slack(sol: &MarginSolution, d: &Dataset) -> f64 {
    d.robust_margins(&sol.weights)
        .map(|m| m.add_scalar(-1.0).min())
        .unwrap_or(f64::NEG_INFINITY)
}

/// Smallest robust margin among samples outside the support set; `+∞` if
/// every sample is support.
///
/// A sample counts as support when it carries a dual above [`DUAL_TOL`] or
/// its constraint is active within [`ACTIVE_TOL`].
pub fn theta(sol: &MarginSolution, d: &Dataset) -> f64 {
    let active = support_vectors(sol, d, ACTIVE_TOL);
    let Ok(robust) = d.robust_margins(&sol.weights) else {
        return f64::NAN;
    };
    robust
        .iter()
        .enumerate()
        .filter(|(i, _)| !sol.support_set.contains(i) && !active.contains(i))
        .map(|(_, &m)| m)
        .fold(f64::INFINITY, f64::min)
}
