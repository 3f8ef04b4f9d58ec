//! Scalar margin losses and the worst-case (robust) empirical loss.
//!
//! For a decreasing loss `ℓ` the adversary's best move against sample `i`
//! is `z_i = -eps_i y_i w/‖w‖`, which gives the closed form
//!
//! ```text
//! L_eps(w) = Σ ℓ(y_i x_iᵀw - eps_i ‖w‖)
//! ∇L_eps(w) = Σ ℓ'(y_i x_iᵀw - eps_i ‖w‖) (y_i x_i - eps_i w/‖w‖)
//! ```
//!
//! [`inner_max_oracle`] checks the closed form by sampling the ball.

use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;

/// Below this norm `w` is treated as the origin, where `eps ‖w‖` has a kink.
pub const ZERO_NORM: f64 = 1e-12;

/// Envelope `c (1 ± e^{-mu u}) e^{-a u}` on `-ℓ'(u)` for `u > tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailParams {
    pub a: f64,
    pub c: f64,
    pub tau: f64,
    pub mu: f64,
}

impl TailParams {
    pub fn lower(&self, u: f64) -> f64 {
        self.c * (1.0 - (-self.mu * u).exp()) * (-self.a * u).exp()
    }

    pub fn upper(&self, u: f64) -> f64 {
        self.c * (1.0 + (-self.mu * u).exp()) * (-self.a * u).exp()
    }
}

/// A twice-differentiable, decreasing, `smoothness`-smooth margin loss.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec {
    pub name: &'static str,
    pub value: fn(f64) -> f64,
    pub first_derivative: fn(f64) -> f64,
    pub second_derivative: fn(f64) -> f64,
    pub smoothness: f64,
    pub tail: TailParams,
}

fn logistic_value(u: f64) -> f64 {
    if u >= 0.0 {
        (-u).exp().ln_1p()
    } else {
        -u + u.exp().ln_1p()
    }
}

fn logistic_first(u: f64) -> f64 {
    if u >= 0.0 {
        let e = (-u).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + u.exp())
    }
}

fn logistic_second(u: f64) -> f64 {
    let e = (-u.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `ℓ(u) = log(1 + e^{-u})`, 1-smooth, tail constants `a = c = mu = 1`.
pub fn logistic() -> LossSpec {
    LossSpec {
        name: "logistic",
        value: logistic_value,
        first_derivative: logistic_first,
        second_derivative: logistic_second,
        smoothness: 1.0,
        tail: TailParams {
            a: 1.0,
            c: 1.0,
            tau: 1.0,
            mu: 1.0,
        },
    }
}

impl LossSpec {
    pub fn value(&self, u: f64) -> f64 {
        (self.value)(u)
    }

    pub fn derivative(&self, u: f64) -> f64 {
        (self.first_derivative)(u)
    }

    pub fn second_derivative(&self, u: f64) -> f64 {
        (self.second_derivative)(u)
    }
}

/// `Σ_i ℓ(y_i x_iᵀw - eps_i ‖w‖)`.
pub fn robust_loss(spec: &LossSpec, d: &Dataset, w: &DVector<f64>) -> Result<f64> {
    Ok(d.robust_margins(w)?.iter().map(|&m| spec.value(m)).sum())
}

/// Standard (unperturbed) empirical loss `Σ_i ℓ(y_i x_iᵀw)`.
pub fn standard_loss(spec: &LossSpec, d: &Dataset, w: &DVector<f64>) -> Result<f64> {
    Ok(d.margins(w)?.iter().map(|&m| spec.value(m)).sum())
}

/// Analytic gradient of [`robust_loss`].
///
/// Fails with a domain error at `‖w‖ < ZERO_NORM` when any budget is
/// positive: the robust loss is not differentiable there.
pub fn robust_loss_gradient(spec: &LossSpec, d: &Dataset, w: &DVector<f64>) -> Result<DVector<f64>> {
    d.check_dim(w)?;
    let norm = w.norm();
    let perturbed = d.has_perturbation();
    if perturbed && norm < ZERO_NORM {
        return Err(Error::Domain(
            "robust loss gradient is undefined at w = 0 when some budget is positive".into(),
        ));
    }
    let margins = d.robust_margins(w)?;
    let coeffs = margins.map(|m| spec.derivative(m));
    // Σ c_i y_i x_i
    let mut grad = d.features().tr_mul(&coeffs.component_mul(d.labels()));
    if perturbed {
        let shrink = coeffs.dot(d.budgets());
        grad.axpy(-shrink / norm, w, 1.0);
    }
    Ok(grad)
}

/// Pure random search for `max_{‖z‖ = eps} ℓ(y (x + z)ᵀw)`, sampling `trials`
/// points uniformly on the sphere of radius `eps`.
pub fn sphere_search_max(
    spec: &LossSpec,
    x: &DVector<f64>,
    y: f64,
    eps: f64,
    w: &DVector<f64>,
    trials: usize,
    seed: u64,
) -> f64 {
    let base = y * x.dot(w);
    let mut rng = StdRng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..trials {
        let z = loop {
            let g: DVector<f64> = DVector::from_fn(x.len(), |_, _| rng.sample(StandardNormal));
            let n = g.norm();
            if n > 0.0 {
                break g * (eps / n);
            }
        };
        best = best.max(spec.value(base + y * z.dot(w)));
    }
    best
}

/// Sampling oracle for the inner maximization over `‖z‖ ≤ eps`.
///
/// Takes the best of random sphere samples, `z = 0` and the analytic
/// maximizer `z = -eps y w/‖w‖`. Only meant for verifying the closed form.
pub fn inner_max_oracle(
    spec: &LossSpec,
    x: &DVector<f64>,
    y: f64,
    eps: f64,
    w: &DVector<f64>,
    trials: usize,
    seed: u64,
) -> f64 {
    let base = y * x.dot(w);
    let mut best = spec.value(base);
    if eps > 0.0 {
        best = best.max(sphere_search_max(spec, x, y, eps, w, trials, seed));
        let norm = w.norm();
        if norm > 0.0 {
            let z = w * (-eps * y / norm);
            best = best.max(spec.value(y * (x + z).dot(w)));
        }
    }
    best
}

/// `2 / (β (σ_max(X) + ‖eps‖₂)²)`, the largest step size covered by the
/// convergence guarantee.
pub fn max_step_size(spec: &LossSpec, d: &Dataset) -> f64 {
    let sigma = linalg::spectral_norm(d.features(), linalg::POWER_ITER_TOL, linalg::POWER_ITER_MAX);
    let s = sigma + d.budgets().norm();
    2.0 / (spec.smoothness * s * s)
}
