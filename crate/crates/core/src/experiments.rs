//! The two experiments: generalization error of max-margin vs robust
//! max-margin as the budget grows, and directional convergence of gradient
//! descent to the robust classifier.
//!
//! Trials run on the current rayon pool; results come back in seed order so
//! output does not depend on the number of workers.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    aggregate, direction_distance, fit_log_rate_series, generalization_error, ConvergenceFit,
    ExperimentReport, TrialRecord,
};
use crate::dataset::{
    apply_adversarial_shift, assign_budgets, generate_gaussian, BudgetScheme, Dataset, GroundTruth,
};
use crate::error::{Error, Result};
use crate::loss::{max_step_size, LossSpec};
use crate::solvers::{max_margin, rm_solve};
use crate::trainer::{train, GdConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneralizationConfig {
    pub n: usize,
    pub p: usize,
    pub trials: usize,
    pub seed: u64,
    /// Number of budget levels, evenly spaced from 0 to `top_fraction` times
    /// the existence bound `1/‖w_M‖` of the training data.
    pub levels: usize,
    pub top_fraction: f64,
    /// Fraction of samples that get a nonzero budget.
    pub perturbed_fraction: f64,
    /// Move perturbed samples by their worst-case shift before solving.
    pub shift: bool,
    /// Measure error on test points perturbed the same way as training points.
    pub test_perturbed: bool,
    pub min_margin: f64,
}

impl Default for GeneralizationConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p: 40,
            trials: 20,
            seed: 0,
            levels: 8,
            top_fraction: 0.9,
            perturbed_fraction: 0.4,
            shift: true,
            test_perturbed: false,
            min_margin: 0.0,
        }
    }
}

/// Error of `sign(wᵀx)` on Gaussian test points where a `fraction` of them
/// are moved by `-eps y w*`.
///
/// For a shifted point the error is `P(sign(u) v < eps c)` with `u = w*ᵀx`,
/// `v = ŵᵀx` standard normals of correlation `c`, evaluated by Simpson's rule.
pub fn perturbed_generalization_error(
    w: &DVector<f64>,
    g: &GroundTruth,
    eps: f64,
    fraction: f64,
) -> Result<f64> {
    let clean = generalization_error(w, g)?;
    if eps == 0.0 || fraction == 0.0 {
        return Ok(clean);
    }
    let c = (w.dot(&g.true_weights) / w.norm()).clamp(-1.0, 1.0);
    let s = (1.0 - c * c).sqrt();
    let shifted = if s < 1e-12 {
        // v = u: error iff |u| < eps
        2.0 * (normal_cdf(eps) - 0.5)
    } else {
        // 2 ∫_0^∞ φ(u) Φ((eps c - c u)/s) du
        let upper = 12.0;
        let steps = 4000;
        let h = upper / steps as f64;
        let f = |u: f64| normal_pdf(u) * normal_cdf((eps * c - c * u) / s);
        let mut acc = f(0.0) + f(upper);
        for k in 1..steps {
            acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        2.0 * acc * h / 3.0
    };
    Ok((1.0 - fraction) * clean + fraction * shifted)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn training_set(
    cfg: &GeneralizationConfig,
    clean: &Dataset,
    truth: &GroundTruth,
    seed: u64,
    eps: f64,
) -> Result<Dataset> {
    let scheme = BudgetScheme::Fraction {
        fraction: cfg.perturbed_fraction,
        eps,
        seed,
    };
    let d = assign_budgets(clean, scheme)?;
    if cfg.shift {
        apply_adversarial_shift(&d, truth)
    } else {
        Ok(d)
    }
}

/// Largest budget `eps` with `eps ‖w_M‖ < 1` on the training set built
/// with that budget. Without the shift this is `1/‖w_M‖` of the clean data;
/// with it, shifted samples shrink the margin, so it is found by bisection
/// below the clean value.
fn existence_budget(
    cfg: &GeneralizationConfig,
    clean: &Dataset,
    truth: &GroundTruth,
    seed: u64,
    clean_bound: f64,
) -> Result<f64> {
    if !cfg.shift || cfg.perturbed_fraction == 0.0 {
        return Ok(clean_bound);
    }
    let exists = |eps: f64| -> Result<bool> {
        let wm = max_margin(&training_set(cfg, clean, truth, seed, eps)?);
        Ok(wm.is_optimal() && eps * wm.objective_norm < 1.0)
    };
    let (mut lo, mut hi) = (0.0, clean_bound);
    while hi - lo > 1e-6 * clean_bound {
        let mid = 0.5 * (lo + hi);
        if exists(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn trial_rows(cfg: &GeneralizationConfig, seed: u64) -> Result<Vec<TrialRecord>> {
    let (clean, truth) = generate_gaussian(cfg.n, cfg.p, seed, cfg.min_margin)?;
    let wm_clean = max_margin(&clean);
    if !wm_clean.is_optimal() {
        return Err(Error::Infeasible(format!("seed {seed}: generated data not separable")));
    }
    let bound = existence_budget(cfg, &clean, &truth, seed, 1.0 / wm_clean.objective_norm)?;
    let denom = cfg.levels.saturating_sub(1).max(1) as f64;
    (0..cfg.levels)
        .map(|level| {
            let eps = cfg.top_fraction * bound * level as f64 / denom;
            let d = training_set(cfg, &clean, &truth, seed, eps)?;
            let ge = |w: &DVector<f64>| {
                if cfg.test_perturbed {
                    perturbed_generalization_error(w, &truth, eps, cfg.perturbed_fraction)
                } else {
                    generalization_error(w, &truth)
                }
            };
            let wm = max_margin(&d);
            let rm = rm_solve(&d);
            let (ge_max_margin, ge_rm, rm_status) = if wm.is_optimal() {
                let ge_rm = if rm.is_optimal() { Some(ge(&rm.weights)?) } else { None };
                (ge(&wm.weights)?, ge_rm, rm.status)
            } else {
                // Shifted data lost separability: neither classifier exists.
                (f64::NAN, None, wm.status)
            };
            Ok(TrialRecord {
                seed,
                level,
                eps,
                ge_max_margin,
                ge_rm,
                rm_status,
            })
        })
        .collect()
}

/// Generalization error of both classifiers over `trials` seeds and
/// `levels` budget levels.
pub fn run_generalization(cfg: &GeneralizationConfig) -> Result<ExperimentReport> {
    if cfg.trials == 0 || cfg.levels == 0 {
        return Err(Error::InvalidParameter("trials and levels must be positive".into()));
    }
    let rows: Vec<Vec<TrialRecord>> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|k| trial_rows(cfg, cfg.seed + k))
        .collect::<Result<_>>()?;
    aggregate(rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    pub n: usize,
    pub p: usize,
    pub seeds: Vec<u64>,
    pub iters: usize,
    /// Step size as a fraction of the smoothness bound.
    pub step_fraction: f64,
    /// Budgets are drawn uniformly on `[0, budget_fraction / ‖w_M‖]`.
    pub budget_fraction: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            n: 30,
            p: 10,
            seeds: vec![0],
            iters: 1_000_000,
            step_fraction: 0.9,
            budget_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistancePoint {
    pub t: usize,
    pub loss: f64,
    pub to_rm: f64,
    pub to_mm: f64,
    pub grad_norm: f64,
    pub min_robust_margin: f64,
    pub s_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRun {
    pub seed: u64,
    pub step_size: f64,
    pub mm_norm: f64,
    pub rm_norm: f64,
    /// `‖ŵ_M - ŵ_RM‖`.
    pub mm_rm_gap: f64,
    pub fit: ConvergenceFit,
    pub curve: Vec<DistancePoint>,
}

impl ConvergenceRun {
    /// Distance to the robust direction at the last checkpoint `≤ t`.
    pub fn distance_at(&self, t: usize) -> Option<&DistancePoint> {
        self.curve.iter().rev().find(|c| c.t <= t)
    }
}

/// Instance for one seed: Gaussian data, budgets uniform on
/// `[0, budget_fraction / ‖w_M‖]`.
pub fn convergence_instance(cfg: &ConvergenceConfig, seed: u64) -> Result<(Dataset, GroundTruth)> {
    let (clean, truth) = generate_gaussian(cfg.n, cfg.p, seed, 0.0)?;
    let wm = max_margin(&clean);
    if !wm.is_optimal() {
        return Err(Error::Infeasible(format!("seed {seed}: generated data not separable")));
    }
    let hi = cfg.budget_fraction / wm.objective_norm;
    let scheme = BudgetScheme::UniformRandom {
        lo: 0.0,
        hi,
        seed: seed.wrapping_add(0x9e37_79b9),
    };
    Ok((assign_budgets(&clean, scheme)?, truth))
}

pub fn run_convergence_seed(spec: &LossSpec, cfg: &ConvergenceConfig, seed: u64) -> Result<ConvergenceRun> {
    let (d, _) = convergence_instance(cfg, seed)?;
    let wm = max_margin(&d);
    let rm = rm_solve(&d);
    if !rm.is_optimal() {
        return Err(Error::Infeasible(format!(
            "seed {seed}: robust classifier status {:?}",
            rm.status
        )));
    }
    let eta = cfg.step_fraction * max_step_size(spec, &d);
    let mut gd = GdConfig::new(eta, cfg.iters);
    // exact readings at t = 10^k
    let mut t = 10;
    while t < cfg.iters {
        gd.checkpoints.push(t);
        t *= 10;
    }
    gd.checkpoints.sort_unstable();
    gd.checkpoints.dedup();
    let traj = train(spec, &d, &gd, Some(&rm.weights))?;
    let curve = traj
        .checkpoints
        .iter()
        .map(|c| {
            Ok(DistancePoint {
                t: c.t,
                loss: c.loss,
                to_rm: direction_distance(&c.weights, &rm.weights)?,
                to_mm: direction_distance(&c.weights, &wm.weights)?,
                grad_norm: c.grad_norm,
                min_robust_margin: c.min_robust_margin(),
                s_value: c.s_value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let series: Vec<(usize, f64)> = curve.iter().map(|c| (c.t, c.to_rm)).collect();
    Ok(ConvergenceRun {
        seed,
        step_size: eta,
        mm_norm: wm.objective_norm,
        rm_norm: rm.objective_norm,
        mm_rm_gap: direction_distance(&wm.weights, &rm.weights)?,
        fit: fit_log_rate_series(&series)?,
        curve,
    })
}

pub fn run_convergence(spec: &LossSpec, cfg: &ConvergenceConfig) -> Result<Vec<ConvergenceRun>> {
    cfg.seeds
        .par_iter()
        .map(|&s| run_convergence_seed(spec, cfg, s))
        .collect()
}

/// Rows `seed,t,loss,dist_rm,dist_mm,grad_norm,min_robust_margin,s_value`.
pub fn write_convergence_csv<W: std::io::Write>(runs: &[ConvergenceRun], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["seed", "t", "loss", "dist_rm", "dist_mm", "grad_norm", "min_robust_margin", "s_value"])?;
    for r in runs {
        for c in &r.curve {
            w.write_record(&[
                r.seed.to_string(),
                c.t.to_string(),
                format!("{:?}", c.loss),
                format!("{:?}", c.to_rm),
                format!("{:?}", c.to_mm),
                format!("{:?}", c.grad_norm),
                format!("{:?}", c.min_robust_margin),
                format!("{:?}", c.s_value),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
