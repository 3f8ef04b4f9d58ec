//! Seeded invariant suite behind `robust-margin check`, plus the independent
//! oracles it compares against.
//!
//! Every check draws its instances from an RNG derived from the suite seed
//! and the check's position, so a single check can be rerun in isolation.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::analysis::{direction_distance, fit_log_rate_series, generalization_error};
use crate::dataset::{
    apply_adversarial_shift, assign_budgets, generate_gaussian, load_csv, save_csv, BudgetScheme, Dataset,
    GroundTruth,
};
use crate::error::Result;
use crate::experiments::{run_convergence_seed, ConvergenceConfig};
use crate::loss::{
    inner_max_oracle, logistic, max_step_size, robust_loss, robust_loss_gradient, sphere_search_max, LossSpec,
};
use crate::solvers::{
    existence_bound_from, fixed_point_norm, kkt_residual, max_margin, min_constraint_slack, rm_solve,
    rm_uniform_closed_form, solve_svm, theta, SolveStatus,
};
use crate::trainer::{train, GdConfig, Trajectory};

pub type GradientFn = fn(&LossSpec, &Dataset, &DVector<f64>) -> Result<DVector<f64>>;

#[derive(Clone, Copy)]
pub struct CheckOptions {
    pub seed: u64,
    /// Smaller instance counts; skips the long-horizon checks.
    pub quick: bool,
    /// Gradient under test by the finite-difference and update checks.
    pub gradient: GradientFn,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            quick: false,
            gradient: robust_loss_gradient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
    pub seconds: f64,
}

type Outcome = std::result::Result<String, String>;

struct Check {
    name: &'static str,
    full_only: bool,
    run: fn(&Ctx) -> Outcome,
}

const CHECKS: &[Check] = &[
    Check { name: "dataset.csv_round_trip", full_only: false, run: csv_round_trip },
    Check { name: "dataset.separable_by_truth", full_only: false, run: separable_by_truth },
    Check { name: "dataset.shift_norm", full_only: false, run: shift_norm },
    Check { name: "dataset.determinism", full_only: false, run: generator_determinism },
    Check { name: "loss.inner_max_closed_form", full_only: false, run: inner_max_closed_form },
    Check { name: "loss.gradient_finite_difference", full_only: false, run: gradient_finite_difference },
    Check { name: "loss.budget_monotone", full_only: false, run: budget_monotone },
    Check { name: "loss.tail_certificate", full_only: false, run: tail_certificate },
    Check { name: "loss.descent_step", full_only: false, run: descent_step },
    Check { name: "trainer.update_exactness", full_only: false, run: update_exactness },
    Check { name: "trainer.gd_witnesses", full_only: false, run: gd_witnesses },
    Check { name: "trainer.s_increments", full_only: false, run: s_increments },
    Check { name: "solvers.svm_dual_oracle", full_only: false, run: svm_dual_oracle },
    Check { name: "solvers.rm_certificates", full_only: false, run: rm_certificates },
    Check { name: "solvers.uniform_closed_form", full_only: false, run: uniform_closed_form },
    Check { name: "solvers.existence_boundary", full_only: false, run: existence_boundary },
    Check { name: "solvers.fixed_point_monotone", full_only: false, run: fixed_point_monotone },
    Check { name: "solvers.small_instance_grid", full_only: false, run: small_instance_grid },
    Check { name: "analysis.direction_distance", full_only: false, run: direction_distance_properties },
    Check { name: "analysis.ge_scale_invariance", full_only: false, run: ge_scale_invariance },
    Check { name: "analysis.ge_monte_carlo", full_only: false, run: ge_monte_carlo },
    Check { name: "analysis.log_rate_fit", full_only: false, run: log_rate_fit },
    Check { name: "analysis.directional_convergence", full_only: true, run: directional_convergence },
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.name).collect()
}

pub fn run_checks(opts: &CheckOptions) -> Vec<CheckOutcome> {
    (0..CHECKS.len()).map(|i| run_indexed(i, opts)).collect()
}

/// Runs one named check; `None` for an unknown name.
pub fn run_check(name: &str, opts: &CheckOptions) -> Option<CheckOutcome> {
    CHECKS.iter().position(|c| c.name == name).map(|i| run_indexed(i, opts))
}

fn run_indexed(index: usize, opts: &CheckOptions) -> CheckOutcome {
    let check = &CHECKS[index];
    if check.full_only && opts.quick {
        return CheckOutcome {
            name: check.name,
            status: CheckStatus::Skipped,
            detail: "quick mode".into(),
            seconds: 0.0,
        };
    }
    let ctx = Ctx {
        opts: *opts,
        spec: logistic(),
        salt: index as u64,
    };
    let start = Instant::now();
    let (status, detail) = match (check.run)(&ctx) {
        Ok(d) => (CheckStatus::Pass, d),
        Err(d) => (CheckStatus::Fail, d),
    };
    CheckOutcome {
        name: check.name,
        status,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

struct Ctx {
    opts: CheckOptions,
    spec: LossSpec,
    salt: u64,
}

impl Ctx {
    fn rng(&self) -> StdRng {
        StdRng::seed_from_u64(self.opts.seed.wrapping_mul(1_000_003).wrapping_add(self.salt))
    }

    fn size(&self, full: usize, quick: usize) -> usize {
        if self.opts.quick {
            quick
        } else {
            full
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gaussian(rng: &mut StdRng, p: usize) -> DVector<f64> {
    DVector::from_fn(p, |_, _| rng.sample(StandardNormal))
}

/// Random nonzero `w` with log-uniform norm in `[0.1, 10]`.
fn random_weights(rng: &mut StdRng, p: usize) -> DVector<f64> {
    let g = loop {
        let g = gaussian(rng, p);
        if g.norm() > 1e-3 {
            break g;
        }
    };
    let norm = 10f64.powf(rng.gen_range(-1.0..=1.0));
    g.normalize() * norm
}

/// Gaussian data (not necessarily separable) with random budgets in `[0, 1)`.
fn loose_instance(rng: &mut StdRng, n: usize, p: usize) -> Dataset {
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
    let y = DVector::from_fn(n, |_, _| if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
    let e = DVector::from_fn(n, |_, _| if rng.gen_bool(0.6) { rng.gen_range(0.0..1.0) } else { 0.0 });
    Dataset::new(x, y, e).expect("valid random instance")
}

/// Separable Gaussian data with budgets uniform on `[0, frac/‖w_M‖]`.
fn separable_instance(rng: &mut StdRng, n: usize, p: usize, frac: f64) -> Result<(Dataset, GroundTruth)> {
    let (clean, g) = generate_gaussian(n, p, rng.gen(), 0.0)?;
    let wm = max_margin(&clean);
    let hi = frac / wm.objective_norm;
    let d = assign_budgets(&clean, BudgetScheme::UniformRandom { lo: 0.0, hi, seed: rng.gen() })?;
    Ok((d, g))
}

// ----- oracles -------------------------------------------------------------

/// Central differences of [`robust_loss`] with step `1e-6 (1 + ‖w‖)`.
pub fn fd_gradient(spec: &LossSpec, d: &Dataset, w: &DVector<f64>) -> Result<DVector<f64>> {
    let h = 1e-6 * (1.0 + w.norm());
    let mut g = DVector::zeros(w.len());
    for k in 0..w.len() {
        let mut plus = w.clone();
        let mut minus = w.clone();
        plus[k] += h;
        minus[k] -= h;
        g[k] = (robust_loss(spec, d, &plus)? - robust_loss(spec, d, &minus)?) / (2.0 * h);
    }
    Ok(g)
}

/// Hard-margin weights from accelerated projected gradient ascent on the dual
/// `max_{β ≥ 0} βᵀm - ½‖Σ β_i y_i x_i‖²`.
pub fn projected_gradient_svm(d: &Dataset, margins: &DVector<f64>, iters: usize) -> DVector<f64> {
    let v = d.signed_columns();
    let gram = v.tr_mul(&v);
    let lipschitz = gram.symmetric_eigenvalues().max().max(f64::MIN_POSITIVE);
    let step = 1.0 / lipschitz;
    let n = d.n();
    let mut beta = DVector::zeros(n);
    let mut z = beta.clone();
    let mut t = 1.0_f64;
    for _ in 0..iters {
        let grad = margins - &gram * &z;
        let next = (&z + grad * step).map(|b: f64| b.max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + (&next - &beta) * ((t - 1.0) / t_next);
        beta = next;
        t = t_next;
    }
    v * beta
}

/// Robust norm for `p = 2` by scanning unit directions at `angle_step` and
/// rounding each direction's minimal feasible norm up to the `norm_step` grid.
pub fn grid_rm_norm(d: &Dataset, angle_step: f64, norm_step: f64) -> Option<f64> {
    planar_scan(d, angle_step)
        .filter_map(|(need, _)| need)
        .map(|r| (r / norm_step).ceil() * norm_step)
        .reduce(f64::min)
}

/// Certified bracket `[lower, upper]` on the robust norm for `p = 2`.
///
/// `upper` is the best grid direction's exact norm. `lower` bounds every arc
/// of width `angle_step` around a grid direction, using
/// `y_i x_iᵀu ≤ y_i x_iᵀu_k + ‖x_i‖ angle_step/2` on the arc.
pub fn grid_rm_bracket(d: &Dataset, angle_step: f64) -> Option<(f64, f64)> {
    let mut upper = f64::INFINITY;
    let mut lower = f64::INFINITY;
    for (need, relaxed) in planar_scan(d, angle_step) {
        if let Some(r) = need {
            upper = upper.min(r);
        }
        if let Some(r) = relaxed {
            lower = lower.min(r);
        }
    }
    upper.is_finite().then_some((lower, upper))
}

/// For each grid direction `u_k`: the minimal feasible norm along `u_k`, and
/// the same quantity with every slope relaxed by `‖x_i‖ angle_step/2`.
fn planar_scan(d: &Dataset, angle_step: f64) -> impl Iterator<Item = (Option<f64>, Option<f64>)> + '_ {
    assert_eq!(d.p(), 2, "grid oracle is planar");
    let steps = (std::f64::consts::TAU / angle_step).ceil() as usize;
    let norms: Vec<f64> = (0..d.n()).map(|i| d.row(i).norm()).collect();
    (0..steps).map(move |k| {
        let a = k as f64 * angle_step;
        let u = DVector::from_vec(vec![a.cos(), a.sin()]);
        // r (y_i x_iᵀu - eps_i) ≥ 1 for every i
        let mut need = Some(0.0_f64);
        let mut relaxed = Some(0.0_f64);
        for i in 0..d.n() {
            let slope = d.labels()[i] * d.row(i).dot(&u) - d.budgets()[i];
            need = need.filter(|_| slope > 0.0).map(|r| r.max(1.0 / slope));
            let loose = slope + norms[i] * angle_step / 2.0;
            relaxed = relaxed.filter(|_| loose > 0.0).map(|r| r.max(1.0 / loose));
        }
        (need, relaxed)
    })
}

/// Fraction of `samples` Gaussian points with `sign(wᵀx) ≠ sign(w*ᵀx)`, and
/// its binomial standard error.
pub fn monte_carlo_ge(w: &DVector<f64>, g: &GroundTruth, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut wrong = 0usize;
    for _ in 0..samples {
        let x = gaussian(&mut rng, w.len());
        if (w.dot(&x) > 0.0) != (g.true_weights.dot(&x) > 0.0) {
            wrong += 1;
        }
    }
    let p = wrong as f64 / samples as f64;
    (p, (p * (1.0 - p) / samples as f64).sqrt())
}

// ----- dataset -------------------------------------------------------------

fn csv_round_trip(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let dir = std::env::temp_dir();
    let count = ctx.size(10, 3);
    for k in 0..count {
        let (clean, _) = generate_gaussian(20, 4, rng.gen(), 0.0).map_err(err)?;
        let d = assign_budgets(
            &clean,
            BudgetScheme::UniformRandom { lo: 0.0, hi: rng.gen_range(0.0..2.0), seed: rng.gen() },
        )
        .map_err(err)?;
        let path = dir.join(format!("robust-margin-check-{}-{k}.csv", std::process::id()));
        save_csv(&d, &path).map_err(err)?;
        let back = load_csv(&path);
        let _ = std::fs::remove_file(&path);
        ensure(back.map_err(err)? == d, || format!("instance {k} changed on round trip"))?;
    }
    Ok(format!("{count} datasets"))
}

fn separable_by_truth(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = ctx.size(20, 5);
    for _ in 0..count {
        let seed = rng.gen();
        let (d, g) = generate_gaussian(100, 40, seed, 0.0).map_err(err)?;
        let m = d.margins(&g.true_weights).map_err(err)?;
        ensure(m.min() > 0.0, || format!("seed {seed}: min margin {} w.r.t. w*", m.min()))?;
    }
    Ok(format!("{count} datasets"))
}

fn shift_norm(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = ctx.size(20, 5);
    let mut worst = 0.0_f64;
    for _ in 0..count {
        let (clean, g) = generate_gaussian(40, 6, rng.gen(), 0.0).map_err(err)?;
        let d = assign_budgets(
            &clean,
            BudgetScheme::Fraction { fraction: 0.5, eps: rng.gen_range(0.0..1.0), seed: rng.gen() },
        )
        .map_err(err)?;
        let s = apply_adversarial_shift(&d, &g).map_err(err)?;
        for i in 0..d.n() {
            let moved = (s.row(i) - d.row(i)).norm();
            let e = (moved - d.budgets()[i]).abs() / (1.0 + d.row(i).norm());
            worst = worst.max(e);
        }
    }
    ensure(worst < 1e-12, || format!("shift norm off by {worst:e}"))?;
    Ok(format!("{count} datasets, worst {worst:.1e}"))
}

fn generator_determinism(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    for _ in 0..ctx.size(5, 2) {
        let seed = rng.gen();
        let a = generate_gaussian(50, 8, seed, 0.1).map_err(err)?;
        let b = generate_gaussian(50, 8, seed, 0.1).map_err(err)?;
        let same = a.0.features().iter().zip(b.0.features().iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            && a.0 == b.0
            && a.1 == b.1;
        ensure(same, || format!("seed {seed} is not reproducible"))?;
    }
    Ok("bitwise identical".into())
}

// ----- loss ----------------------------------------------------------------

fn inner_max_closed_form(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = ctx.size(200, 50);
    let samples = ctx.size(10_000, 2_000);
    let mut worst = 0.0_f64;
    for k in 0..count {
        let p = rng.gen_range(1..=5);
        let x = gaussian(&mut rng, p);
        let y = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let eps = rng.gen_range(0.0..2.0);
        let w = random_weights(&mut rng, p);
        let closed = ctx.spec.value(y * x.dot(&w) - eps * w.norm());
        let seed = rng.gen();
        let oracle = inner_max_oracle(&ctx.spec, &x, y, eps, &w, samples, seed);
        let search = sphere_search_max(&ctx.spec, &x, y, eps, &w, samples, seed);
        let gap = (closed - oracle).abs();
        worst = worst.max(gap);
        ensure(gap <= 1e-12 * (1.0 + closed.abs()), || {
            format!("instance {k}: closed form {closed} vs oracle {oracle}")
        })?;
        ensure(closed >= search - 1e-12 * (1.0 + closed.abs()), || {
            format!("instance {k}: random search {search} beats {closed}")
        })?;
    }
    Ok(format!("{count} instances, worst gap {worst:.1e}"))
}

fn gradient_finite_difference(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = 100;
    let mut worst = 0.0_f64;
    for k in 0..count {
        let n = rng.gen_range(5..=20);
        let p = rng.gen_range(2..=6);
        let d = loose_instance(&mut rng, n, p);
        let w = random_weights(&mut rng, p);
        let g = (ctx.opts.gradient)(&ctx.spec, &d, &w).map_err(err)?;
        let fd = fd_gradient(&ctx.spec, &d, &w).map_err(err)?;
        let rel = (&g - &fd).norm() / (1.0 + fd.norm());
        worst = worst.max(rel);
        ensure(rel < 1e-5, || format!("instance {k}: relative error {rel:.3e}"))?;
    }
    Ok(format!("{count} instances, worst {worst:.1e}"))
}

fn budget_monotone(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = ctx.size(100, 30);
    for k in 0..count {
        let d = loose_instance(&mut rng, 15, 4);
        let w = random_weights(&mut rng, 4);
        let bigger = d.budgets().map(|e| e + if rng.gen_bool(0.5) { rng.gen_range(0.0..0.5) } else { 0.0 });
        let d2 = d.with_budgets(bigger).map_err(err)?;
        let (a, b) = (
            robust_loss(&ctx.spec, &d, &w).map_err(err)?,
            robust_loss(&ctx.spec, &d2, &w).map_err(err)?,
        );
        ensure(b >= a, || format!("instance {k}: larger budgets lowered the loss ({a} > {b})"))?;
    }
    Ok(format!("{count} instances"))
}

fn tail_certificate(ctx: &Ctx) -> Outcome {
    let tail = ctx.spec.tail;
    for k in 1..=50 {
        let u = k as f64;
        let g = -ctx.spec.derivative(u);
        let slack = 4.0 * f64::EPSILON * g;
        ensure(tail.lower(u) <= g + slack && g <= tail.upper(u) + slack, || {
            format!("u = {u}: -ℓ'(u) = {g:e} outside [{:e}, {:e}]", tail.lower(u), tail.upper(u))
        })?;
    }
    Ok("u = 1..50".into())
}

fn descent_step(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = ctx.size(100, 30);
    for k in 0..count {
        let d = loose_instance(&mut rng, 20, 5);
        let w = random_weights(&mut rng, 5);
        let eta = 0.9 * max_step_size(&ctx.spec, &d);
        let g = (ctx.opts.gradient)(&ctx.spec, &d, &w).map_err(err)?;
        let before = robust_loss(&ctx.spec, &d, &w).map_err(err)?;
        let after = robust_loss(&ctx.spec, &d, &(&w - g * eta)).map_err(err)?;
        ensure(after <= before, || format!("instance {k}: step raised the loss {before} → {after}"))?;
    }
    Ok(format!("{count} steps"))
}

// ----- trainer -------------------------------------------------------------

fn update_exactness(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let mut worst = 0.0_f64;
    for _ in 0..ctx.size(5, 2) {
        let (d, _) = separable_instance(&mut rng, 20, 5, 0.5).map_err(err)?;
        let eta = 0.9 * max_step_size(&ctx.spec, &d);
        let traj = train(&ctx.spec, &d, &GdConfig::every_iteration(eta, 30), None).map_err(err)?;
        for pair in traj.checkpoints.windows(2) {
            let g = (ctx.opts.gradient)(&ctx.spec, &d, &pair[0].weights).map_err(err)?;
            let expected = &pair[0].weights - g * eta;
            let e = (&pair[1].weights - &expected).norm() / (1.0 + expected.norm());
            worst = worst.max(e);
        }
    }
    ensure(worst < 1e-12, || format!("recorded step differs from w - η∇L by {worst:.3e}"))?;
    Ok(format!("worst {worst:.1e}"))
}

/// Trajectories on the convergence setup, paired with their robust reference.
fn witness_runs(ctx: &Ctx) -> std::result::Result<Vec<(Dataset, Trajectory)>, String> {
    let mut rng = ctx.rng();
    let iters = 100_000;
    (0..ctx.size(5, 2))
        .map(|_| {
            let (d, _) = separable_instance(&mut rng, 30, 10, 1.0).map_err(err)?;
            let rm = rm_solve(&d);
            ensure(rm.is_optimal(), || format!("robust classifier status {:?}", rm.status))?;
            let eta = 0.9 * max_step_size(&ctx.spec, &d);
            let traj = train(&ctx.spec, &d, &GdConfig::new(eta, iters), Some(&rm.weights)).map_err(err)?;
            Ok((d, traj))
        })
        .collect()
}

fn gd_witnesses(ctx: &Ctx) -> Outcome {
    let runs = witness_runs(ctx)?;
    for (k, (_, traj)) in runs.iter().enumerate() {
        let cps = &traj.checkpoints;
        let late: Vec<_> = cps.iter().filter(|c| c.t >= 100).collect();
        ensure(late.windows(2).all(|w| w[1].weight_norm > w[0].weight_norm), || {
            format!("run {k}: ‖w_t‖ not increasing past t = 100")
        })?;
        ensure(
            late.windows(2).all(|w| w[1].min_robust_margin() > w[0].min_robust_margin()),
            || format!("run {k}: min robust margin not increasing past t = 100"),
        )?;
        let (first, last) = (traj.first(), traj.last());
        ensure(last.min_robust_margin() > 0.0, || {
            format!("run {k}: min robust margin {} at T", last.min_robust_margin())
        })?;
        ensure(last.grad_norm < 1e-3 * first.grad_norm, || {
            format!("run {k}: grad norm {:.3e} vs {:.3e} at t = 0", last.grad_norm, first.grad_norm)
        })?;
        ensure(cps.windows(2).all(|w| w[1].loss <= w[0].loss), || {
            format!("run {k}: loss increased between checkpoints")
        })?;
        ensure(cps.windows(2).all(|w| w[1].s_value > w[0].s_value), || {
            format!("run {k}: s sequence not strictly increasing")
        })?;
    }
    Ok(format!("{} runs to T = {}", runs.len(), runs[0].1.last().t))
}

/// Per-iteration increment of `s_t` against the robust classifier is at
/// least `-Σ ℓ'(robust margins)`.
fn s_increments(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    for k in 0..ctx.size(5, 2) {
        let (d, _) = separable_instance(&mut rng, 30, 10, 0.8).map_err(err)?;
        let rm = rm_solve(&d);
        ensure(rm.is_optimal(), || format!("run {k}: robust classifier status {:?}", rm.status))?;
        let eta = 0.9 * max_step_size(&ctx.spec, &d);
        let traj = train(&ctx.spec, &d, &GdConfig::every_iteration(eta, 300), Some(&rm.weights)).map_err(err)?;
        for pair in traj.checkpoints.windows(2) {
            let floor: f64 = pair[0].robust_margins.iter().map(|&m| -ctx.spec.derivative(m)).sum();
            let inc = pair[1].s_value - pair[0].s_value;
            // the RM constraints hold up to the solver's feasibility tolerance
            ensure(inc > 0.0 && inc >= floor * (1.0 - 1e-6), || {
                format!("run {k}, t = {}: increment {inc:e} below {floor:e}", pair[0].t)
            })?;
        }
    }
    Ok("300 iterations per run".into())
}

// ----- solvers -------------------------------------------------------------

fn svm_dual_oracle(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = ctx.size(10, 3);
    let mut worst = 0.0_f64;
    for k in 0..count {
        let (d, _) = generate_gaussian(12, 4, rng.gen(), 0.05).map_err(err)?;
        let margins = DVector::from_fn(12, |_, _| rng.gen_range(1.0..2.0));
        let sol = solve_svm(&d, &margins).map_err(err)?;
        ensure(sol.is_optimal(), || format!("instance {k}: status {:?}", sol.status))?;
        let oracle = projected_gradient_svm(&d, &margins, 200_000);
        let e = (&sol.weights - &oracle).norm() / (1.0 + oracle.norm());
        worst = worst.max(e);
        ensure(e < 1e-6, || format!("instance {k}: solver and oracle differ by {e:.3e}"))?;
    }
    Ok(format!("{count} instances, worst {worst:.1e}"))
}

fn rm_certificates(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = ctx.size(10, 3);
    let mut worst_kkt = 0.0_f64;
    let mut min_theta = f64::INFINITY;
    for k in 0..count {
        let (d, _) = separable_instance(&mut rng, 50, 10, 0.9).map_err(err)?;
        let wm = max_margin(&d);
        let rm = rm_solve(&d);
        ensure(rm.is_optimal(), || format!("instance {k}: status {:?}", rm.status))?;
        let norm = rm.objective_norm;
        let kkt = kkt_residual(&rm, &d);
        worst_kkt = worst_kkt.max(kkt);
        ensure(kkt < 1e-6, || format!("instance {k}: KKT residual {kkt:e}"))?;
        let slack = min_constraint_slack(&rm, &d);
        ensure(slack >= -1e-8 * (1.0 + norm), || format!("instance {k}: slack {slack:e}"))?;
        let th = theta(&rm, &d);
        min_theta = min_theta.min(th);
        ensure(th > 1.0, || format!("instance {k}: θ = {th}"))?;
        let shrunk = &rm.weights * 0.999;
        let m = d.robust_margins(&shrunk).map_err(err)?;
        ensure(m.min() < 1.0, || format!("instance {k}: shrunk solution still feasible"))?;
        let upper = wm.objective_norm / (1.0 - d.max_budget() * wm.objective_norm);
        let tol = 1e-9 * upper;
        ensure(wm.objective_norm <= norm + tol && norm <= upper + tol, || {
            format!("instance {k}: ‖w_RM‖ = {norm} outside [{}, {upper}]", wm.objective_norm)
        })?;
    }
    Ok(format!("{count} instances, worst KKT {worst_kkt:.1e}, min θ {min_theta:.3}"))
}

fn uniform_closed_form(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = ctx.size(10, 3);
    let mut worst = 0.0_f64;
    for k in 0..count {
        let (clean, _) = generate_gaussian(50, 10, rng.gen(), 0.0).map_err(err)?;
        let wm = max_margin(&clean);
        let eps = 0.5 / wm.objective_norm;
        let d = assign_budgets(&clean, BudgetScheme::Uniform { eps }).map_err(err)?;
        let rm = rm_solve(&d);
        ensure(rm.is_optimal(), || format!("instance {k}: status {:?}", rm.status))?;
        let closed = rm_uniform_closed_form(&wm, eps).map_err(err)?;
        let rel = (&rm.weights - &closed).norm() / closed.norm();
        worst = worst.max(rel);
        ensure(rel < 1e-6, || format!("instance {k}: relative error {rel:e}"))?;
    }
    Ok(format!("{count} datasets, worst {worst:.1e}"))
}

fn existence_boundary(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = ctx.size(10, 3);
    for k in 0..count {
        let (clean, _) = generate_gaussian(50, 10, rng.gen(), 0.0).map_err(err)?;
        let wm = max_margin(&clean);
        let bound = existence_bound_from(&wm).map_err(err)?;
        let inside = rm_solve(&assign_budgets(&clean, BudgetScheme::Uniform { eps: 0.99 * bound }).map_err(err)?);
        let edge = rm_solve(&assign_budgets(&clean, BudgetScheme::Uniform { eps: bound }).map_err(err)?);
        ensure(inside.status == SolveStatus::Optimal, || {
            format!("instance {k}: 0.99·bound gave {:?}", inside.status)
        })?;
        ensure(edge.status == SolveStatus::Infeasible, || {
            format!("instance {k}: bound gave {:?}", edge.status)
        })?;
    }
    Ok(format!("{count} datasets"))
}

fn fixed_point_monotone(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = ctx.size(5, 2);
    for k in 0..count {
        let (d, _) = separable_instance(&mut rng, 30, 6, 0.8).map_err(err)?;
        let lo = max_margin(&d).objective_norm;
        let hi = lo / (1.0 - d.max_budget() * lo);
        let mut prev = f64::NEG_INFINITY;
        for j in 0..=20 {
            let s = lo + (hi - lo) * j as f64 / 20.0;
            let g = fixed_point_norm(&d, s)
                .map_err(err)?
                .ok_or_else(|| format!("instance {k}: g({s}) infeasible"))?;
            ensure(g >= prev * (1.0 - 1e-9), || format!("instance {k}: g decreased at s = {s}"))?;
            prev = g;
        }
    }
    Ok(format!("{count} instances × 21 grid points"))
}

fn small_instance_grid(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = ctx.size(20, 5);
    let mut worst = 0.0_f64;
    for k in 0..count {
        let d = planar_instance(&mut rng).map_err(err)?;
        let rm = rm_solve(&d);
        ensure(rm.is_optimal(), || format!("instance {k}: status {:?}", rm.status))?;
        let (lo, hi) = grid_rm_bracket(&d, 1e-3).ok_or_else(|| format!("instance {k}: grid found nothing"))?;
        let r = rm.objective_norm;
        let tol = 1e-9 * hi;
        ensure(lo - tol <= r && r <= hi + tol, || {
            format!("instance {k}: solver {r} outside grid bracket [{lo}, {hi}]")
        })?;
        worst = worst.max(hi - lo);
    }
    Ok(format!("{count} instances, widest bracket {worst:.1e}"))
}

/// `p = 2`, `n ≤ 6`, rescaled so that `‖w_M‖ = 1`, budgets up to `0.5`.
pub fn planar_instance(rng: &mut StdRng) -> Result<Dataset> {
    let n = rng.gen_range(2..=6);
    let (clean, _) = generate_gaussian(n, 2, rng.gen(), 0.0)?;
    let wm = max_margin(&clean);
    let d = clean.scaled(wm.objective_norm)?;
    assign_budgets(&d, BudgetScheme::UniformRandom { lo: 0.0, hi: 0.5, seed: rng.gen() })
}

// ----- analysis ------------------------------------------------------------

fn direction_distance_properties(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = ctx.size(200, 50);
    for k in 0..count {
        let p = rng.gen_range(2..=8);
        let (a, b) = (random_weights(&mut rng, p), random_weights(&mut rng, p));
        let d = direction_distance(&a, &b).map_err(err)?;
        let swapped = direction_distance(&b, &a).map_err(err)?;
        let scaled = direction_distance(&(&a * 3.7), &(&b * 0.02)).map_err(err)?;
        let cos = a.dot(&b) / (a.norm() * b.norm());
        ensure(d == swapped, || format!("pair {k}: not symmetric"))?;
        ensure((d - scaled).abs() < 1e-12, || format!("pair {k}: not scale invariant"))?;
        ensure((d * d - (2.0 - 2.0 * cos)).abs() < 1e-12, || format!("pair {k}: d² ≠ 2 - 2cos"))?;
    }
    Ok(format!("{count} pairs"))
}

fn ge_scale_invariance(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = ctx.size(100, 30);
    for k in 0..count {
        let p = rng.gen_range(2..=8);
        let g = GroundTruth::new(gaussian(&mut rng, p).normalize()).map_err(err)?;
        let w = random_weights(&mut rng, p);
        let c = 10f64.powf(rng.gen_range(-3.0..3.0));
        let (a, b) = (
            generalization_error(&w, &g).map_err(err)?,
            generalization_error(&(&w * c), &g).map_err(err)?,
        );
        ensure((a - b).abs() < 1e-12, || format!("pair {k}: {a} vs {b} after scaling by {c}"))?;
    }
    Ok(format!("{count} pairs"))
}

fn ge_monte_carlo(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let count = ctx.size(20, 5);
    let samples = ctx.size(1_000_000, 100_000);
    let mut worst = 0.0_f64;
    for k in 0..count {
        let p = rng.gen_range(2..=10);
        let g = GroundTruth::new(gaussian(&mut rng, p).normalize()).map_err(err)?;
        let w = random_weights(&mut rng, p);
        let exact = generalization_error(&w, &g).map_err(err)?;
        let (mc, se) = monte_carlo_ge(&w, &g, samples, rng.gen());
        let z = (exact - mc).abs() / se.max(f64::MIN_POSITIVE);
        worst = worst.max(z);
        ensure(z < 3.0, || format!("pair {k}: analytic {exact} vs Monte Carlo {mc} ± {se}"))?;
    }
    Ok(format!("{count} pairs × {samples} samples, worst {worst:.2} SE"))
}

fn log_rate_fit(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let a = rng.gen_range(0.1..5.0);
    let series: Vec<(usize, f64)> = crate::trainer::geometric_schedule(1_000_000, 1.3)
        .into_iter()
        .filter(|&t| t >= 2)
        .map(|t| (t, a / (t as f64).ln()))
        .collect();
    let fit = fit_log_rate_series(&series).map_err(err)?;
    ensure((fit.coefficient - a).abs() < 1e-12 * a, || {
        format!("recovered {} instead of {a}", fit.coefficient)
    })?;
    ensure(fit.r_squared > 1.0 - 1e-12, || format!("R² = {} on an exact series", fit.r_squared))?;
    Ok(format!("a = {a:.4} recovered"))
}

fn directional_convergence(ctx: &Ctx) -> Outcome {
    let mut rng = ctx.rng();
    let cfg = ConvergenceConfig::default();
    let count = 3;
    let mut notes = Vec::new();
    for _ in 0..count {
        let seed: u64 = rng.gen_range(0..1_000_000);
        let run = run_convergence_seed(&ctx.spec, &cfg, seed).map_err(err)?;
        let early = run.distance_at(1_000).ok_or("no checkpoint at t = 1000")?;
        let last = run.curve.last().ok_or("empty trajectory")?;
        ensure(last.to_rm < early.to_rm, || {
            format!("seed {seed}: distance {} at T vs {} at t = 1000", last.to_rm, early.to_rm)
        })?;
        if run.mm_rm_gap > 0.05 {
            ensure(last.to_rm < last.to_mm, || {
                format!("seed {seed}: closer to max-margin ({}) than robust ({})", last.to_mm, last.to_rm)
            })?;
        }
        notes.push(format!("{:.3}", last.to_rm / early.to_rm));
    }
    Ok(format!("{count} seeds, d(T)/d(1000) = {}", notes.join(", ")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut names = check_names();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), CHECKS.len());
    }

    #[test]
    fn unknown_check_is_none() {
        assert!(run_check("nope", &CheckOptions::default()).is_none());
    }

    #[test]
    fn quick_mode_skips_long_checks() {
        let opts = CheckOptions { quick: true, ..Default::default() };
        let out = run_check("analysis.directional_convergence", &opts).unwrap();
        assert_eq!(out.status, CheckStatus::Skipped);
    }

    #[test]
    fn grid_oracle_two_point() {
        // x = ±(1, 0), eps = 0.5: robust norm 2
        let d = Dataset::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[1.0, -1.0])
            .unwrap()
            .with_budgets(DVector::from_element(2, 0.5))
            .unwrap();
        let r = grid_rm_norm(&d, 1e-3, 1e-3).unwrap();
        assert!((r - 2.0).abs() <= 1e-3 + 1e-12);
        let (lo, hi) = grid_rm_bracket(&d, 1e-3).unwrap();
        assert!(lo <= 2.0 && 2.0 <= hi + 1e-12);
    }

    #[test]
    fn projected_gradient_two_point() {
        let d = Dataset::from_rows(&[vec![2.0, 0.0], vec![-1.0, 1.0]], &[1.0, 1.0]).unwrap();
        let w = projected_gradient_svm(&d, &DVector::from_element(2, 1.0), 20_000);
        let exact = solve_svm(&d, &DVector::from_element(2, 1.0)).unwrap().weights;
        assert!((w - exact).norm() < 1e-9);
    }

    #[test]
    fn monte_carlo_matches_orthogonal_case() {
        let g = GroundTruth::new(DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let (p, se) = monte_carlo_ge(&DVector::from_vec(vec![0.0, 1.0]), &g, 200_000, 3);
        assert!((p - 0.5).abs() < 4.0 * se);
    }
}
