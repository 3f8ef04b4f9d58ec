//! Full-batch gradient descent on the robust loss with checkpointed
//! diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::{LossSpec, ZERO_NORM};

/// Norm of the default starting point.
pub const DEFAULT_INIT_SCALE: f64 = 1e-3;
pub const DEFAULT_CHECKPOINT_RATIO: f64 = 1.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `1e-3 · X̄/‖X̄‖` with `X̄ = Σ y_i x_i`.
    Default,
    Weights(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub step_size: f64,
    pub max_iters: usize,
    pub checkpoints: Vec<usize>,
    pub init: Init,
}

impl GdConfig {
    /// Geometric checkpoints with the default ratio and the default start.
    pub fn new(step_size: f64, max_iters: usize) -> Self {
        Self {
            step_size,
            max_iters,
            checkpoints: geometric_schedule(max_iters, DEFAULT_CHECKPOINT_RATIO),
            init: Init::Default,
        }
    }

    /// Records every iteration; only sensible for short runs.
    pub fn every_iteration(step_size: f64, max_iters: usize) -> Self {
        Self {
            checkpoints: (0..=max_iters).collect(),
            ..Self::new(step_size, max_iters)
        }
    }

    pub fn with_init(mut self, w0: &DVector<f64>) -> Self {
        self.init = Init::Weights(w0.iter().copied().collect());
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "checkpoints must be strictly increasing".into(),
            ));
        }
        if self.checkpoints.last().is_some_and(|&t| t > self.max_iters) {
            return Err(Error::InvalidParameter(
                "checkpoint beyond max_iters".into(),
            ));
        }
        Ok(())
    }
}

/// `0`, `T` and `ceil(ratio^k)` for every `k` with the value below `T`.
pub fn geometric_schedule(max_iters: usize, ratio: f64) -> Vec<usize> {
    assert!(ratio > 1.0, "checkpoint ratio must exceed 1");
    let mut out = vec![0];
    let mut x = 1.0_f64;
    while (x.ceil() as usize) < max_iters {
        let t = x.ceil() as usize;
        if t > *out.last().unwrap() {
            out.push(t);
        }
        x *= ratio;
    }
    if max_iters > 0 {
        out.push(max_iters);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: usize,
    pub weights: DVector<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub weight_norm: f64,
    pub s_value: f64,
    pub robust_margins: DVector<f64>,
}

impl Checkpoint {
    pub fn min_robust_margin(&self) -> f64 {
        self.robust_margins.min()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub step_size: f64,
    /// Whether `step_size` was below the smoothness-based bound.
    pub step_within_bound: bool,
    pub checkpoints: Vec<Checkpoint>,
}

impl Trajectory {
    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("trajectory has at least one checkpoint")
    }

    pub fn first(&self) -> &Checkpoint {
        &self.checkpoints[0]
    }

    /// Writes `t,loss,grad_norm,weight_norm,s_value,min_robust_margin`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["t", "loss", "grad_norm", "weight_norm", "s_value", "min_robust_margin"])?;
        for c in &self.checkpoints {
            w.write_record(&[
                c.t.to_string(),
                format!("{:?}", c.loss),
                format!("{:?}", c.grad_norm),
                format!("{:?}", c.weight_norm),
                format!("{:?}", c.s_value),
                format!("{:?}", c.min_robust_margin()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes one row per checkpoint: `t,w1,...,wp`.
    pub fn write_weights_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let p = self.first().weights.len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=p).map(|j| format!("w{j}")));
        w.write_record(&header)?;
        for c in &self.checkpoints {
            let mut row = vec![c.t.to_string()];
            row.extend(c.weights.iter().map(|v| format!("{v:?}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Deterministic nonzero start `scale · X̄/‖X̄‖`, or `scale · e_1` if `X̄ = 0`.
pub fn default_init(d: &Dataset) -> DVector<f64> {
    let mean = d.features().tr_mul(d.labels());
    let norm = mean.norm();
    if norm > 0.0 {
        mean * (DEFAULT_INIT_SCALE / norm)
    } else {
        let mut e = DVector::zeros(d.p());
        e[0] = DEFAULT_INIT_SCALE;
        e
    }
}

/// `w / ‖w‖`.
pub fn direction(w: &DVector<f64>) -> Result<DVector<f64>> {
    let norm = w.norm();
    if !(norm > 0.0) {
        return Err(Error::Domain("direction of the zero vector".into()));
    }
    Ok(w / norm)
}

/// `(1/eta) · referenceᵀ w_t` at every checkpoint.
pub fn s_sequence(traj: &Trajectory, reference: &DVector<f64>, eta: f64) -> Vec<f64> {
    traj.checkpoints
        .iter()
        .map(|c| reference.dot(&c.weights) / eta)
        .collect()
}

/// Loss, gradient and robust margins at `w`, with the data laid out for
/// repeated evaluation.
pub(crate) struct Evaluator<'a> {
    spec: &'a LossSpec,
    /// Column `i` is `y_i x_i`.
    signed: DMatrix<f64>,
    budgets: DVector<f64>,
    perturbed: bool,
}

pub(crate) struct Evaluation {
    pub loss: f64,
    pub gradient: DVector<f64>,
    pub robust_margins: DVector<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &'a LossSpec, d: &Dataset) -> Self {
        Self {
            spec,
            signed: d.signed_columns(),
            budgets: d.budgets().clone(),
            perturbed: d.has_perturbation(),
        }
    }

    pub fn eval(&self, w: &DVector<f64>) -> Result<Evaluation> {
        let norm = w.norm();
        if self.perturbed && norm < ZERO_NORM {
            return Err(Error::Domain(
                "robust loss gradient is undefined at w = 0 when some budget is positive".into(),
            ));
        }
        let mut margins = self.signed.tr_mul(w);
        margins.axpy(-norm, &self.budgets, 1.0);
        let mut loss = 0.0;
        let coeffs = margins.map(|m| {
            loss += self.spec.value(m);
            self.spec.derivative(m)
        });
        let mut gradient = &self.signed * &coeffs;
        if self.perturbed {
            gradient.axpy(-coeffs.dot(&self.budgets) / norm, w, 1.0);
        }
        Ok(Evaluation {
            loss,
            gradient,
            robust_margins: margins,
        })
    }
}

/// Runs exactly `cfg.max_iters` steps of `w ← w - η ∇L_eps(w)`.
///
/// `s_value` is measured against `reference` when given, otherwise against
/// the direction of the final iterate. A step size above
/// [`crate::loss::max_step_size`] is allowed and flagged on the trajectory;
/// such a run fails with a divergence error as soon as the loss exceeds its
/// starting value, i.e. the iterates leave the initial sublevel set that a
/// stable step size keeps them in.
pub fn train(
    spec: &LossSpec,
    d: &Dataset,
    cfg: &GdConfig,
    reference: Option<&DVector<f64>>,
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut w = match &cfg.init {
        Init::Default => default_init(d),
        Init::Weights(v) => DVector::from_column_slice(v),
    };
    d.check_dim(&w)?;
    if let Some(r) = reference {
        d.check_dim(r)?;
    }
    let bound = crate::loss::max_step_size(spec, d);
    let eta = cfg.step_size;
    let evaluator = Evaluator::new(spec, d);
    let mut initial_loss = f64::INFINITY;

    let mut checkpoints = Vec::with_capacity(cfg.checkpoints.len());
    let mut next = cfg.checkpoints.iter().peekable();
    for t in 0..=cfg.max_iters {
        let e = evaluator.eval(&w)?;
        let grad_norm = e.gradient.norm();
        if !e.loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Divergence {
                iteration: t,
                reason: format!("loss {} / gradient norm {grad_norm}", e.loss),
            });
        }
        if t == 0 {
            initial_loss = e.loss;
        } else if eta > bound && e.loss > initial_loss {
            return Err(Error::Divergence {
                iteration: t,
                reason: format!(
                    "loss {:e} above its initial value {initial_loss:e} with step size {eta:e} > bound {bound:e}",
                    e.loss
                ),
            });
        }
        if next.peek() == Some(&&t) {
            next.next();
            checkpoints.push(Checkpoint {
                t,
                weights: w.clone(),
                loss: e.loss,
                grad_norm,
                weight_norm: w.norm(),
                s_value: f64::NAN,
                robust_margins: e.robust_margins,
            });
        }
        if t == cfg.max_iters {
            break;
        }
        w.axpy(-eta, &e.gradient, 1.0);
    }

    let reference = match reference {
        Some(r) => r.clone(),
        None => direction(&w)?,
    };
    for c in &mut checkpoints {
        c.s_value = reference.dot(&c.weights) / eta;
    }
    Ok(Trajectory {
        step_size: eta,
        step_within_bound: eta < bound,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{logistic, robust_loss, robust_loss_gradient};

    fn two_point(eps: f64) -> Dataset {
        Dataset::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[1.0, -1.0])
            .unwrap()
            .with_budgets(DVector::from_element(2, eps))
            .unwrap()
    }

    #[test]
    fn schedule_shape() {
        let s = geometric_schedule(1000, 1.3);
        assert_eq!(s[0], 0);
        assert_eq!(*s.last().unwrap(), 1000);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(&s[..4], &[0, 1, 2, 3]);
        assert_eq!(geometric_schedule(0, 1.3), vec![0]);
        assert_eq!(geometric_schedule(1, 1.3), vec![0, 1]);
    }

    #[test]
    fn direction_examples() {
        let d = direction(&DVector::from_vec(vec![2.0, 0.0])).unwrap();
        assert_eq!(d, DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(direction(&d).unwrap(), d);
        let w = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        assert!((direction(&(&w * 7.5)).unwrap() - direction(&w).unwrap()).norm() < 1e-15);
        assert!(direction(&DVector::zeros(2)).is_err());
    }

    #[test]
    fn single_step_is_exact() {
        let l = logistic();
        let d = two_point(0.2);
        let w0 = DVector::from_vec(vec![0.3, 0.4]);
        let cfg = GdConfig::every_iteration(0.5, 1).with_init(&w0);
        let traj = train(&l, &d, &cfg, None).unwrap();
        let g = robust_loss_gradient(&l, &d, &w0).unwrap();
        assert_eq!(traj.checkpoints[1].weights, &w0 - g * 0.5);
        assert_eq!(traj.checkpoints[0].loss, robust_loss(&l, &d, &w0).unwrap());
    }

    #[test]
    fn separable_run_grows_norm_and_shrinks_gradient() {
        let l = logistic();
        let d = two_point(0.0);
        let cfg = GdConfig {
            checkpoints: vec![0, 5000, 10_000],
            ..GdConfig::new(0.5, 10_000)
        };
        let traj = train(&l, &d, &cfg, None).unwrap();
        let [c0, c1, c2] = &traj.checkpoints[..] else { panic!() };
        assert!(c2.weight_norm > c1.weight_norm && c1.weight_norm > c0.weight_norm);
        assert!(c2.grad_norm < c0.grad_norm);
        assert!(traj.step_within_bound);
    }

    #[test]
    fn zero_start_with_budget_is_a_domain_error() {
        let cfg = GdConfig::new(0.1, 10).with_init(&DVector::zeros(2));
        let err = train(&logistic(), &two_point(0.1), &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn huge_step_is_a_divergence() {
        let (d, _) = crate::dataset::generate_gaussian(100, 40, 0, 0.0).unwrap();
        let err = train(&logistic(), &d, &GdConfig::new(1e6, 1000), None).unwrap_err();
        assert!(matches!(err, Error::Divergence { iteration, .. } if iteration > 0));
    }

    #[test]
    fn step_above_bound_is_flagged() {
        let d = two_point(0.1);
        let eta = 1.5 * crate::loss::max_step_size(&logistic(), &d);
        let traj = train(&logistic(), &d, &GdConfig::new(eta, 100), None).unwrap();
        assert!(!traj.step_within_bound);
    }

    #[test]
    fn invalid_configs() {
        let d = two_point(0.0);
        let l = logistic();
        assert!(train(&l, &d, &GdConfig::new(0.0, 10), None).is_err());
        let bad = GdConfig {
            checkpoints: vec![0, 5, 5],
            ..GdConfig::new(0.1, 10)
        };
        assert!(train(&l, &d, &bad, None).is_err());
        let beyond = GdConfig {
            checkpoints: vec![0, 11],
            ..GdConfig::new(0.1, 10)
        };
        assert!(train(&l, &d, &beyond, None).is_err());
    }

    #[test]
    fn s_sequence_properties() {
        let l = logistic();
        let d = Dataset::from_rows(&[vec![1.0, 0.0, 0.0], vec![-1.0, 0.5, 0.0]], &[1.0, -1.0]).unwrap();
        let traj = train(&l, &d, &GdConfig::new(0.3, 200), None).unwrap();
        // Orthogonal to every sample and to the start: constant.
        let orth = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let s = s_sequence(&traj, &orth, 0.3);
        assert!(s.iter().all(|&v| v == s[0]));
        let r = DVector::from_vec(vec![1.0, -0.4, 0.0]);
        let s1 = s_sequence(&traj, &r, 0.3);
        let s3 = s_sequence(&traj, &(&r * 3.0), 0.3);
        for (a, b) in s1.iter().zip(&s3) {
            assert!((3.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn default_init_is_small_and_aligned() {
        let d = two_point(0.0);
        let w0 = default_init(&d);
        assert!((w0.norm() - DEFAULT_INIT_SCALE).abs() < 1e-15);
        assert!(w0[0] > 0.0);
    }
}
