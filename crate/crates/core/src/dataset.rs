//! Training data with per-sample perturbation budgets.
//!
//! A [`Dataset`] holds feature rows `x_i`, labels `y_i ∈ {-1, +1}` and the
//! radius `eps_i ≥ 0` of the ℓ₂ ball the adversary may move `x_i` within.
//! Budgets live on the dataset rather than on the solvers so heterogeneous
//! budgets are handled everywhere without extra plumbing.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers;

/// Upper bound on redraws per sample in rejection sampling.
pub const MAX_REDRAWS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: DVector<f64>,
    budgets: DVector<f64>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>, budgets: DVector<f64>) -> Result<Self> {
        let (n, p) = features.shape();
        if n == 0 || p == 0 {
            return Err(Error::InvalidDataset(format!("empty feature matrix ({n}x{p})")));
        }
        if labels.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} labels for {n} samples",
                labels.len()
            )));
        }
        if budgets.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} budgets for {n} samples",
                budgets.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidDataset(format!(
                "label {} at sample {i} is not -1 or +1",
                labels[i]
            )));
        }
        if let Some(i) = budgets.iter().position(|&e| !(e >= 0.0 && e.is_finite())) {
            return Err(Error::InvalidDataset(format!(
                "budget {} at sample {i} is not a finite non-negative number",
                budgets[i]
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            budgets,
        })
    }

    /// Builds a dataset from feature rows and labels with all budgets zero.
    pub fn from_rows(rows: &[Vec<f64>], labels: &[f64]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidDataset("ragged feature rows".into()));
        }
        let features = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        Self::new(
            features,
            DVector::from_column_slice(labels),
            DVector::zeros(n),
        )
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn budgets(&self) -> &DVector<f64> {
        &self.budgets
    }

    /// Feature row `i` as a column vector.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    /// `p x n` matrix whose column `i` is `y_i x_i`.
    pub fn signed_columns(&self) -> DMatrix<f64> {
        let mut z = self.features.transpose();
        for (i, mut col) in z.column_iter_mut().enumerate() {
            col *= self.labels[i];
        }
        z
    }

    pub fn max_budget(&self) -> f64 {
        self.budgets.max()
    }

    pub fn has_perturbation(&self) -> bool {
        self.budgets.iter().any(|&e| e > 0.0)
    }

    /// Returns a copy with the given budgets.
    pub fn with_budgets(&self, budgets: DVector<f64>) -> Result<Self> {
        Self::new(self.features.clone(), self.labels.clone(), budgets)
    }

    /// Returns a copy with every feature multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.features * c, self.labels.clone(), self.budgets.clone())
    }

    /// Functional margins `y_i x_iᵀ w`.
    pub fn margins(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(w)?;
        Ok((&self.features * w).component_mul(&self.labels))
    }

    /// Robust margins `y_i x_iᵀ w - eps_i ‖w‖`.
    pub fn robust_margins(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let norm = w.norm();
        let mut m = self.margins(w)?;
        m.axpy(-norm, &self.budgets, 1.0);
        Ok(m)
    }

    pub(crate) fn check_dim(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                actual: w.len(),
            });
        }
        Ok(())
    }
}

/// The separator that generated the labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub true_weights: DVector<f64>,
}

impl GroundTruth {
    pub fn new(true_weights: DVector<f64>) -> Result<Self> {
        if (true_weights.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "ground-truth weights must have unit norm, got {}",
                true_weights.norm()
            )));
        }
        Ok(Self { true_weights })
    }
}

fn gaussian_vector(rng: &mut StdRng, p: usize) -> DVector<f64> {
    DVector::from_fn(p, |_, _| rng.sample(StandardNormal))
}

/// Draws `n` standard Gaussian rows labeled by a random unit separator.
///
/// Rows whose distance to the separating hyperplane is below `min_margin`
/// (or exactly zero) are redrawn, so the result is separable by the ground
/// truth with at least that margin.
pub fn generate_gaussian(
    n: usize,
    p: usize,
    seed: u64,
    min_margin: f64,
) -> Result<(Dataset, GroundTruth)> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidParameter(format!(
            "n and p must be positive (n={n}, p={p})"
        )));
    }
    if !(min_margin >= 0.0 && min_margin.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "min_margin must be non-negative, got {min_margin}"
        )));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let w_star = loop {
        let v = gaussian_vector(&mut rng, p);
        let norm = v.norm();
        if norm > 0.0 {
            break v / norm;
        }
    };

    let mut features = DMatrix::zeros(n, p);
    let mut labels = DVector::zeros(n);
    for i in 0..n {
        let mut accepted = None;
        for _ in 0..MAX_REDRAWS {
            let x = gaussian_vector(&mut rng, p);
            let m = x.dot(&w_star);
            if m != 0.0 && m.abs() >= min_margin {
                accepted = Some((x, m.signum()));
                break;
            }
        }
        let (x, y) = accepted.ok_or_else(|| {
            Error::Generation(format!(
                "sample {i}: no draw with margin >= {min_margin} after {MAX_REDRAWS} attempts"
            ))
        })?;
        features.set_row(i, &x.transpose());
        labels[i] = y;
    }

    let data = Dataset::new(features, labels, DVector::zeros(n))?;
    Ok((data, GroundTruth::new(w_star)?))
}

/// How perturbation budgets are assigned to samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BudgetScheme {
    /// Every sample gets `eps`.
    Uniform { eps: f64 },
    /// A seed-chosen subset of `floor(fraction * n)` samples gets `eps`, the rest zero.
    Fraction { fraction: f64, eps: f64, seed: u64 },
    /// Budgets drawn i.i.d. uniform on `[lo, hi]`.
    UniformRandom { lo: f64, hi: f64, seed: u64 },
}

impl BudgetScheme {
    /// Replaces the seed of the randomized schemes.
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            Self::Uniform { eps } => Self::Uniform { eps },
            Self::Fraction { fraction, eps, .. } => Self::Fraction {
                fraction,
                eps,
                seed,
            },
            Self::UniformRandom { lo, hi, .. } => Self::UniformRandom { lo, hi, seed },
        }
    }
}

impl FromStr for BudgetScheme {
    type Err = Error;

    /// Parses `uniform:EPS`, `fraction:Q:EPS` or `uniform_random:LO:HI`.
    /// Randomized schemes get seed 0; use [`BudgetScheme::with_seed`].
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad number {t:?} in budget scheme {s:?}")))
        };
        match parts.as_slice() {
            ["uniform", eps] => Ok(Self::Uniform { eps: num(eps)? }),
            ["fraction", q, eps] => Ok(Self::Fraction {
                fraction: num(q)?,
                eps: num(eps)?,
                seed: 0,
            }),
            ["uniform_random", lo, hi] => Ok(Self::UniformRandom {
                lo: num(lo)?,
                hi: num(hi)?,
                seed: 0,
            }),
            _ => Err(Error::InvalidParameter(format!(
                "unknown budget scheme {s:?} (expected uniform:EPS, fraction:Q:EPS or uniform_random:LO:HI)"
            ))),
        }
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be non-negative, got {v}")))
    }
}

/// Returns a copy of `d` with budgets assigned according to `scheme`.
pub fn assign_budgets(d: &Dataset, scheme: BudgetScheme) -> Result<Dataset> {
    let n = d.n();
    let budgets = match scheme {
        BudgetScheme::Uniform { eps } => {
            non_negative("eps", eps)?;
            DVector::from_element(n, eps)
        }
        BudgetScheme::Fraction {
            fraction,
            eps,
            seed,
        } => {
            non_negative("eps", eps)?;
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::InvalidParameter(format!(
                    "fraction must lie in [0, 1], got {fraction}"
                )));
            }
            let k = (fraction * n as f64).floor() as usize;
            let mut rng = StdRng::seed_from_u64(seed);
            let mut b = DVector::zeros(n);
            for i in rand::seq::index::sample(&mut rng, n, k) {
                b[i] = eps;
            }
            b
        }
        BudgetScheme::UniformRandom { lo, hi, seed } => {
            non_negative("lo", lo)?;
            non_negative("hi", hi)?;
            if lo > hi {
                return Err(Error::InvalidParameter(format!("lo ({lo}) exceeds hi ({hi})")));
            }
            let mut rng = StdRng::seed_from_u64(seed);
            DVector::from_fn(n, |_, _| rng.gen_range(lo..=hi))
        }
    };
    d.with_budgets(budgets)
}

/// Moves every sample by `-eps_i y_i w*`, the worst-case shift toward the
/// true decision boundary. Labels and budgets are unchanged.
pub fn apply_adversarial_shift(d: &Dataset, g: &GroundTruth) -> Result<Dataset> {
    d.check_dim(&g.true_weights)?;
    let mut features = d.features().clone();
    for i in 0..d.n() {
        let s = d.budgets()[i] * d.labels()[i];
        if s != 0.0 {
            let shifted = features.row(i) - g.true_weights.transpose() * s;
            features.set_row(i, &shifted);
        }
    }
    Dataset::new(features, d.labels().clone(), d.budgets().clone())
}

/// True iff some `w` has `y_i x_iᵀ w > 0` for every sample.
pub fn is_linearly_separable(d: &Dataset) -> bool {
    solvers::max_margin(d).status != solvers::SolveStatus::Infeasible
}

/// Writes `y,eps,x1,...,xp` rows with round-trip float formatting.
pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    let mut header = vec!["y".to_string(), "eps".to_string()];
    header.extend((1..=d.p()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(d.p() + 2);
    for i in 0..d.n() {
        record.clear();
        record.push(format!("{}", d.labels()[i] as i64));
        record.push(format!("{:?}", d.budgets()[i]));
        record.extend(d.features().row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "y" || &header[1] != "eps" {
        return Err(parse_err(1, "header must be y,eps,x1,...,xp".into()));
    }
    let p = header.len() - 2;
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("x{}", j + 1) {
            return Err(parse_err(1, format!("unexpected column name {name:?}")));
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut budgets = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |pos| pos.line() as usize);
        if rec.len() != p + 2 {
            return Err(parse_err(line, format!("expected {} fields, found {}", p + 2, rec.len())));
        }
        let field = |k: usize| -> Result<f64> {
            let v: f64 = rec[k]
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("cannot parse {:?} as a number", &rec[k])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value {v}")));
            }
            Ok(v)
        };
        let y = field(0)?;
        if y != 1.0 && y != -1.0 {
            return Err(parse_err(line, format!("label {y} is not -1 or +1")));
        }
        let eps = field(1)?;
        if eps < 0.0 {
            return Err(parse_err(line, format!("negative budget {eps}")));
        }
        labels.push(y);
        budgets.push(eps);
        for k in 2..p + 2 {
            values.push(field(k)?);
        }
    }
    if labels.is_empty() {
        return Err(parse_err(1, "no samples".into()));
    }
    let n = labels.len();
    Dataset::new(
        DMatrix::from_row_slice(n, p, &values),
        DVector::from_vec(labels),
        DVector::from_vec(budgets),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> Dataset {
        Dataset::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[1.0, -1.0]).unwrap()
    }

    #[test]
    fn rejects_bad_labels_and_budgets() {
        let f = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        assert!(Dataset::new(f.clone(), DVector::from_vec(vec![1.0, 0.0]), DVector::zeros(2)).is_err());
        assert!(Dataset::new(
            f.clone(),
            DVector::from_vec(vec![1.0, -1.0]),
            DVector::from_vec(vec![0.0, -0.1])
        )
        .is_err());
        assert!(Dataset::new(f, DVector::from_vec(vec![1.0]), DVector::zeros(2)).is_err());
        assert!(Dataset::new(DMatrix::zeros(0, 3), DVector::zeros(0), DVector::zeros(0)).is_err());
    }

    #[test]
    fn single_sample_follows_labeling_rule() {
        let (d, g) = generate_gaussian(1, 1, 11, 0.0).unwrap();
        let m = d.features()[(0, 0)] * g.true_weights[0];
        assert_eq!(d.labels()[0], m.signum());
        assert_eq!(d.budgets()[0], 0.0);
    }

    #[test]
    fn generated_data_is_separable_by_truth() {
        let (d, g) = generate_gaussian(100, 40, 7, 0.0).unwrap();
        assert!((g.true_weights.norm() - 1.0).abs() < 1e-12);
        assert!(d.margins(&g.true_weights).unwrap().iter().all(|&m| m > 0.0));
        assert!(is_linearly_separable(&d));
    }

    #[test]
    fn min_margin_is_enforced() {
        let (d, g) = generate_gaussian(1000, 5, 3, 0.1).unwrap();
        let m = d.margins(&g.true_weights).unwrap();
        assert!(m.min() >= 0.1);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_gaussian(20, 4, 5, 0.0).unwrap();
        let b = generate_gaussian(20, 4, 5, 0.0).unwrap();
        assert_eq!(a, b);
        let c = generate_gaussian(20, 4, 6, 0.0).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn impossible_margin_reports_generation_error() {
        // |x w*| <= |x| for p = 1 and a standard normal never reaches 50.
        let err = generate_gaussian(1, 1, 0, 50.0).unwrap_err();
        assert!(matches!(err, Error::Generation(_)));
    }

    #[test]
    fn budget_schemes() {
        let (d, _) = generate_gaussian(100, 3, 1, 0.0).unwrap();
        let u = assign_budgets(&d, BudgetScheme::Uniform { eps: 0.0 }).unwrap();
        assert!(u.budgets().iter().all(|&e| e == 0.0));

        let f = assign_budgets(
            &d,
            BudgetScheme::Fraction {
                fraction: 0.4,
                eps: 0.3,
                seed: 9,
            },
        )
        .unwrap();
        assert_eq!(f.budgets().iter().filter(|&&e| e == 0.3).count(), 40);
        assert_eq!(f.budgets().iter().filter(|&&e| e == 0.0).count(), 60);

        let r = assign_budgets(
            &d,
            BudgetScheme::UniformRandom {
                lo: 0.0,
                hi: 0.25,
                seed: 2,
            },
        )
        .unwrap();
        assert!(r.budgets().iter().all(|&e| (0.0..=0.25).contains(&e)));
    }

    #[test]
    fn budget_schemes_reject_negative_inputs() {
        let d = two_point();
        assert!(assign_budgets(&d, BudgetScheme::Uniform { eps: -0.1 }).is_err());
        assert!(assign_budgets(
            &d,
            BudgetScheme::Fraction {
                fraction: 1.5,
                eps: 0.1,
                seed: 0
            }
        )
        .is_err());
        assert!(assign_budgets(
            &d,
            BudgetScheme::UniformRandom {
                lo: -1.0,
                hi: 0.1,
                seed: 0
            }
        )
        .is_err());
    }

    #[test]
    fn parse_budget_scheme() {
        assert_eq!(
            "fraction:0.4:0.3".parse::<BudgetScheme>().unwrap(),
            BudgetScheme::Fraction {
                fraction: 0.4,
                eps: 0.3,
                seed: 0
            }
        );
        assert_eq!(
            "uniform:0.5".parse::<BudgetScheme>().unwrap(),
            BudgetScheme::Uniform { eps: 0.5 }
        );
        assert!("uniform".parse::<BudgetScheme>().is_err());
        assert!("gaussian:1".parse::<BudgetScheme>().is_err());
    }

    #[test]
    fn adversarial_shift() {
        let d = two_point();
        let g = GroundTruth::new(DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(apply_adversarial_shift(&d, &g).unwrap(), d);

        let d = d.with_budgets(DVector::from_vec(vec![0.5, 0.25])).unwrap();
        let s = apply_adversarial_shift(&d, &g).unwrap();
        assert_eq!(s.row(0), DVector::from_vec(vec![0.5, 0.0]));
        assert_eq!(s.row(1), DVector::from_vec(vec![-0.75, 0.0]));
        let before = d.margins(&g.true_weights).unwrap();
        let after = s.margins(&g.true_weights).unwrap();
        for i in 0..2 {
            assert!((before[i] - after[i] - d.budgets()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn separability_of_small_sets() {
        assert!(is_linearly_separable(&two_point()));
        let clash = Dataset::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]], &[1.0, -1.0]).unwrap();
        assert!(!is_linearly_separable(&clash));
    }

    #[test]
    fn csv_rejects_invalid_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "y,eps,x1\n1,0,0.5\n0,0,1.0\n").unwrap();
        match load_csv(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected error {e}"),
        }
        std::fs::write(&path, "y,eps,x1\n1,-1,0.5\n").unwrap();
        match load_csv(&path).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("negative"));
            }
            e => panic!("unexpected error {e}"),
        }
        std::fs::write(&path, "y,eps,x1\n1,0\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 2, .. })));
        std::fs::write(&path, "y,eps,x1\n1,0,abc\n").unwrap();
        assert!(matches!(load_csv(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn csv_format_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = two_point()
            .with_budgets(DVector::from_vec(vec![0.1, 0.0]))
            .unwrap();
        save_csv(&d, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "y,eps,x1,x2\n1,0.1,1.0,0.0\n-1,0.0,-1.0,0.0\n");
    }
}
