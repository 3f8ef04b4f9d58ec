//! Direction metrics, generalization error and trial aggregation.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::GroundTruth;
use crate::error::{Error, Result};
use crate::solvers::SolveStatus;
use crate::trainer::{direction, Trajectory};

/// Checkpoints before this iteration are ignored by [`fit_log_rate`].
pub const FIT_MIN_ITERATION: usize = 100;
pub const FIT_MIN_CHECKPOINTS: usize = 5;

/// `‖w1/‖w1‖ - w2/‖w2‖‖`, in `[0, 2]`.
pub fn direction_distance(w1: &DVector<f64>, w2: &DVector<f64>) -> Result<f64> {
    Ok((direction(w1)? - direction(w2)?).norm())
}

/// Probability that `sign(wᵀx) ≠ sign(w*ᵀx)` for isotropic Gaussian `x`,
/// i.e. the angle between `w` and `w*` divided by π.
pub fn generalization_error(w: &DVector<f64>, g: &GroundTruth) -> Result<f64> {
    if w.len() != g.true_weights.len() {
        return Err(Error::DimensionMismatch {
            expected: g.true_weights.len(),
            actual: w.len(),
        });
    }
    let cos = direction(w)?.dot(&direction(&g.true_weights)?).clamp(-1.0, 1.0);
    Ok(cos.acos() / std::f64::consts::PI)
}

/// Least-squares fit of `d(t) ≈ a / log t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFit {
    pub coefficient: f64,
    pub r_squared: f64,
    pub checkpoints_used: usize,
}

/// Fits `a` as the mean of `d(t) log t` over `t ≥ 100` and reports the R² of
/// `d(t) = a / log t` on those points (clamped to `[0, 1]`, zero when `d` is
/// constant).
pub fn fit_log_rate_series(series: &[(usize, f64)]) -> Result<ConvergenceFit> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= FIT_MIN_ITERATION)
        .map(|&(t, d)| ((t as f64).ln(), d))
        .collect();
    if pts.len() < FIT_MIN_CHECKPOINTS {
        return Err(Error::TooFewCheckpoints {
            needed: FIT_MIN_CHECKPOINTS,
            available: pts.len(),
        });
    }
    let k = pts.len() as f64;
    let coefficient = pts.iter().map(|(lt, d)| d * lt).sum::<f64>() / k;
    let mean = pts.iter().map(|(_, d)| d).sum::<f64>() / k;
    let ss_tot: f64 = pts.iter().map(|(_, d)| (d - mean).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|(lt, d)| (d - coefficient / lt).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(ConvergenceFit {
        coefficient,
        r_squared,
        checkpoints_used: pts.len(),
    })
}

/// Distance from each checkpoint's direction to `target`, as `(t, d(t))`.
pub fn distance_series(traj: &Trajectory, target: &DVector<f64>) -> Result<Vec<(usize, f64)>> {
    traj.checkpoints
        .iter()
        .map(|c| Ok((c.t, direction_distance(&c.weights, target)?)))
        .collect()
}

pub fn fit_log_rate(traj: &Trajectory, target: &DVector<f64>) -> Result<ConvergenceFit> {
    let series: Vec<(usize, f64)> = traj
        .checkpoints
        .iter()
        .filter(|c| c.t >= FIT_MIN_ITERATION)
        .map(|c| Ok((c.t, direction_distance(&c.weights, target)?)))
        .collect::<Result<_>>()?;
    fit_log_rate_series(&series)
}

/// One trial at one budget level of the generalization experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub level: usize,
    pub eps: f64,
    pub ge_max_margin: f64,
    /// `None` when the robust classifier does not exist at this budget.
    pub ge_rm: Option<f64>,
    pub rm_status: SolveStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    /// Sample mean and standard error; the error is zero for one value.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let k = values.len() as f64;
        let mean = values.iter().sum::<f64>() / k;
        let se = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
            (var / k).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, se })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    /// Mean budget across trials at this level.
    pub eps: f64,
    pub trials: usize,
    /// Trials with a robust solution; only these enter the means.
    pub rm_trials: usize,
    pub ge_max_margin: MeanSe,
    pub ge_rm: Option<MeanSe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub trials: Vec<TrialRecord>,
    pub levels: Vec<LevelSummary>,
}

/// Groups trials by level and computes means and standard errors. Trials
/// without a robust solution are excluded from both classifiers' means.
pub fn aggregate(trials: Vec<TrialRecord>) -> Result<ExperimentReport> {
    if trials.is_empty() {
        return Err(Error::InvalidParameter("no trials to aggregate".into()));
    }
    let mut trials = trials;
    trials.sort_by(|a, b| a.level.cmp(&b.level).then(a.seed.cmp(&b.seed)));
    let mut by_level: BTreeMap<usize, Vec<&TrialRecord>> = BTreeMap::new();
    for t in &trials {
        by_level.entry(t.level).or_default().push(t);
    }
    let levels = by_level
        .into_iter()
        .map(|(level, rows)| {
            let usable: Vec<&&TrialRecord> = rows.iter().filter(|r| r.ge_rm.is_some()).collect();
            let mm: Vec<f64> = usable.iter().map(|r| r.ge_max_margin).collect();
            let rm: Vec<f64> = usable.iter().filter_map(|r| r.ge_rm).collect();
            let eps = rows.iter().map(|r| r.eps).sum::<f64>() / rows.len() as f64;
            LevelSummary {
                level,
                eps,
                trials: rows.len(),
                rm_trials: usable.len(),
                ge_max_margin: MeanSe::of(&mm).unwrap_or(MeanSe {
                    mean: f64::NAN,
                    se: f64::NAN,
                }),
                ge_rm: MeanSe::of(&rm),
            }
        })
        .collect();
    Ok(ExperimentReport { trials, levels })
}

impl ExperimentReport {
    /// Per-trial rows: `seed,level,eps,ge_mm,ge_rm,rm_status`.
    pub fn write_trials_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["seed", "level", "eps", "ge_mm", "ge_rm", "rm_status"])?;
        for t in &self.trials {
            w.write_record(&[
                t.seed.to_string(),
                t.level.to_string(),
                format!("{:?}", t.eps),
                format!("{:?}", t.ge_max_margin),
                t.ge_rm.map_or_else(String::new, |v| format!("{v:?}")),
                serde_json::to_value(t.rm_status)?
                    .as_str()
                    .unwrap_or_default()
                    .to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per level: `level,eps,trials,rm_trials,ge_mm_mean,ge_mm_se,ge_rm_mean,ge_rm_se`.
    pub fn write_levels_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record([
            "level", "eps", "trials", "rm_trials", "ge_mm_mean", "ge_mm_se", "ge_rm_mean", "ge_rm_se",
        ])?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:?}"));
        for l in &self.levels {
            w.write_record(&[
                l.level.to_string(),
                format!("{:?}", l.eps),
                l.trials.to_string(),
                l.rm_trials.to_string(),
                format!("{:?}", l.ge_max_margin.mean),
                format!("{:?}", l.ge_max_margin.se),
                opt(l.ge_rm.map(|m| m.mean)),
                opt(l.ge_rm.map(|m| m.se)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn distance_examples() {
        let w = v(&[0.3, -1.0, 2.0]);
        assert!(direction_distance(&(&w * 4.0), &w).unwrap() < 1e-15);
        assert!((direction_distance(&(-&w), &w).unwrap() - 2.0).abs() < 1e-15);
        let d = direction_distance(&v(&[1.0, 0.0]), &v(&[0.0, 3.0])).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert!(direction_distance(&v(&[0.0, 0.0]), &w.rows(0, 2).into_owned()).is_err());
    }

    #[test]
    fn ge_examples() {
        let g = GroundTruth::new(v(&[1.0, 0.0])).unwrap();
        assert_eq!(generalization_error(&v(&[2.0, 0.0]), &g).unwrap(), 0.0);
        assert!((generalization_error(&v(&[0.0, 1.0]), &g).unwrap() - 0.5).abs() < 1e-15);
        assert!((generalization_error(&v(&[1.0, 1.0]), &g).unwrap() - 0.25).abs() < 1e-15);
        assert!(generalization_error(&v(&[0.0, 0.0]), &g).is_err());
        assert!(generalization_error(&v(&[1.0, 0.0, 0.0]), &g).is_err());
    }

    #[test]
    fn ge_matches_monte_carlo_at_45_degrees() {
        let g = GroundTruth::new(v(&[1.0, 0.0])).unwrap();
        let w = v(&[1.0, 1.0]);
        let mut rng = StdRng::seed_from_u64(42);
        let trials = 1_000_000;
        let mut wrong = 0usize;
        for _ in 0..trials {
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            if (x + y).signum() != x.signum() {
                wrong += 1;
            }
        }
        let mc = wrong as f64 / trials as f64;
        assert!((mc - generalization_error(&w, &g).unwrap()).abs() < 0.002);
    }

    #[test]
    fn log_rate_exact_model() {
        let series: Vec<(usize, f64)> = crate::trainer::geometric_schedule(1_000_000, 1.3)
            .into_iter()
            .filter(|&t| t > 1)
            .map(|t| (t, 3.0 / (t as f64).ln()))
            .collect();
        let fit = fit_log_rate_series(&series).unwrap();
        assert!((fit.coefficient - 3.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(series.iter().filter(|(t, _)| *t >= 100).count() == fit.checkpoints_used);
    }

    #[test]
    fn log_rate_constant_sequence() {
        let series: Vec<(usize, f64)> = (2..30).map(|k| (1usize << k, 0.3)).collect();
        let fit = fit_log_rate_series(&series).unwrap();
        assert!(fit.r_squared < 0.05);
    }

    #[test]
    fn log_rate_needs_enough_points() {
        let series = vec![(10, 1.0), (100, 0.5), (200, 0.4)];
        assert!(matches!(
            fit_log_rate_series(&series),
            Err(Error::TooFewCheckpoints { needed: 5, available: 2 })
        ));
    }

    fn record(seed: u64, level: usize, mm: f64, rm: Option<f64>) -> TrialRecord {
        TrialRecord {
            seed,
            level,
            eps: 0.1 * level as f64,
            ge_max_margin: mm,
            ge_rm: rm,
            rm_status: if rm.is_some() {
                SolveStatus::Optimal
            } else {
                SolveStatus::Infeasible
            },
        }
    }

    #[test]
    fn aggregate_single_and_duplicates() {
        let r = aggregate(vec![record(1, 0, 0.2, Some(0.1))]).unwrap();
        assert_eq!(r.levels[0].ge_max_margin, MeanSe { mean: 0.2, se: 0.0 });
        let r = aggregate(vec![record(1, 0, 0.2, Some(0.1)), record(1, 0, 0.2, Some(0.1))]).unwrap();
        assert_eq!(r.levels[0].ge_rm, Some(MeanSe { mean: 0.1, se: 0.0 }));
        assert!(aggregate(vec![]).is_err());
    }

    #[test]
    fn aggregate_twenty_trials() {
        let rows: Vec<TrialRecord> = (0..20)
            .map(|k| record(k, 1, 0.01 * k as f64, Some(0.02 * k as f64)))
            .collect();
        let r = aggregate(rows).unwrap();
        let l = &r.levels[0];
        // mean of 0.00..0.19 = 0.095
        assert!((l.ge_max_margin.mean - 0.095).abs() < 1e-15);
        assert!((l.ge_rm.unwrap().mean - 0.19).abs() < 1e-15);
        // sd of 0..19 step 0.01 = 0.01·sqrt(35)
        assert!((l.ge_max_margin.se - 0.01 * 35f64.sqrt() / 20f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn aggregate_excludes_infeasible() {
        let r = aggregate(vec![
            record(1, 2, 0.3, None),
            record(2, 2, 0.1, Some(0.05)),
            record(1, 0, 0.2, Some(0.2)),
        ])
        .unwrap();
        assert_eq!(r.levels.len(), 2);
        let l = &r.levels[1];
        assert_eq!((l.trials, l.rm_trials), (2, 1));
        assert_eq!(l.ge_max_margin.mean, 0.1);
        assert_eq!(r.trials[0].level, 0);
    }

    #[test]
    fn aggregate_mean_recomputable_from_rows() {
        let rows: Vec<TrialRecord> = (0..7)
            .map(|k| record(k, (k % 3) as usize, 0.05 * k as f64, Some(0.01 * k as f64)))
            .collect();
        let r = aggregate(rows).unwrap();
        for l in &r.levels {
            let vals: Vec<f64> = r
                .trials
                .iter()
                .filter(|t| t.level == l.level)
                .map(|t| t.ge_max_margin)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((mean - l.ge_max_margin.mean).abs() < 1e-15);
        }
    }
}
