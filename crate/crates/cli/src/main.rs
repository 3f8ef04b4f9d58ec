use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use robust_margin::analysis::ExperimentReport;
use robust_margin::dataset::{
    apply_adversarial_shift, assign_budgets, generate_gaussian, load_csv, save_csv, BudgetScheme, Dataset,
};
use robust_margin::experiments::{
    run_convergence, run_generalization, write_convergence_csv, ConvergenceConfig, ConvergenceRun,
    GeneralizationConfig,
};
use robust_margin::loss::{logistic, max_step_size, robust_loss_gradient, LossSpec};
use robust_margin::solvers::{
    kkt_residual, max_margin, min_constraint_slack, rm_existence_bound, rm_solve, theta, MarginSolution,
    SolveStatus,
};
use robust_margin::trainer::{geometric_schedule, train, GdConfig, Init, DEFAULT_CHECKPOINT_RATIO};
use robust_margin::verify::{self, CheckOptions, CheckStatus};

const TOOL: &str = "robust-margin";
const VERSION: &str = env!("CARGO_PKG_VERSION");
const THREADS_ENV: &str = "ROBUST_MARGIN_THREADS";

const EXIT_CHECK: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = TOOL, version, about = "Robust max-margin classifiers and gradient descent on the robust loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a separable Gaussian dataset with perturbation budgets.
    GenData(GenDataArgs),
    /// Run gradient descent on the robust logistic loss.
    Train(TrainArgs),
    /// Solve for the max-margin or robust max-margin classifier.
    Solve(SolveArgs),
    /// Generalization error of max-margin vs robust max-margin over budget levels.
    Fig1(Fig1Args),
    /// Directional convergence of gradient descent to the robust classifier.
    Fig2(Fig2Args),
    /// Run the invariant suite.
    Check(CheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// JSON file with any of the fields below; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Reject samples with |w*ᵀx| below this value.
    #[arg(long)]
    min_margin: Option<f64>,
    /// uniform:EPS, fraction:Q:EPS or uniform_random:LO:HI (seeded by --seed).
    #[arg(long)]
    eps_scheme: Option<String>,
    /// Move perturbed samples by their worst-case shift toward the true boundary.
    #[arg(long)]
    shift: bool,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON; defaults to the output path with `.truth.json`.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct GenDataConfig {
    n: usize,
    p: usize,
    seed: u64,
    min_margin: f64,
    eps_scheme: Option<String>,
    shift: bool,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p: 40,
            seed: 0,
            min_margin: 0.0,
            eps_scheme: None,
            shift: false,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Step size, or `auto` for 0.9 of the stability bound.
    #[arg(long)]
    eta: Option<Eta>,
    #[arg(long)]
    iters: Option<usize>,
    /// Ratio of the geometric checkpoint schedule.
    #[arg(long)]
    checkpoint_ratio: Option<f64>,
    /// Record every iteration instead of a geometric schedule.
    #[arg(long)]
    every_iteration: bool,
    /// Solution JSON whose weights define the s-sequence.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value = "trajectory.csv")]
    out: PathBuf,
    #[arg(long, default_value = "weights.json")]
    weights_out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Eta {
    Auto,
    Value(f64),
}

impl Serialize for Eta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Eta::Auto => s.serialize_str("auto"),
            Eta::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Eta {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Eta::Value(v)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl FromStr for Eta {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Eta::Auto);
        }
        s.parse::<f64>()
            .map(Eta::Value)
            .map_err(|_| format!("expected `auto` or a number, got {s:?}"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct TrainConfig {
    data: Option<PathBuf>,
    eta: Eta,
    iters: usize,
    checkpoint_ratio: f64,
    every_iteration: bool,
    reference: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: None,
            eta: Eta::Auto,
            iters: 100_000,
            checkpoint_ratio: DEFAULT_CHECKPOINT_RATIO,
            every_iteration: false,
            reference: None,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    which: Option<Which>,
    /// Defaults to `mm.json` or `rm.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
enum Which {
    Mm,
    Rm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SolveConfig {
    data: Option<PathBuf>,
    which: Which,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            data: None,
            which: Which::Rm,
        }
    }
}

#[derive(Args)]
struct Fig1Args {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// First trial seed; trials use consecutive seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    levels: Option<usize>,
    /// Top budget level as a fraction of 1/‖w_M‖.
    #[arg(long)]
    top_fraction: Option<f64>,
    #[arg(long)]
    perturbed_fraction: Option<f64>,
    /// Train on unshifted features (budgets only).
    #[arg(long)]
    no_shift: bool,
    /// Measure error on test points perturbed like the training points.
    #[arg(long)]
    test_perturbed: bool,
    #[arg(long, default_value = "fig1")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct Fig2Args {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    iters: Option<usize>,
    /// Step size as a fraction of the stability bound.
    #[arg(long)]
    step_fraction: Option<f64>,
    /// Budgets are uniform on [0, budget_fraction/‖w_M‖].
    #[arg(long)]
    budget_fraction: Option<f64>,
    #[arg(long, default_value = "fig2")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Smaller instance counts; skips the long-horizon checks.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Run only the named checks.
    #[arg(long = "only")]
    only: Vec<String>,
    /// List check names and exit.
    #[arg(long)]
    list: bool,
    /// Write the outcome table as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Mutation test: flip the sign of the gradient under test.
    #[arg(long, hide = true)]
    inject_gradient_bug: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct CheckConfig {
    seed: u64,
    quick: bool,
}

/// Header shared by every JSON artifact.
#[derive(Serialize)]
struct Artifact<'a, C: Serialize, B: Serialize> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    config: &'a C,
    #[serde(flatten)]
    body: B,
}

fn write_artifact<C: Serialize, B: Serialize>(path: &Path, command: &str, config: &C, body: B) -> anyhow::Result<()> {
    let artifact = Artifact {
        tool: TOOL,
        version: VERSION,
        command,
        config,
        body,
    };
    let mut out = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut out, &artifact)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<File> {
    File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<C> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_CHECK);
    }
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Solve(a) => solve(a),
        Command::Fig1(a) => fig1(a),
        Command::Fig2(a) => fig2(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use robust_margin::Error as E;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Infeasible(_) => EXIT_INFEASIBLE,
                E::Divergence { .. } => EXIT_DIVERGENCE,
                E::Io(_) | E::Csv(_) | E::Parse { .. } => EXIT_IO,
                _ => EXIT_CHECK,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_CHECK
}

fn gen_data(a: GenDataArgs) -> anyhow::Result<u8> {
    let mut cfg: GenDataConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.n, a.n);
    set(&mut cfg.p, a.p);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.min_margin, a.min_margin);
    if a.eps_scheme.is_some() {
        cfg.eps_scheme = a.eps_scheme;
    }
    cfg.shift |= a.shift;

    let (mut d, truth) = generate_gaussian(cfg.n, cfg.p, cfg.seed, cfg.min_margin)?;
    let scheme = cfg
        .eps_scheme
        .as_deref()
        .map(|s| BudgetScheme::from_str(s).map(|b| b.with_seed(cfg.seed)))
        .transpose()?;
    if let Some(scheme) = scheme {
        d = assign_budgets(&d, scheme)?;
    }
    if cfg.shift {
        d = apply_adversarial_shift(&d, &truth)?;
    }
    save_csv(&d, &a.out)?;
    let truth_path = a.truth_out.unwrap_or_else(|| a.out.with_extension("truth.json"));

    #[derive(Serialize)]
    struct Body {
        dataset: String,
        budget_scheme: Option<BudgetScheme>,
        true_weights: Vec<f64>,
    }
    write_artifact(
        &truth_path,
        "gen-data",
        &cfg,
        Body {
            dataset: a.out.display().to_string(),
            budget_scheme: scheme,
            true_weights: vec_of(&truth.true_weights),
        },
    )?;
    let perturbed = d.budgets().iter().filter(|&&e| e > 0.0).count();
    println!(
        "wrote {} ({} samples, {} features, {perturbed} perturbed) and {}",
        a.out.display(),
        d.n(),
        d.p(),
        truth_path.display()
    );
    Ok(0)
}

fn read_dataset(path: Option<&PathBuf>) -> anyhow::Result<Dataset> {
    let path = path.context("no dataset given (use --data or the config's `data` field)")?;
    Ok(load_csv(path)?)
}

/// Weights from a solution or final-weights JSON artifact.
fn read_weights(path: &Path) -> anyhow::Result<DVector<f64>> {
    #[derive(Deserialize)]
    struct Weights {
        weights: Vec<f64>,
        status: Option<SolveStatus>,
    }
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let w: Weights = serde_json::from_str(&text).with_context(|| format!("no weights in {}", path.display()))?;
    if let Some(status) = w.status.filter(|s| *s != SolveStatus::Optimal) {
        bail!("reference {} has status {status:?}", path.display());
    }
    Ok(DVector::from_vec(w.weights))
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<u8> {
    let mut cfg: TrainConfig = load_config(a.config.as_deref())?;
    if a.data.is_some() {
        cfg.data = a.data;
    }
    set(&mut cfg.eta, a.eta);
    set(&mut cfg.iters, a.iters);
    set(&mut cfg.checkpoint_ratio, a.checkpoint_ratio);
    cfg.every_iteration |= a.every_iteration;
    if a.reference.is_some() {
        cfg.reference = a.reference;
    }

    let spec = logistic();
    let d = read_dataset(cfg.data.as_ref())?;
    let bound = max_step_size(&spec, &d);
    let eta = match cfg.eta {
        Eta::Auto => 0.9 * bound,
        Eta::Value(v) => v,
    };
    let reference = cfg.reference.as_deref().map(read_weights).transpose()?;
    if cfg.checkpoint_ratio <= 1.0 {
        bail!("checkpoint ratio must exceed 1, got {}", cfg.checkpoint_ratio);
    }
    let gd = GdConfig {
        step_size: eta,
        max_iters: cfg.iters,
        checkpoints: if cfg.every_iteration {
            (0..=cfg.iters).collect()
        } else {
            geometric_schedule(cfg.iters, cfg.checkpoint_ratio)
        },
        init: Init::Default,
    };
    let traj = train(&spec, &d, &gd, reference.as_ref())?;
    traj.write_csv(BufWriter::new(create(&a.out)?))?;

    let last = traj.last();
    #[derive(Serialize)]
    struct Body {
        step_size: f64,
        step_bound: f64,
        step_within_bound: bool,
        iterations: usize,
        loss: f64,
        grad_norm: f64,
        weight_norm: f64,
        min_robust_margin: f64,
        trajectory: String,
        weights: Vec<f64>,
    }
    write_artifact(
        &a.weights_out,
        "train",
        &cfg,
        Body {
            step_size: eta,
            step_bound: bound,
            step_within_bound: traj.step_within_bound,
            iterations: last.t,
            loss: last.loss,
            grad_norm: last.grad_norm,
            weight_norm: last.weight_norm,
            min_robust_margin: last.min_robust_margin(),
            trajectory: a.out.display().to_string(),
            weights: vec_of(&last.weights),
        },
    )?;
    if !traj.step_within_bound {
        eprintln!("warning: step size {eta:e} exceeds the stability bound {bound:e}");
    }
    println!("step size          {eta:.6e} (bound {bound:.6e})");
    println!("iterations         {}", last.t);
    println!("final grad_norm    {:.6e}", last.grad_norm);
    println!("min robust margin  {:.6e}", last.min_robust_margin());
    println!("‖w_T‖              {:.6e}", last.weight_norm);
    Ok(0)
}

fn solve(a: SolveArgs) -> anyhow::Result<u8> {
    let mut cfg: SolveConfig = load_config(a.config.as_deref())?;
    if a.data.is_some() {
        cfg.data = a.data;
    }
    set(&mut cfg.which, a.which);
    let d = read_dataset(cfg.data.as_ref())?;
    let sol = match cfg.which {
        Which::Mm => max_margin(&d),
        Which::Rm => rm_solve(&d),
    };
    let out = a.out.unwrap_or_else(|| {
        PathBuf::from(match cfg.which {
            Which::Mm => "mm.json",
            Which::Rm => "rm.json",
        })
    });
    let bound = rm_existence_bound(&d).ok();
    // max-margin certificates refer to the unit-margin constraints
    let problem = match cfg.which {
        Which::Mm => d.with_budgets(DVector::zeros(d.n()))?,
        Which::Rm => d,
    };
    let d = &problem;
    write_artifact(&out, "solve", &cfg, SolutionBody::new(&sol, d, bound))?;

    if !sol.is_optimal() {
        println!("status             {:?}", sol.status);
        if let Some(b) = bound {
            println!("existence bound    {b:.6e} (max budget {:.6e})", d.max_budget());
        }
        return Ok(match sol.status {
            SolveStatus::Infeasible => EXIT_INFEASIBLE,
            _ => EXIT_CHECK,
        });
    }
    println!("status             optimal");
    println!("‖w‖                {:.12e}", sol.objective_norm);
    println!("|S|                {}", sol.support_set.len());
    println!("kkt residual       {:.3e}", kkt_residual(&sol, d));
    println!("theta              {:.6}", theta(&sol, d));
    match bound {
        Some(b) => println!("existence bound    {b:.6e}"),
        None => println!("existence bound    none (data not separable)"),
    }
    Ok(0)
}

#[derive(Serialize)]
struct SolutionBody {
    status: SolveStatus,
    objective_norm: Option<f64>,
    weights: Vec<f64>,
    duals: Vec<f64>,
    support_set: Vec<usize>,
    kkt_residual: Option<f64>,
    min_constraint_slack: Option<f64>,
    theta: Option<f64>,
    existence_bound: Option<f64>,
}

impl SolutionBody {
    fn new(sol: &MarginSolution, d: &Dataset, bound: Option<f64>) -> Self {
        let optimal = sol.is_optimal();
        let finite = |v: f64| Some(v).filter(|x| x.is_finite());
        Self {
            status: sol.status,
            objective_norm: finite(sol.objective_norm),
            weights: vec_of(&sol.weights),
            duals: vec_of(&sol.duals),
            support_set: sol.support_set.clone(),
            kkt_residual: optimal.then(|| kkt_residual(sol, d)),
            min_constraint_slack: optimal.then(|| min_constraint_slack(sol, d)),
            theta: if optimal { finite(theta(sol, d)) } else { None },
            existence_bound: bound,
        }
    }
}

fn fig1(a: Fig1Args) -> anyhow::Result<u8> {
    let mut cfg: GeneralizationConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.n, a.n);
    set(&mut cfg.p, a.p);
    set(&mut cfg.trials, a.trials);
    set(&mut cfg.seed, a.seed);
    set(&mut cfg.levels, a.levels);
    set(&mut cfg.top_fraction, a.top_fraction);
    set(&mut cfg.perturbed_fraction, a.perturbed_fraction);
    if a.no_shift {
        cfg.shift = false;
    }
    cfg.test_perturbed |= a.test_perturbed;

    let report = run_generalization(&cfg)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    report.write_levels_csv(BufWriter::new(create(&a.out_dir.join("levels.csv"))?))?;
    report.write_trials_csv(BufWriter::new(create(&a.out_dir.join("trials.csv"))?))?;
    write_artifact(&a.out_dir.join("summary.json"), "fig1", &cfg, Fig1Body::new(&report))?;
    print_levels(&report);
    Ok(0)
}

#[derive(Serialize)]
struct Fig1Body {
    levels: Vec<Fig1Level>,
}

#[derive(Serialize)]
struct Fig1Level {
    level: usize,
    eps: f64,
    trials: usize,
    rm_trials: usize,
    ge_mm_mean: Option<f64>,
    ge_mm_se: Option<f64>,
    ge_rm_mean: Option<f64>,
    ge_rm_se: Option<f64>,
}

impl Fig1Body {
    fn new(r: &ExperimentReport) -> Self {
        let finite = |v: f64| Some(v).filter(|x| x.is_finite());
        Self {
            levels: r
                .levels
                .iter()
                .map(|l| Fig1Level {
                    level: l.level,
                    eps: l.eps,
                    trials: l.trials,
                    rm_trials: l.rm_trials,
                    ge_mm_mean: finite(l.ge_max_margin.mean),
                    ge_mm_se: finite(l.ge_max_margin.se),
                    ge_rm_mean: l.ge_rm.map(|m| m.mean),
                    ge_rm_se: l.ge_rm.map(|m| m.se),
                })
                .collect(),
        }
    }
}

fn print_levels(r: &ExperimentReport) {
    println!("{:>5} {:>10} {:>9} {:>10} {:>10}", "level", "eps", "rm/total", "GE mm", "GE rm");
    for l in &r.levels {
        let show = |v: Option<f64>| v.filter(|x| x.is_finite()).map_or_else(|| "-".to_string(), |x| format!("{x:.5}"));
        println!(
            "{:>5} {:>10.5} {:>4}/{:<4} {:>10} {:>10}",
            l.level,
            l.eps,
            l.rm_trials,
            l.trials,
            show(Some(l.ge_max_margin.mean)),
            show(l.ge_rm.map(|m| m.mean))
        );
    }
}

fn fig2(a: Fig2Args) -> anyhow::Result<u8> {
    let mut cfg: ConvergenceConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.n, a.n);
    set(&mut cfg.p, a.p);
    set(&mut cfg.seeds, a.seeds);
    set(&mut cfg.iters, a.iters);
    set(&mut cfg.step_fraction, a.step_fraction);
    set(&mut cfg.budget_fraction, a.budget_fraction);

    let spec: LossSpec = logistic();
    let runs = run_convergence(&spec, &cfg)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    write_convergence_csv(&runs, BufWriter::new(create(&a.out_dir.join("curves.csv"))?))?;

    #[derive(Serialize)]
    struct Body<'a> {
        runs: Vec<RunSummary<'a>>,
    }
    #[derive(Serialize)]
    struct RunSummary<'a> {
        seed: u64,
        step_size: f64,
        mm_norm: f64,
        rm_norm: f64,
        mm_rm_gap: f64,
        fit: &'a robust_margin::analysis::ConvergenceFit,
        final_dist_rm: f64,
        final_dist_mm: f64,
    }
    let summaries = runs
        .iter()
        .map(|r| {
            let last = r.curve.last().expect("trajectory has checkpoints");
            RunSummary {
                seed: r.seed,
                step_size: r.step_size,
                mm_norm: r.mm_norm,
                rm_norm: r.rm_norm,
                mm_rm_gap: r.mm_rm_gap,
                fit: &r.fit,
                final_dist_rm: last.to_rm,
                final_dist_mm: last.to_mm,
            }
        })
        .collect();
    write_artifact(&a.out_dir.join("summary.json"), "fig2", &cfg, Body { runs: summaries })?;
    for r in &runs {
        print_run(r);
    }
    Ok(0)
}

fn print_run(r: &ConvergenceRun) {
    let last = r.curve.last().expect("trajectory has checkpoints");
    println!("seed {}", r.seed);
    println!("  mm-vs-rm direction gap   {:.4}", r.mm_rm_gap);
    if let Some(early) = r.distance_at(1_000) {
        println!("  dist to rm at t={:<8} {:.6}", early.t, early.to_rm);
    }
    println!("  dist to rm at t={:<8} {:.6}", last.t, last.to_rm);
    println!("  dist to mm at t={:<8} {:.6}", last.t, last.to_mm);
    println!(
        "  fit d(t) = a/log t       a = {:.4}, R² = {:.4} ({} checkpoints)",
        r.fit.coefficient, r.fit.r_squared, r.fit.checkpoints_used
    );
}

fn flipped_gradient(
    spec: &LossSpec,
    d: &Dataset,
    w: &DVector<f64>,
) -> robust_margin::Result<DVector<f64>> {
    robust_loss_gradient(spec, d, w).map(|g| -g)
}

fn check(a: CheckArgs) -> anyhow::Result<u8> {
    if a.list {
        for name in verify::check_names() {
            println!("{name}");
        }
        return Ok(0);
    }
    let mut cfg: CheckConfig = load_config(a.config.as_deref())?;
    set(&mut cfg.seed, a.seed);
    cfg.quick |= a.quick;
    let opts = CheckOptions {
        seed: cfg.seed,
        quick: cfg.quick,
        gradient: if a.inject_gradient_bug {
            flipped_gradient
        } else {
            robust_loss_gradient
        },
    };

    let outcomes = if a.only.is_empty() {
        verify::run_checks(&opts)
    } else {
        a.only
            .iter()
            .map(|name| verify::run_check(name, &opts).with_context(|| format!("unknown check {name:?}")))
            .collect::<anyhow::Result<Vec<_>>>()?
    };
    for o in &outcomes {
        let tag = match o.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "SKIP",
        };
        println!("{tag}  {:<36} {:>7.2}s  {}", o.name, o.seconds, o.detail);
    }
    let failed: Vec<&str> = outcomes
        .iter()
        .filter(|o| o.status == CheckStatus::Fail)
        .map(|o| o.name)
        .collect();
    if let Some(path) = &a.report {
        #[derive(Serialize)]
        struct Body<'a> {
            passed: bool,
            outcomes: &'a [verify::CheckOutcome],
        }
        write_artifact(
            path,
            "check",
            &cfg,
            Body {
                passed: failed.is_empty(),
                outcomes: &outcomes,
            },
        )?;
    }
    if failed.is_empty() {
        println!("all {} checks passed", outcomes.len());
        Ok(0)
    } else {
        eprintln!("failed: {}", failed.join(", "));
        Ok(EXIT_CHECK)
    }
}
