//! Experiment configuration and the commands behind the binary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, AgaConfig, CommParams, Period, RunConfig, StepSchedule, Variant};
use crate::error::{Error, Result};
use crate::metrics::{self, TrialEnsemble, Trajectory};
use crate::problem::{self, Batch, Heterogeneity, LogisticProblem, Objective, ProblemConstants};
use crate::theory::{self, BoundInputs, CommModel, Family, Scenario, TopologyModel};
use crate::topology::{self, Topology, STOCHASTIC_TOL};

/// Gradient-norm target for the reference solve.
pub const SOLVE_TOL: f64 = 1e-10;
pub const SOLVE_MAX_ITERS: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyName {
    Ring,
    Grid,
    #[serde(alias = "exponential")]
    StaticExponential,
    OnePeerExponential,
    FullyConnected,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyName,
    #[serde(default)]
    pub rows: Option<usize>,
    #[serde(default)]
    pub cols: Option<usize>,
}

impl TopologySpec {
    pub fn build(&self, n: usize) -> Result<Topology> {
        match self.kind {
            TopologyName::Ring => topology::build_ring(n),
            TopologyName::Grid => {
                let (rows, cols) = match (self.rows, self.cols) {
                    (Some(r), Some(c)) => (r, c),
                    (Some(r), None) if r > 0 => (r, n / r),
                    (None, Some(c)) if c > 0 => (n / c, c),
                    _ => return Err(Error::Config("grid topology needs rows or cols".into())),
                };
                if rows * cols != n {
                    return Err(Error::Config(format!("grid {rows}x{cols} does not have {n} nodes")));
                }
                topology::build_grid(rows, cols)
            }
            TopologyName::StaticExponential => topology::build_static_exponential(n),
            TopologyName::OnePeerExponential => topology::build_one_peer_exponential(n),
            TopologyName::FullyConnected => topology::build_fully_connected(n),
            TopologyName::Identity => topology::build_identity(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub n: usize,
    /// Samples per node.
    pub m: usize,
    pub d: usize,
    pub heterogeneity: Heterogeneity,
    pub seed: u64,
}

impl ProblemSpec {
    pub fn build(&self) -> Result<LogisticProblem> {
        LogisticProblem::generate(self.n, self.m, self.d, self.heterogeneity, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSpec {
    Constant { gamma: f64 },
    Halving { initial: f64, every: u64 },
    /// Step size from the convergence theorem with estimated problem constants.
    Theorem1,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgaSpec {
    pub initial_period: Option<u64>,
    /// Defaults to the halving interval, or 1000 for constant steps.
    pub warmup: Option<u64>,
}

fn default_batch() -> usize {
    1
}

fn default_period() -> Period {
    Period::Infinite
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub name: String,
    pub variant: Variant,
    pub iterations: u64,
    #[serde(default = "default_period")]
    pub period: Period,
    pub step: StepSpec,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub aga: AgaSpec,
    /// Overrides the experiment topology for this run.
    #[serde(default)]
    pub topology: Option<TopologySpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSpec {
    /// Name of the run used as the reference curve.
    pub reference: String,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_rel_tol() -> f64 {
    metrics::DEFAULT_REL_TOL
}

fn default_window() -> usize {
    metrics::DEFAULT_WINDOW
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablesSpec {
    #[serde(default)]
    pub families: Vec<Family>,
    #[serde(default = "default_models")]
    pub models: Vec<TopologyModel>,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<Scenario>,
    /// Network sizes are `2^min_exp ..= 2^max_exp`.
    #[serde(default = "default_min_exp")]
    pub min_exp: u32,
    #[serde(default = "default_max_exp")]
    pub max_exp: u32,
    /// Latency and bandwidth for the absolute transient-time column.
    #[serde(default)]
    pub comm_model: Option<CommParams>,
    /// Model dimension used with `comm_model`.
    #[serde(default = "default_table_d")]
    pub d: usize,
}

fn default_models() -> Vec<TopologyModel> {
    vec![TopologyModel::Grid, TopologyModel::Ring]
}

fn default_scenarios() -> Vec<Scenario> {
    vec![Scenario::Iid, Scenario::NonIid]
}

fn default_min_exp() -> u32 {
    4
}

fn default_max_exp() -> u32 {
    10
}

fn default_table_d() -> usize {
    1
}

fn default_trials() -> usize {
    1
}

fn default_log_interval() -> u64 {
    10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_log_interval")]
    pub log_interval: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub problem: Option<ProblemSpec>,
    #[serde(default)]
    pub topology: Option<TopologySpec>,
    #[serde(default)]
    pub runs: Vec<RunSpec>,
    #[serde(default)]
    pub detection: Option<DetectionSpec>,
    #[serde(default)]
    pub comm_model: Option<CommParams>,
    #[serde(default)]
    pub tables: Option<TablesSpec>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log_interval must be at least 1".into()));
        }
        let mut names = std::collections::HashSet::new();
        for r in &self.runs {
            if !names.insert(r.name.as_str()) {
                return Err(Error::Config(format!("duplicate run name {:?}", r.name)));
            }
            if r.topology.is_none() && self.topology.is_none() {
                return Err(Error::Config(format!("run {:?} has no topology", r.name)));
            }
        }
        if !self.runs.is_empty() && self.problem.is_none() {
            return Err(Error::Config("runs need a [problem] section".into()));
        }
        if let Some(det) = &self.detection {
            if !names.contains(det.reference.as_str()) {
                return Err(Error::Config(format!(
                    "detection reference run {:?} is missing",
                    det.reference
                )));
            }
        }
        Ok(())
    }
}

/// Command-line overrides and execution settings.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    /// Worker threads for trials; `None` uses all available cores.
    pub parallel: Option<usize>,
}

impl RunOptions {
    fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(t) = self.trials {
            config.trials = t;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(o) = &self.output_dir {
            config.output_dir = o.clone();
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(p) = self.parallel {
            b = b.num_threads(p.max(1));
        }
        b.build().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Detected transient stage of one run against the reference run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub run: String,
    pub variant: String,
    pub n: usize,
    pub period: String,
    pub transient: Option<u64>,
    pub final_gap: f64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub name: String,
    pub ensemble: Option<TrialEnsemble>,
    /// `(trial, message)` for trials that failed.
    pub failures: Vec<(u64, String)>,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub files: Vec<PathBuf>,
    pub runs: Vec<RunOutcome>,
    pub summary: Vec<SummaryRow>,
}

/// Reference optimum plus the estimated constants, computed once per problem.
pub fn reference_constants(problem: &LogisticProblem, seed: u64) -> Result<ProblemConstants> {
    problem::problem_constants(problem, SOLVE_TOL, SOLVE_MAX_ITERS, 0, seed)
}

fn spectral_beta(variant: Variant, topology: &Topology) -> Result<f64> {
    match variant {
        Variant::Parallel => Ok(0.0),
        Variant::Local => Ok(1.0),
        _ => topology.beta(),
    }
}

/// Theorem-1 inputs for a run starting at zero.
pub fn bound_inputs(
    constants: &ProblemConstants,
    n: usize,
    iterations: u64,
    period: Period,
    beta: f64,
    batch: usize,
) -> BoundInputs {
    BoundInputs {
        n,
        t: iterations,
        period: period.as_f64(),
        beta,
        l: constants.l,
        sigma2: constants.sigma2 / batch as f64,
        b2: constants.b2,
        b_hat2: constants.b_hat2,
        r0: 2.0 * problem::norm_sq(&constants.x_star),
        gamma: 0.0,
        approximate: constants.approximate,
    }
}

fn build_run_config(
    spec: &RunSpec,
    experiment: &ExperimentConfig,
    topology: &Topology,
    constants: &ProblemConstants,
) -> Result<RunConfig> {
    let n = topology.n();
    let step = match &spec.step {
        StepSpec::Constant { gamma } => StepSchedule::Constant(*gamma),
        StepSpec::Halving { initial, every } => StepSchedule::Halving {
            initial: *initial,
            every: *every,
        },
        StepSpec::Theorem1 => {
            let period = match spec.variant {
                Variant::GossipAga => Period::Finite(spec.aga.initial_period.unwrap_or(4)),
                Variant::Parallel => Period::Finite(1),
                _ => spec.period,
            };
            let beta = spectral_beta(spec.variant, topology)?;
            StepSchedule::theorem1(bound_inputs(constants, n, spec.iterations, period, beta, spec.batch))?
        }
    };
    let warmup = spec.aga.warmup.unwrap_or(match step {
        StepSchedule::Halving { every, .. } => every,
        _ => AgaConfig::default().warmup,
    });
    let mut config = RunConfig::new(spec.variant, spec.iterations, spec.period, step);
    config.batch = Batch::Sampled(spec.batch);
    config.seed = experiment.seed;
    config.log_interval = experiment.log_interval;
    config.aga = AgaConfig {
        initial_period: spec.aga.initial_period.unwrap_or(AgaConfig::default().initial_period),
        warmup,
    };
    config.comm = experiment.comm_model;
    config.validate()?;
    Ok(config)
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Runs every configured run for every trial and writes the CSV outputs.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<ExperimentOutput> {
    let mut config = config.clone();
    options.apply(&mut config);
    config.validate()?;
    let problem_spec = config
        .problem
        .as_ref()
        .ok_or_else(|| Error::Config("missing [problem] section".into()))?;
    let problem = problem_spec.build()?;
    let constants = reference_constants(&problem, problem_spec.seed)?;
    fs::create_dir_all(&config.output_dir)?;
    let pool = options.pool()?;

    let mut files = Vec::new();
    let mut runs = Vec::new();
    for spec in &config.runs {
        let topo_spec = spec.topology.as_ref().or(config.topology.as_ref()).expect("validated");
        let topology = topo_spec.build(problem.nodes())?;
        let base = build_run_config(spec, &config, &topology, &constants)?;
        let results: Vec<std::result::Result<Trajectory, engine::RunFailure>> = pool.install(|| {
            (0..config.trials as u64)
                .into_par_iter()
                .map(|trial| {
                    let mut c = base.clone();
                    c.trial = trial;
                    engine::run(&problem, &topology, &c, constants.f_star)
                })
                .collect()
        });
        let mut ok = Vec::new();
        let mut all = Vec::new();
        let mut failures = Vec::new();
        for (trial, r) in results.into_iter().enumerate() {
            match r {
                Ok(t) => {
                    all.push(t.clone());
                    ok.push(t);
                }
                Err(f) => {
                    log::error!("run {} trial {trial}: {}", spec.name, f);
                    failures.push((trial as u64, f.error.to_string()));
                    all.push(f.partial);
                }
            }
        }
        let traj_path = config.output_dir.join(format!("{}_trajectories.csv", spec.name));
        metrics::write_trajectories_csv(&all, create_file(&traj_path)?)?;
        files.push(traj_path);
        let ensemble = if ok.is_empty() {
            None
        } else {
            let e = metrics::aggregate(ok)?;
            let path = config.output_dir.join(format!("{}_ensemble.csv", spec.name));
            metrics::write_ensemble_csv(&e, create_file(&path)?)?;
            files.push(path);
            Some(e)
        };
        runs.push(RunOutcome {
            name: spec.name.clone(),
            ensemble,
            failures,
        });
    }

    let mut summary = Vec::new();
    if let Some(det) = &config.detection {
        let reference = runs
            .iter()
            .find(|r| r.name == det.reference)
            .and_then(|r| r.ensemble.as_ref())
            .ok_or_else(|| Error::Config(format!("reference run {:?} produced no data", det.reference)))?;
        for r in &runs {
            let Some(e) = &r.ensemble else { continue };
            summary.push(SummaryRow {
                run: r.name.clone(),
                variant: e.meta.variant.clone(),
                n: e.meta.n,
                period: e.meta.period.clone(),
                transient: metrics::detect_transient(e, reference, det.rel_tol, det.window)?,
                final_gap: e.mean.gap.last().copied().unwrap_or(f64::NAN),
            });
        }
        let path = config.output_dir.join("summary.csv");
        let mut w = csv::Writer::from_writer(create_file(&path)?);
        w.write_record(["run", "variant", "n", "H", "transient_iter", "final_gap_mean"])?;
        for s in &summary {
            w.write_record([
                s.run.clone(),
                s.variant.clone(),
                s.n.to_string(),
                s.period.clone(),
                s.transient.map_or("none".to_string(), |k| k.to_string()),
                s.final_gap.to_string(),
            ])?;
        }
        w.flush()?;
        files.push(path);
    }
    Ok(ExperimentOutput { files, runs, summary })
}

/// Fitted exponent rows for every (family, model, scenario) in the spec.
pub fn theory_table_rows(spec: &TablesSpec) -> Result<Vec<theory::TableRow>> {
    let sizes = table_sizes(spec)?;
    let mut rows = Vec::new();
    for &family in &spec.families {
        for &model in &spec.models {
            for &scenario in &spec.scenarios {
                rows.push(theory::table_row(family, model, scenario, &sizes)?);
            }
        }
    }
    Ok(rows)
}

fn table_sizes(spec: &TablesSpec) -> Result<Vec<usize>> {
    if spec.min_exp >= spec.max_exp || spec.max_exp > 30 {
        return Err(Error::Config(format!(
            "bad size range 2^{}..2^{}",
            spec.min_exp, spec.max_exp
        )));
    }
    Ok((spec.min_exp..=spec.max_exp).map(|e| 1usize << e).collect())
}

/// Writes `theory_tables.csv` (fitted exponents) and `theory_grid.csv`
/// (per-size transient stage and time, with `H = sqrt(n)`).
pub fn emit_theory_tables(config: &ExperimentConfig, options: &RunOptions) -> Result<Vec<PathBuf>> {
    let spec = config
        .tables
        .as_ref()
        .ok_or_else(|| Error::Config("missing [tables] section".into()))?;
    let out = options.output_dir.clone().unwrap_or_else(|| config.output_dir.clone());
    fs::create_dir_all(&out)?;
    let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());

    let table_path = out.join("theory_tables.csv");
    let mut w = csv::Writer::from_writer(create_file(&table_path)?);
    w.write_record([
        "family",
        "topology_model",
        "scenario",
        "iter_exponent",
        "theta_exponent",
        "alpha_exponent",
        "expected_theta_exponent",
        "expected_alpha_exponent",
    ])?;
    for row in theory_table_rows(spec)? {
        let expected = theory::expected_exponents(row.family, row.topology_model, row.scenario);
        w.write_record([
            row.family.to_string(),
            row.topology_model.to_string(),
            row.scenario.to_string(),
            row.iter_exponent.to_string(),
            row.theta_exponent.to_string(),
            row.alpha_exponent.to_string(),
            fmt_opt(expected.map(|e| e.0)),
            fmt_opt(expected.map(|e| e.1)),
        ])?;
    }
    w.flush()?;

    let grid_path = out.join("theory_grid.csv");
    let mut w = csv::Writer::from_writer(create_file(&grid_path)?);
    w.write_record([
        "family",
        "topology_model",
        "scenario",
        "n",
        "beta",
        "H",
        "transient_iters",
        "transient_time",
    ])?;
    let sizes = table_sizes(spec)?;
    for &family in &spec.families {
        for &model in &spec.models {
            for &scenario in &spec.scenarios {
                for &n in &sizes {
                    let beta = model.beta(n);
                    let period = (n as f64).sqrt();
                    let iters = theory::transient_predict(family, n, beta, period, scenario)?;
                    let time = match spec.comm_model {
                        Some(p) => Some(theory::transient_time(
                            family,
                            &CommModel {
                                alpha: p.alpha,
                                theta: p.theta,
                                d: spec.d,
                                n,
                                degree: model.degree(),
                            },
                            beta,
                            period,
                            scenario,
                        )?),
                        None => None,
                    };
                    w.write_record([
                        family.to_string(),
                        model.to_string(),
                        scenario.to_string(),
                        n.to_string(),
                        beta.to_string(),
                        period.to_string(),
                        iters.to_string(),
                        fmt_opt(time),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(vec![table_path, grid_path])
}

/// Writes the generated dataset as per-node CSV files under `<output_dir>/dataset`.
pub fn export_dataset(config: &ExperimentConfig, options: &RunOptions) -> Result<PathBuf> {
    let spec = config
        .problem
        .as_ref()
        .ok_or_else(|| Error::Config("missing [problem] section".into()))?;
    let out = options
        .output_dir
        .clone()
        .unwrap_or_else(|| config.output_dir.clone())
        .join("dataset");
    spec.build()?.export_csv(&out)?;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CheckGroup {
    Topology,
    Gradient,
    Reductions,
    Bounds,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub group: CheckGroup,
    pub name: String,
    pub pass: bool,
    pub measured: String,
    pub expected: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{} {:?}/{}: measured {} expected {}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.group,
                c.name,
                c.measured,
                c.expected
            ));
        }
        let failed = self.checks.iter().filter(|c| !c.pass).count();
        s.push_str(&format!("{} checks, {failed} failed\n", self.checks.len()));
        s
    }
}

/// Reads a dense square matrix from CSV (no header).
pub fn read_matrix_csv(path: &Path) -> Result<nalgebra::DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| v.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad number {v:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput(format!("{} is not a square matrix", path.display())));
    }
    Ok(nalgebra::DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn stochastic_check(name: String, w: &nalgebra::DMatrix<f64>) -> CheckResult {
    let res = topology::check_doubly_stochastic(w, STOCHASTIC_TOL);
    CheckResult {
        group: CheckGroup::Topology,
        name,
        pass: res.is_ok(),
        measured: res.err().unwrap_or_else(|| "doubly stochastic".into()),
        expected: format!("row and column sums 1 within {STOCHASTIC_TOL:e}, entries >= 0"),
    }
}

fn topology_checks(extra: &[PathBuf]) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let builds: Vec<(String, Topology)> = vec![
        ("ring20".into(), topology::build_ring(20)?),
        ("ring100".into(), topology::build_ring(100)?),
        ("grid4x5".into(), topology::build_grid(4, 5)?),
        ("exponential16".into(), topology::build_static_exponential(16)?),
        ("exponential20".into(), topology::build_static_exponential(20)?),
        ("one_peer16".into(), topology::build_one_peer_exponential(16)?),
        ("fully_connected8".into(), topology::build_fully_connected(8)?),
    ];
    for (name, t) in &builds {
        for k in 0..t.schedule_period() as u64 {
            out.push(stochastic_check(format!("{name}@{k}"), &t.weights_at(k)));
        }
    }
    for (n, expect) in [(20, 0.967), (50, 0.995), (100, 0.998)] {
        let beta = topology::build_ring(n)?.beta()?;
        out.push(CheckResult {
            group: CheckGroup::Topology,
            name: format!("ring{n}_beta"),
            pass: (beta - expect).abs() <= 1e-3,
            measured: format!("{beta:.6}"),
            expected: format!("{expect} +- 0.001"),
        });
    }
    for path in extra {
        let w = read_matrix_csv(path)?;
        out.push(stochastic_check(format!("weights:{}", path.display()), &w));
    }
    Ok(out)
}

fn gradient_checks() -> Result<Vec<CheckResult>> {
    use rand::Rng;
    let p = LogisticProblem::generate(3, 40, 5, Heterogeneity::NonIid, 21)?;
    let mut rng = crate::rng::stream(99, 0);
    let mut worst: f64 = 0.0;
    let mut g = vec![0.0; 5];
    for _ in 0..20 {
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let node = rng.gen_range(0..3);
        p.local_loss_grad(node, &x, &mut g);
        for c in 0..5 {
            let h = 1e-6;
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[c] += h;
            xm[c] -= h;
            let fd = (p.local_loss(node, &xp) - p.local_loss(node, &xm)) / (2.0 * h);
            worst = worst.max((fd - g[c]).abs() / g[c].abs().max(1e-3));
        }
    }
    Ok(vec![CheckResult {
        group: CheckGroup::Gradient,
        name: "finite_difference".into(),
        pass: worst <= 1e-6,
        measured: format!("{worst:.3e}"),
        expected: "relative error <= 1e-6".into(),
    }])
}

fn reduction_checks() -> Result<Vec<CheckResult>> {
    let (n, t) = (8, 200);
    let p = LogisticProblem::generate(n, 50, 10, Heterogeneity::NonIid, 3)?;
    let ring = topology::build_ring(n)?;
    let ident = topology::build_identity(n)?;
    let full = topology::build_fully_connected(n)?;
    let cfg = |variant, period| {
        let mut c = RunConfig::new(variant, t, period, StepSchedule::Constant(0.05));
        c.seed = 17;
        c.log_interval = 1;
        c
    };
    let go = |topo: &Topology, c: RunConfig| {
        engine::run(&p, topo, &c, 0.0).map_err(|f| f.error)
    };
    let cases = [
        (
            "pga_long_period_is_gossip",
            go(&ring, cfg(Variant::GossipPga, Period::Finite(t + 1)))?,
            go(&ring, cfg(Variant::Gossip, Period::Infinite))?,
        ),
        (
            "pga_identity_is_local",
            go(&ident, cfg(Variant::GossipPga, Period::Finite(6)))?,
            go(&ring, cfg(Variant::Local, Period::Finite(6)))?,
        ),
        (
            "pga_fully_connected_is_parallel",
            go(&full, cfg(Variant::GossipPga, Period::Finite(6)))?,
            go(&ring, cfg(Variant::Parallel, Period::Infinite))?,
        ),
        (
            "pga_period_one_is_parallel",
            go(&ring, cfg(Variant::GossipPga, Period::Finite(1)))?,
            go(&ring, cfg(Variant::Parallel, Period::Infinite))?,
        ),
    ];
    Ok(cases
        .into_iter()
        .map(|(name, a, b)| CheckResult {
            group: CheckGroup::Reductions,
            name: name.into(),
            pass: a.same_path(&b),
            measured: if a.same_path(&b) { "bit-identical".into() } else { "trajectories differ".into() },
            expected: "bit-identical".into(),
        })
        .collect())
}

fn bound_checks(parallel: Option<usize>) -> Result<Vec<CheckResult>> {
    let (n, t, trials) = (20, 100, 10);
    let p = LogisticProblem::generate(n, 500, 10, Heterogeneity::NonIid, 1)?;
    let constants = reference_constants(&p, 1)?;
    let ring = topology::build_ring(n)?;
    let period = Period::Finite(16);
    let inputs = bound_inputs(&constants, n, t, period, ring.beta()?, 1);
    let step = StepSchedule::theorem1(inputs)?;
    let gamma = step.constant_value().unwrap_or(0.0);
    let bound = theory::convex_bound(&BoundInputs { gamma, ..inputs })?;
    let mut base = RunConfig::new(Variant::GossipPga, t, period, step);
    base.log_interval = t;
    let opts = RunOptions { parallel, ..Default::default() };
    let trajs: Vec<Trajectory> = opts.pool()?.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|trial| {
                let mut c = base.clone();
                c.trial = trial;
                engine::run(&p, &ring, &c, constants.f_star).map_err(|f| f.error)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let e = metrics::aggregate(trajs)?;
    let empirical = *e.mean.avg_gap.last().expect("non-empty");
    Ok(vec![CheckResult {
        group: CheckGroup::Bounds,
        name: format!("convex_bound_n{n}_T{t}"),
        pass: empirical <= bound.value,
        measured: format!("mean f(xhat) - f* = {empirical:.6e} over {trials} trials"),
        expected: format!("<= bound {:.6e}", bound.value),
    }])
}

/// Runs the selected check groups (all when `subset` is empty).
pub fn verify(subset: &[CheckGroup], weights: &[PathBuf], parallel: Option<usize>) -> Result<VerifyReport> {
    let want = |g| subset.is_empty() || subset.contains(&g);
    let mut checks = Vec::new();
    if want(CheckGroup::Topology) || !weights.is_empty() {
        checks.extend(topology_checks(weights)?);
    }
    if want(CheckGroup::Gradient) {
        checks.extend(gradient_checks()?);
    }
    if want(CheckGroup::Reductions) {
        checks.extend(reduction_checks()?);
    }
    if want(CheckGroup::Bounds) {
        checks.extend(bound_checks(parallel)?);
    }
    Ok(VerifyReport {
        pass: checks.iter().all(|c| c.pass),
        checks,
    })
}

/// Writes a report as pretty JSON.
pub fn write_report_json(report: &VerifyReport, path: &Path) -> Result<()> {
    let mut f = create_file(path)?;
    serde_json::to_writer_pretty(&mut f, report).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(f)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "tiny"
trials = 1
log_interval = 1
seed = 3

[problem]
n = 4
m = 30
d = 3
heterogeneity = "non_iid"
seed = 2

[topology]
kind = "ring"

[[runs]]
name = "par"
variant = "parallel"
iterations = 10
step = { kind = "constant", gamma = 0.1 }
"#;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.runs[0].period, Period::Infinite);
        assert_eq!(c.runs[0].batch, 1);
        c.validate().unwrap();
    }

    #[test]
    fn parses_periods_and_schedules() {
        let text = MINIMAL.replace(
            "step = { kind = \"constant\", gamma = 0.1 }",
            "period = \"inf\"\nstep = { kind = \"halving\", initial = 0.2, every = 1000 }",
        );
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(c.runs[0].step, StepSpec::Halving { initial: 0.2, every: 1000 });
        let c = ExperimentConfig::from_toml(&MINIMAL.replace("iterations = 10", "iterations = 10\nperiod = 16")).unwrap();
        assert_eq!(c.runs[0].period, Period::Finite(16));
    }

    #[test]
    fn rejects_missing_reference() {
        let text = format!("{MINIMAL}\n[detection]\nreference = \"nope\"\n");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn grid_spec_checks_size() {
        let spec = TopologySpec {
            kind: TopologyName::Grid,
            rows: Some(4),
            cols: None,
        };
        assert_eq!(spec.build(20).unwrap().n(), 20);
        assert!(spec.build(18).is_err());
    }

    #[test]
    fn corrupted_weights_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        fs::write(&path, "0.6,0.5\n0.5,0.5\n").unwrap();
        let report = verify(&[CheckGroup::Gradient], std::slice::from_ref(&path), Some(1)).unwrap();
        assert!(!report.pass);
        let failed: Vec<_> = report.checks.iter().filter(|c| !c.pass).collect();
        assert_eq!(failed.len(), 1);
        assert!(failed[0].name.contains("w.csv"));
    }
}
