//! The synchronous iteration: local SGD half-steps followed by either an exact
//! global average or one gossip round. Parallel, Gossip and Local SGD are the
//! same loop with a different communication rule.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::metrics::{consensus_sq, MetricsSink, Record, RunMeta, SyncEvent, Trajectory};
use crate::problem::{norm_sq, Batch, Objective};
use crate::rng;
use crate::theory::{self, BoundInputs, CommMethod, CommModel};
use crate::topology::Topology;

/// Smallest loss the adaptive rule divides by.
pub const LOSS_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Parallel,
    Gossip,
    Local,
    GossipPga,
    GossipAga,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Parallel => "parallel",
            Variant::Gossip => "gossip",
            Variant::Local => "local",
            Variant::GossipPga => "gossip_pga",
            Variant::GossipAga => "gossip_aga",
        })
    }
}

/// Global averaging period; `Infinite` never averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Period {
    Finite(u64),
    Infinite,
}

impl Period {
    pub fn as_f64(self) -> f64 {
        match self {
            Period::Finite(h) => h as f64,
            Period::Infinite => f64::INFINITY,
        }
    }

    /// Whether iteration `k` ends with a global average, i.e. `(k + 1) mod H == 0`.
    pub fn syncs_after(self, k: u64) -> bool {
        match self {
            Period::Finite(h) => (k + 1).is_multiple_of(h),
            Period::Infinite => false,
        }
    }

    fn validate(self) -> Result<()> {
        match self {
            Period::Finite(0) => Err(Error::InvalidPeriod(0)),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Period::Finite(h) => write!(f, "{h}"),
            Period::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(Period::Infinite),
            t => t
                .parse::<u64>()
                .map(Period::Finite)
                .map_err(|_| Error::Config(format!("bad period {s:?}"))),
        }
    }
}

impl Serialize for Period {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Period::Finite(h) => s.serialize_u64(*h),
            Period::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(h) => Ok(Period::Finite(h)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum StepSchedule {
    Constant(f64),
    /// `initial * 0.5^(k / every)`.
    Halving { initial: f64, every: u64 },
    /// Constant step chosen from the convergence theorem's inputs.
    Theorem1 { inputs: BoundInputs, gamma: f64 },
}

impl StepSchedule {
    pub fn theorem1(inputs: BoundInputs) -> Result<Self> {
        let gamma = theory::theorem1_stepsize(&inputs)?;
        Ok(StepSchedule::Theorem1 { inputs, gamma })
    }

    /// The step size if it never changes.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            StepSchedule::Constant(g) | StepSchedule::Theorem1 { gamma: g, .. } => Some(*g),
            StepSchedule::Halving { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let (g, every) = match self {
            StepSchedule::Constant(g) | StepSchedule::Theorem1 { gamma: g, .. } => (*g, 1),
            StepSchedule::Halving { initial, every } => (*initial, *every),
        };
        if !(g >= 0.0 && g.is_finite()) || every == 0 {
            return Err(Error::InvalidInput(format!("bad step schedule {self:?}")));
        }
        Ok(())
    }
}

pub fn step_size_at(schedule: &StepSchedule, k: u64) -> f64 {
    match schedule {
        StepSchedule::Constant(g) | StepSchedule::Theorem1 { gamma: g, .. } => *g,
        StepSchedule::Halving { initial, every } => {
            let halvings = (k / every).min(i32::MAX as u64) as i32;
            initial * 0.5f64.powi(halvings)
        }
    }
}

/// Adaptive-period settings: starting period and warm-up length in iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgaConfig {
    pub initial_period: u64,
    pub warmup: u64,
}

impl Default for AgaConfig {
    fn default() -> Self {
        AgaConfig {
            initial_period: 4,
            warmup: 1000,
        }
    }
}

/// Latency and per-scalar transfer time used to accumulate modeled seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommParams {
    pub alpha: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub iterations: u64,
    /// Used by `gossip_pga` and `local`; ignored by the others.
    pub period: Period,
    pub step: StepSchedule,
    pub batch: Batch,
    pub seed: u64,
    pub trial: u64,
    pub aga: AgaConfig,
    pub log_interval: u64,
    /// Common starting point; zero when absent.
    pub init: Option<Vec<f64>>,
    pub comm: Option<CommParams>,
}

impl RunConfig {
    pub fn new(variant: Variant, iterations: u64, period: Period, step: StepSchedule) -> Self {
        RunConfig {
            variant,
            iterations,
            period,
            step,
            batch: Batch::Sampled(1),
            seed: 0,
            trial: 0,
            aga: AgaConfig::default(),
            log_interval: 10,
            init: None,
            comm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidInput("T must be at least 1".into()));
        }
        if self.log_interval == 0 {
            return Err(Error::InvalidInput("log interval must be at least 1".into()));
        }
        if let Batch::Sampled(0) = self.batch {
            return Err(Error::InvalidInput("batch size must be at least 1".into()));
        }
        self.period.validate()?;
        if self.variant == Variant::GossipAga && self.aga.initial_period == 0 {
            return Err(Error::InvalidPeriod(0));
        }
        self.step.validate()
    }

    /// The period in force before the first step.
    pub fn initial_period(&self) -> Period {
        match self.variant {
            Variant::Parallel => Period::Finite(1),
            Variant::Gossip => Period::Infinite,
            Variant::Local | Variant::GossipPga => self.period,
            Variant::GossipAga => Period::Finite(self.aga.initial_period),
        }
    }
}

/// Counter, period and warm-up loss estimate of the adaptive rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AgaState {
    pub counter: u64,
    pub period: u64,
    pub f_init: f64,
}

/// Applies one adaptive-period update at a global-average iteration `k` with
/// node-averaged mini-batch loss `loss`. Returns a warning when the loss had
/// to be floored.
pub fn aga_update(state: AgaState, k: u64, loss: f64, cfg: &AgaConfig) -> (AgaState, Option<String>) {
    let (loss, warning) = if loss > 0.0 {
        (loss, None)
    } else {
        (
            LOSS_FLOOR,
            Some(format!("iteration {k}: nonpositive loss {loss} clamped to {LOSS_FLOOR}")),
        )
    };
    let mut next = AgaState { counter: 0, ..state };
    if k < cfg.warmup {
        next.f_init = 0.5 * (state.f_init + loss);
    } else {
        let h = (state.f_init / loss * cfg.initial_period as f64).ceil();
        next.period = if h >= 1.0 { h.min(u64::MAX as f64) as u64 } else { 1 };
    }
    (next, warning)
}

/// Everything that evolves during a run.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerState {
    pub dim: usize,
    /// Node-major parameters, `n * dim` values.
    pub x: Vec<f64>,
    pub iter: u64,
    pub period: Period,
    pub aga: AgaState,
    /// `sum_{s <= iter} xbar^(s)`.
    pub running_sum: Vec<f64>,
    pub model_time: f64,
}

impl WorkerState {
    pub fn nodes(&self) -> usize {
        self.x.len() / self.dim
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        average_into(&self.x, &mut out, self.dim);
        out
    }

    /// `xhat = running_sum / (iter + 1)`.
    pub fn running_avg(&self) -> Vec<f64> {
        let c = (self.iter + 1) as f64;
        self.running_sum.iter().map(|v| v / c).collect()
    }
}

/// `out = sum_j (1/n) x_j`, accumulated in node order exactly like a gossip row.
fn average_into(x: &[f64], out: &mut [f64], dim: usize) {
    let n = x.len() / dim;
    let w = 1.0 / n as f64;
    out.iter_mut().for_each(|v| *v = 0.0);
    for xj in x.chunks_exact(dim) {
        for (o, v) in out.iter_mut().zip(xj) {
            *o += w * v;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    /// Iteration index `k` of the step just taken.
    pub iter: u64,
    pub gamma: f64,
    pub synced: bool,
    /// Node-averaged mini-batch loss at the pre-step parameters.
    pub mean_loss: f64,
}

/// One run in progress.
pub struct Simulation<'a, P: Objective + ?Sized> {
    problem: &'a P,
    topology: &'a Topology,
    config: RunConfig,
    state: WorkerState,
    rngs: Vec<ChaCha8Rng>,
    half: Vec<f64>,
    grads: Vec<f64>,
    xbar: Vec<f64>,
    comm: Option<CommModel>,
}

impl<'a, P: Objective + ?Sized> Simulation<'a, P> {
    pub fn new(problem: &'a P, topology: &'a Topology, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (n, d) = (problem.nodes(), problem.dim());
        if topology.n() != n {
            return Err(Error::InvalidInput(format!(
                "topology has {} nodes, problem has {n}",
                topology.n()
            )));
        }
        let init = config.init.clone().unwrap_or_else(|| vec![0.0; d]);
        if init.len() != d {
            return Err(Error::InvalidInput(format!(
                "initial vector has length {}, expected {d}",
                init.len()
            )));
        }
        let x: Vec<f64> = (0..n).flat_map(|_| init.iter().copied()).collect();
        let seed = rng::trial_seed(config.seed, config.trial);
        let rngs = (0..n as u64).map(|i| rng::stream(seed, i)).collect();
        let comm = match config.comm {
            Some(p) => {
                let model = CommModel {
                    alpha: p.alpha,
                    theta: p.theta,
                    d,
                    n,
                    degree: topology.max_degree(),
                };
                model.validate()?;
                Some(model)
            }
            None => None,
        };
        let mut xbar = vec![0.0; d];
        average_into(&x, &mut xbar, d);
        let period = config.initial_period();
        let state = WorkerState {
            dim: d,
            x,
            iter: 0,
            period,
            aga: AgaState {
                counter: 0,
                period: config.aga.initial_period,
                f_init: 0.0,
            },
            running_sum: xbar.clone(),
            model_time: 0.0,
        };
        Ok(Simulation {
            problem,
            topology,
            config,
            state,
            rngs,
            half: vec![0.0; n * d],
            grads: vec![0.0; n * d],
            xbar,
            comm,
        })
    }

    pub fn state(&self) -> &WorkerState {
        &self.state
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Stochastic gradients used by the last step, node-major.
    pub fn last_gradients(&self) -> &[f64] {
        &self.grads
    }

    pub fn is_done(&self) -> bool {
        self.state.iter >= self.config.iterations
    }

    /// Whether the step at the current iteration will end in a global average.
    fn will_sync(&self) -> bool {
        let k = self.state.iter;
        match self.config.variant {
            Variant::GossipAga => self.state.aga.counter + 1 >= self.state.aga.period,
            _ => self.state.period.syncs_after(k),
        }
    }

    /// Advances from iteration `k` to `k + 1`.
    pub fn step(&mut self, sink: &mut dyn MetricsSink) -> Result<StepInfo> {
        let k = self.state.iter;
        let d = self.state.dim;
        let n = self.problem.nodes();
        let gamma = step_size_at(&self.config.step, k);
        let mut loss_sum = 0.0;
        for i in 0..n {
            let xi = &self.state.x[i * d..(i + 1) * d];
            let gi = &mut self.grads[i * d..(i + 1) * d];
            loss_sum += self
                .problem
                .sample_loss_grad(i, xi, self.config.batch, &mut self.rngs[i], gi);
            for ((h, x), g) in self.half[i * d..(i + 1) * d].iter_mut().zip(xi).zip(gi.iter()) {
                *h = x - gamma * *g;
            }
        }
        let mean_loss = loss_sum / n as f64;

        let synced = self.will_sync();
        if synced {
            average_into(&self.half, &mut self.xbar, d);
            for xi in self.state.x.chunks_exact_mut(d) {
                xi.copy_from_slice(&self.xbar);
            }
        } else if self.config.variant == Variant::Local {
            self.state.x.copy_from_slice(&self.half);
        } else {
            self.topology.mix_into(k, &self.half, &mut self.state.x, d);
        }
        if self.state.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iter: k });
        }

        self.state.model_time += self.step_cost(synced);
        if self.config.variant == Variant::GossipAga {
            if synced {
                let (next, warning) = aga_update(self.state.aga, k, mean_loss, &self.config.aga);
                if let Some(w) = warning {
                    log::warn!("{w}");
                    sink.warning(w);
                }
                self.state.aga = next;
                self.state.period = Period::Finite(next.period);
            } else {
                self.state.aga.counter += 1;
            }
        }
        if synced {
            sink.sync_event(SyncEvent {
                iter: k,
                loss: mean_loss,
                period_after: self.state.period,
            });
        }

        average_into(&self.state.x, &mut self.xbar, d);
        for (s, v) in self.state.running_sum.iter_mut().zip(&self.xbar) {
            *s += v;
        }
        self.state.iter = k + 1;
        Ok(StepInfo {
            iter: k,
            gamma,
            synced,
            mean_loss,
        })
    }

    fn step_cost(&self, synced: bool) -> f64 {
        let Some(model) = &self.comm else { return 0.0 };
        if synced {
            theory::comm_time_per_iter(model, CommMethod::AllReduce)
        } else if self.config.variant != Variant::Local && self.topology.communicates() {
            theory::comm_time_per_iter(model, CommMethod::Gossip)
        } else {
            0.0
        }
    }

    /// Measurements at the current iteration against optimal value `f_star`.
    pub fn record(&self) -> Record {
        self.record_against(0.0)
    }

    pub fn record_against(&self, f_star: f64) -> Record {
        let d = self.state.dim;
        let mut g = vec![0.0; d];
        let f_bar = self.problem.loss_grad(&self.xbar, &mut g);
        let f_hat = self.problem.loss(&self.state.running_avg());
        Record {
            iter: self.state.iter,
            consensus_sq: consensus_sq(&self.state.x, d),
            gap: f_bar - f_star,
            avg_gap: f_hat - f_star,
            grad_sq: norm_sq(&g),
            model_time: self.state.model_time,
            current_period: self.state.period,
        }
    }

    fn should_log(&self) -> bool {
        let k = self.state.iter;
        k.is_multiple_of(self.config.log_interval) || k == self.config.iterations
    }

    /// Steps until `T`, logging on the configured grid. Logs the current
    /// iteration first when it is on the grid and nothing has run yet.
    pub fn run_to_end(&mut self, f_star: f64, sink: &mut dyn MetricsSink) -> Result<()> {
        if self.state.iter == 0 {
            sink.record(self.record_against(f_star));
        }
        while !self.is_done() {
            self.step(sink)?;
            if self.should_log() {
                sink.record(self.record_against(f_star));
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> RunMeta {
        RunMeta {
            variant: self.config.variant.to_string(),
            topology: self.topology.kind().to_string(),
            n: self.problem.nodes(),
            period: match self.config.variant {
                Variant::GossipAga => format!("aga{}", self.config.aga.initial_period),
                _ => self.config.initial_period().to_string(),
            },
            seed: self.config.seed,
            trial: self.config.trial,
        }
    }

    /// Writes the state, including generator positions, as CSV.
    pub fn snapshot<W: Write>(&self, out: W) -> Result<()> {
        let s = &self.state;
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record([
            "state".to_string(),
            s.iter.to_string(),
            s.period.to_string(),
            s.aga.counter.to_string(),
            s.aga.period.to_string(),
            s.aga.f_init.to_string(),
            s.model_time.to_string(),
        ])?;
        let mut row = vec!["sum".to_string()];
        row.extend(s.running_sum.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
        for (i, r) in self.rngs.iter().enumerate() {
            let mut row = vec!["node".to_string(), i.to_string(), r.get_word_pos().to_string()];
            row.extend(s.node(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuilds a simulation from a snapshot written by [`Simulation::snapshot`].
    pub fn restore<R: Read>(
        problem: &'a P,
        topology: &'a Topology,
        config: RunConfig,
        input: R,
    ) -> Result<Self> {
        let mut sim = Simulation::new(problem, topology, config)?;
        let d = sim.state.dim;
        let n = problem.nodes();
        let bad = |m: &str| Error::Snapshot(m.to_string());
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad(&format!("bad number {s:?}"))) };
        let int = |s: &str| -> Result<u64> { s.parse().map_err(|_| bad(&format!("bad integer {s:?}"))) };
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(input);
        let mut seen = vec![false; n];
        let mut header = false;
        for rec in r.records() {
            let rec = rec?;
            match rec.get(0) {
                Some("state") if rec.len() == 7 => {
                    sim.state.iter = int(&rec[1])?;
                    sim.state.period = rec[2].parse()?;
                    sim.state.aga.counter = int(&rec[3])?;
                    sim.state.aga.period = int(&rec[4])?;
                    sim.state.aga.f_init = num(&rec[5])?;
                    sim.state.model_time = num(&rec[6])?;
                    header = true;
                }
                Some("sum") if rec.len() == d + 1 => {
                    for (c, v) in sim.state.running_sum.iter_mut().enumerate() {
                        *v = num(&rec[c + 1])?;
                    }
                }
                Some("node") if rec.len() == d + 3 => {
                    let i = int(&rec[1])? as usize;
                    if i >= n {
                        return Err(bad(&format!("node {i} out of range")));
                    }
                    let pos: u128 = rec[2].parse().map_err(|_| bad("bad generator position"))?;
                    sim.rngs[i].set_word_pos(pos);
                    for c in 0..d {
                        sim.state.x[i * d + c] = num(&rec[c + 3])?;
                    }
                    seen[i] = true;
                }
                _ => return Err(bad("unrecognized row")),
            }
        }
        if !header || seen.iter().any(|s| !s) {
            return Err(bad("incomplete snapshot"));
        }
        average_into(&sim.state.x, &mut sim.xbar, d);
        Ok(sim)
    }
}

/// A failed run together with everything recorded before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Trajectory,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} logged points)",
            self.error,
            self.partial.records.len()
        )
    }
}

impl std::error::Error for RunFailure {}

/// Runs `config.iterations` steps and returns the logged trajectory.
pub fn run<P: Objective + ?Sized>(
    problem: &P,
    topology: &Topology,
    config: &RunConfig,
    f_star: f64,
) -> std::result::Result<Trajectory, RunFailure> {
    let mut sim = match Simulation::new(problem, topology, config.clone()) {
        Ok(s) => s,
        Err(error) => {
            return Err(RunFailure {
                error,
                partial: Trajectory::default(),
            })
        }
    };
    let mut traj = Trajectory::new(sim.meta());
    match sim.run_to_end(f_star, &mut traj) {
        Ok(()) => Ok(traj),
        Err(error) => Err(RunFailure {
            error,
            partial: traj,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Heterogeneity, LogisticProblem};
    use crate::topology::{build_fully_connected, build_identity, build_ring};

    fn problem(n: usize) -> LogisticProblem {
        LogisticProblem::generate(n, 20, 3, Heterogeneity::NonIid, 5).unwrap()
    }

    fn config(variant: Variant, t: u64, period: Period) -> RunConfig {
        let mut c = RunConfig::new(variant, t, period, StepSchedule::Constant(0.1));
        c.log_interval = 1;
        c.seed = 11;
        c
    }

    #[test]
    fn halving_schedule() {
        let s = StepSchedule::Halving {
            initial: 0.2,
            every: 1000,
        };
        assert_eq!(step_size_at(&s, 2500), 0.05);
        assert_eq!(step_size_at(&s, 999), 0.2);
        assert_eq!(step_size_at(&s, 1000), 0.1);
        assert_eq!(step_size_at(&StepSchedule::Constant(0.3), 12345), 0.3);
    }

    #[test]
    fn aga_examples() {
        let cfg = AgaConfig {
            initial_period: 4,
            warmup: 10,
        };
        let s = AgaState {
            counter: 3,
            period: 4,
            f_init: 2.0,
        };
        let (next, w) = aga_update(s, 20, 1.0, &cfg);
        assert_eq!((next.period, next.counter, w), (8, 0, None));
        let (next, _) = aga_update(AgaState { f_init: 0.0, ..s }, 5, 3.0, &cfg);
        assert_eq!((next.f_init, next.period), (1.5, 4));
        let (next, _) = aga_update(s, 20, 2.0, &cfg);
        assert_eq!(next.period, 4);
        let (next, w) = aga_update(AgaState { f_init: 0.0, ..s }, 20, 0.0, &cfg);
        assert_eq!(next.period, 1);
        assert!(w.is_some());
    }

    #[test]
    fn period_parsing() {
        assert_eq!("inf".parse::<Period>().unwrap(), Period::Infinite);
        assert_eq!("16".parse::<Period>().unwrap(), Period::Finite(16));
        assert!("x".parse::<Period>().is_err());
        assert!(Period::Finite(4).syncs_after(3));
        assert!(!Period::Finite(4).syncs_after(4));
    }

    #[test]
    fn rejects_bad_configs() {
        let p = problem(4);
        let t = build_ring(4).unwrap();
        assert!(Simulation::new(&p, &t, config(Variant::GossipPga, 0, Period::Finite(2))).is_err());
        assert!(matches!(
            Simulation::new(&p, &t, config(Variant::GossipPga, 5, Period::Finite(0))),
            Err(Error::InvalidPeriod(0))
        ));
        let t5 = build_ring(5).unwrap();
        assert!(Simulation::new(&p, &t5, config(Variant::Gossip, 5, Period::Infinite)).is_err());
    }

    #[test]
    fn logs_every_point_including_start_and_end() {
        let p = problem(4);
        let t = build_ring(4).unwrap();
        let tr = run(&p, &t, &config(Variant::Parallel, 10, Period::Infinite), 0.0).unwrap();
        assert_eq!(tr.records.len(), 11);
        let mut c = config(Variant::Parallel, 25, Period::Infinite);
        c.log_interval = 10;
        let iters = run(&p, &t, &c, 0.0).unwrap().iters();
        assert_eq!(iters, vec![0, 10, 20, 25]);
    }

    #[test]
    fn sync_zeroes_consensus() {
        let p = problem(4);
        let t = build_ring(4).unwrap();
        let tr = run(&p, &t, &config(Variant::GossipPga, 40, Period::Finite(4)), 0.0).unwrap();
        for r in &tr.records {
            if r.iter > 0 && r.iter % 4 == 0 {
                assert_eq!(r.consensus_sq, 0.0);
            }
        }
        assert!(tr.records.iter().any(|r| r.consensus_sq > 0.0));
        assert_eq!(tr.syncs.len(), 10);
    }

    #[test]
    fn zero_step_keeps_parameters() {
        let p = problem(4);
        let t = build_identity(4).unwrap();
        let mut c = config(Variant::Gossip, 5, Period::Infinite);
        c.step = StepSchedule::Constant(0.0);
        c.init = Some(vec![1.0, -2.0, 0.5]);
        let mut sim = Simulation::new(&p, &t, c).unwrap();
        let mut tr = Trajectory::default();
        sim.run_to_end(0.0, &mut tr).unwrap();
        assert!(sim.state().x.chunks(3).all(|x| x == [1.0, -2.0, 0.5]));
    }

    #[test]
    fn running_average_tracks_means() {
        let p = problem(4);
        let t = build_ring(4).unwrap();
        let mut sim = Simulation::new(&p, &t, config(Variant::Gossip, 6, Period::Infinite)).unwrap();
        let mut tr = Trajectory::default();
        let mut means = vec![sim.state().mean()];
        while !sim.is_done() {
            sim.step(&mut tr).unwrap();
            means.push(sim.state().mean());
        }
        let avg = sim.state().running_avg();
        for c in 0..3 {
            let expect = means.iter().map(|m| m[c]).sum::<f64>() / means.len() as f64;
            assert!((avg[c] - expect).abs() <= 1e-14);
        }
    }

    #[test]
    fn divergence_is_reported_with_partial_trajectory() {
        let p = problem(4).scaled(1e3);
        let t = build_ring(4).unwrap();
        let mut c = config(Variant::Gossip, 2000, Period::Infinite);
        c.step = StepSchedule::Constant(1e308);
        let failure = run(&p, &t, &c, 0.0).unwrap_err();
        assert!(matches!(failure.error, Error::Diverged { .. }));
        assert!(!failure.partial.records.is_empty());
    }

    #[test]
    fn model_time_accumulates() {
        let p = problem(4);
        let t = build_ring(4).unwrap();
        let mut c = config(Variant::GossipPga, 4, Period::Finite(2));
        c.comm = Some(CommParams { alpha: 1.0, theta: 1.0 });
        let tr = run(&p, &t, &c, 0.0).unwrap();
        // d = 3: gossip 3*3 + 1 = 10, all-reduce 2*3 + 4 = 10.
        let times: Vec<f64> = tr.records.iter().map(|r| r.model_time).collect();
        assert_eq!(times, vec![0.0, 10.0, 20.0, 30.0, 40.0]);
    }

    #[test]
    fn snapshot_resume_matches_uninterrupted_run() {
        let p = problem(4);
        let t = build_ring(4).unwrap();
        let c = config(Variant::GossipAga, 30, Period::Infinite);
        let mut full = Simulation::new(&p, &t, c.clone()).unwrap();
        let mut sink = Trajectory::default();
        full.run_to_end(0.0, &mut sink).unwrap();

        let mut first = Simulation::new(&p, &t, c.clone()).unwrap();
        for _ in 0..13 {
            first.step(&mut sink).unwrap();
        }
        let mut buf = Vec::new();
        first.snapshot(&mut buf).unwrap();
        let mut resumed = Simulation::restore(&p, &t, c, buf.as_slice()).unwrap();
        while !resumed.is_done() {
            resumed.step(&mut sink).unwrap();
        }
        assert_eq!(resumed.state(), full.state());
    }

    #[test]
    fn fully_connected_gossip_equals_parallel() {
        let p = problem(5);
        let fc = build_fully_connected(5).unwrap();
        let a = run(&p, &fc, &config(Variant::GossipPga, 30, Period::Finite(7)), 0.0).unwrap();
        let b = run(&p, &fc, &config(Variant::Parallel, 30, Period::Infinite), 0.0).unwrap();
        assert!(a.same_path(&b));
    }
}
