//! Per-iteration measurements, trial aggregation and transient-stage detection.

use std::io::Write;

use serde::Serialize;

use crate::engine::{Period, StepSchedule};
use crate::error::{Error, Result};
use crate::topology::MixingConstants;

/// One logged iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Record {
    pub iter: u64,
    /// `sum_i ||x_i - xbar||^2`.
    pub consensus_sq: f64,
    /// `f(xbar) - f*`.
    pub gap: f64,
    /// `f(xhat) - f*` for the running average `xhat` of all past means.
    pub avg_gap: f64,
    /// `||grad f(xbar)||^2`.
    pub grad_sq: f64,
    /// Cumulative modeled communication seconds.
    pub model_time: f64,
    pub current_period: Period,
}

/// A global-averaging event, with the period in force afterwards.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SyncEvent {
    pub iter: u64,
    /// Node-averaged mini-batch loss observed at this iteration.
    pub loss: f64,
    pub period_after: Period,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunMeta {
    pub variant: String,
    pub topology: String,
    pub n: usize,
    pub period: String,
    pub seed: u64,
    pub trial: u64,
}

/// Receives records as a run progresses.
pub trait MetricsSink {
    fn record(&mut self, record: Record);
    fn sync_event(&mut self, _event: SyncEvent) {}
    fn warning(&mut self, _message: String) {}
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Trajectory {
    pub meta: RunMeta,
    pub records: Vec<Record>,
    pub syncs: Vec<SyncEvent>,
    pub warnings: Vec<String>,
}

impl MetricsSink for Trajectory {
    fn record(&mut self, record: Record) {
        self.records.push(record);
    }

    fn sync_event(&mut self, event: SyncEvent) {
        self.syncs.push(event);
    }

    fn warning(&mut self, message: String) {
        self.warnings.push(message);
    }
}

impl Trajectory {
    pub fn new(meta: RunMeta) -> Self {
        Trajectory {
            meta,
            ..Default::default()
        }
    }

    pub fn iters(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.iter).collect()
    }

    /// True when every optimization metric matches bit for bit.
    pub fn same_path(&self, other: &Trajectory) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.iter == b.iter
                    && a.consensus_sq.to_bits() == b.consensus_sq.to_bits()
                    && a.gap.to_bits() == b.gap.to_bits()
                    && a.avg_gap.to_bits() == b.avg_gap.to_bits()
                    && a.grad_sq.to_bits() == b.grad_sq.to_bits()
            })
    }
}

pub const TRAJECTORY_HEADER: [&str; 12] = [
    "trial",
    "iter",
    "variant",
    "topology",
    "n",
    "H",
    "consensus_sq",
    "gap",
    "avg_gap",
    "grad_sq",
    "model_time",
    "current_H",
];

pub fn write_trajectories_csv<W: Write>(trajectories: &[Trajectory], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for t in trajectories {
        for r in &t.records {
            w.write_record([
                t.meta.trial.to_string(),
                r.iter.to_string(),
                t.meta.variant.clone(),
                t.meta.topology.clone(),
                t.meta.n.to_string(),
                t.meta.period.clone(),
                r.consensus_sq.to_string(),
                r.gap.to_string(),
                r.avg_gap.to_string(),
                r.grad_sq.to_string(),
                r.model_time.to_string(),
                r.current_period.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sum of squared distances of each node block (width `dim`) from their mean.
pub fn consensus_sq(x: &[f64], dim: usize) -> f64 {
    let n = x.len() / dim;
    if n == 0 {
        return 0.0;
    }
    let first = &x[..dim];
    if x.chunks_exact(dim).all(|row| row == first) {
        return 0.0;
    }
    let mut mean = vec![0.0; dim];
    for row in x.chunks_exact(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    x.chunks_exact(dim)
        .map(|row| row.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>())
        .sum()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricSeries {
    pub consensus_sq: Vec<f64>,
    pub gap: Vec<f64>,
    pub avg_gap: Vec<f64>,
    pub grad_sq: Vec<f64>,
    pub model_time: Vec<f64>,
}

/// Repeated trials of one configuration on a shared logging grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialEnsemble {
    pub meta: RunMeta,
    pub iters: Vec<u64>,
    pub trials: usize,
    pub mean: MetricSeries,
    pub std: MetricSeries,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt())
}

/// Pointwise mean and sample standard deviation (divisor `k - 1`) per metric.
pub fn aggregate(trajectories: Vec<Trajectory>) -> Result<TrialEnsemble> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::GridMismatch("no trajectories to aggregate".into()))?;
    let iters = first.iters();
    for t in &trajectories[1..] {
        if t.iters() != iters {
            return Err(Error::GridMismatch(format!(
                "trial {} logs {} points, trial {} logs {}",
                first.meta.trial,
                iters.len(),
                t.meta.trial,
                t.records.len()
            )));
        }
    }
    let mut mean = MetricSeries::default();
    let mut std = MetricSeries::default();
    let mut column = Vec::with_capacity(trajectories.len());
    let metrics: [(fn(&Record) -> f64, fn(&mut MetricSeries) -> &mut Vec<f64>); 5] = [
        (|r| r.consensus_sq, |s| &mut s.consensus_sq),
        (|r| r.gap, |s| &mut s.gap),
        (|r| r.avg_gap, |s| &mut s.avg_gap),
        (|r| r.grad_sq, |s| &mut s.grad_sq),
        (|r| r.model_time, |s| &mut s.model_time),
    ];
    for p in 0..iters.len() {
        for (get, slot) in metrics {
            column.clear();
            column.extend(trajectories.iter().map(|t| get(&t.records[p])));
            let (m, s) = mean_std(&column);
            slot(&mut mean).push(m);
            slot(&mut std).push(s);
        }
    }
    Ok(TrialEnsemble {
        meta: first.meta.clone(),
        trials: trajectories.len(),
        iters,
        mean,
        std,
        trajectories,
    })
}

pub fn write_ensemble_csv<W: Write>(ensemble: &TrialEnsemble, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iter",
        "trials",
        "consensus_sq_mean",
        "consensus_sq_std",
        "gap_mean",
        "gap_std",
        "avg_gap_mean",
        "avg_gap_std",
        "grad_sq_mean",
        "grad_sq_std",
        "model_time_mean",
        "model_time_std",
    ])?;
    let (m, s) = (&ensemble.mean, &ensemble.std);
    for (p, iter) in ensemble.iters.iter().enumerate() {
        w.write_record([
            iter.to_string(),
            ensemble.trials.to_string(),
            m.consensus_sq[p].to_string(),
            s.consensus_sq[p].to_string(),
            m.gap[p].to_string(),
            s.gap[p].to_string(),
            m.avg_gap[p].to_string(),
            s.avg_gap[p].to_string(),
            m.grad_sq[p].to_string(),
            s.grad_sq[p].to_string(),
            m.model_time[p].to_string(),
            s.model_time[p].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Default relative tolerance for "matches the reference curve".
pub const DEFAULT_REL_TOL: f64 = 0.05;
/// Default number of consecutive logged points that must match.
pub const DEFAULT_WINDOW: usize = 50;

/// First logged iteration from which the candidate's mean gap stays within
/// `(1 + rel_tol)` of the reference for `window` consecutive logged points.
///
/// The window is clipped to the grid length, and a start point only counts if
/// its full window fits on the grid. `None` means the candidate never matched.
pub fn detect_transient(
    candidate: &TrialEnsemble,
    reference: &TrialEnsemble,
    rel_tol: f64,
    window: usize,
) -> Result<Option<u64>> {
    if candidate.iters != reference.iters {
        return Err(Error::GridMismatch(format!(
            "candidate {} and reference {} use different logging grids",
            candidate.meta.variant, reference.meta.variant
        )));
    }
    let len = candidate.iters.len();
    if len == 0 {
        return Ok(None);
    }
    let w = window.clamp(1, len);
    let ok: Vec<bool> = candidate
        .mean
        .gap
        .iter()
        .zip(&reference.mean.gap)
        .map(|(c, r)| *c <= (1.0 + rel_tol) * r)
        .collect();
    // Length of the run of matching points starting at each index.
    let mut run = vec![0usize; len + 1];
    for p in (0..len).rev() {
        run[p] = if ok[p] { run[p + 1] + 1 } else { 0 };
    }
    Ok((0..=len - w)
        .find(|&p| run[p] >= w)
        .map(|p| candidate.iters[p]))
}

/// Problem constants the consensus inequality depends on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LemmaConstants {
    pub l: f64,
    /// Gradient noise of the stochastic gradient actually used (batch-adjusted).
    pub sigma2: f64,
    pub b2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    pub trials: usize,
    pub points: usize,
}

/// Compares the time-averaged consensus distance against
/// `2 c2 D_beta * avg(gap) + 2 c3` with
/// `c2 = 12 n beta^2 D_beta gamma^2 L` and `c3 = 2 n beta^2 gamma^2 C_beta (3 D_beta b^2 + sigma^2)`.
/// Expectations and time averages are taken over the ensemble's logging grid.
pub fn consensus_lemma_check(
    ensemble: &TrialEnsemble,
    constants: &LemmaConstants,
    schedule: &StepSchedule,
    period: Period,
    beta: f64,
) -> Result<LemmaReport> {
    let gamma = match schedule {
        StepSchedule::Constant(g) => *g,
        StepSchedule::Theorem1 { gamma, .. } => *gamma,
        other => {
            return Err(Error::Unsupported(format!(
                "consensus check needs a constant step size, got {other:?}"
            )))
        }
    };
    let points = ensemble.iters.len();
    if points == 0 {
        return Err(Error::GridMismatch("empty ensemble".into()));
    }
    let mc = MixingConstants::with_real_period(beta, period.as_f64())?;
    let n = ensemble.meta.n as f64;
    let b2g2 = beta * beta * gamma * gamma;
    let c2 = 12.0 * n * b2g2 * mc.d_beta * constants.l;
    let c3 = 2.0 * n * b2g2 * mc.c_beta * (3.0 * mc.d_beta * constants.b2 + constants.sigma2);
    let lhs = ensemble.mean.consensus_sq.iter().sum::<f64>() / points as f64;
    let avg_gap = ensemble.mean.gap.iter().sum::<f64>() / points as f64;
    let rhs = 2.0 * c2 * mc.d_beta * avg_gap + 2.0 * c3;
    Ok(LemmaReport {
        lhs,
        rhs,
        pass: lhs <= rhs,
        trials: ensemble.trials,
        points,
    })
}
