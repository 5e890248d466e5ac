//! Closed-form rates, step sizes, transient-stage predictors and the
//! latency/bandwidth communication model.
//!
//! Everything here is a pure function of its inputs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::MixingConstants;

/// Constants feeding the explicit bounds.
///
/// `r0` is `2 E||x0 - x*||^2` for the convex bound and `4 E f(x0)` for the
/// non-convex one. `period` may be `f64::INFINITY`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: usize,
    pub t: u64,
    pub period: f64,
    pub beta: f64,
    pub l: f64,
    pub sigma2: f64,
    pub b2: f64,
    pub b_hat2: f64,
    pub r0: f64,
    pub gamma: f64,
    /// Set when any constant is an estimate rather than a proven bound.
    pub approximate: bool,
}

impl BoundInputs {
    fn validate(&self) -> Result<MixingConstants> {
        if self.n == 0 {
            return Err(Error::InvalidInput("n must be positive".into()));
        }
        if self.t == 0 {
            return Err(Error::InvalidInput("T must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidInput(format!(
                "beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        for (name, v) in [
            ("L", self.l),
            ("sigma2", self.sigma2),
            ("b2", self.b2),
            ("b_hat2", self.b_hat2),
            ("r0", self.r0),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0) || v.is_infinite() {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        MixingConstants::with_real_period(self.beta, self.period)
    }

    fn horizon(&self) -> f64 {
        self.t as f64 + 1.0
    }

    fn r1(&self) -> f64 {
        2.0 * self.sigma2 / self.n as f64
    }

    fn r2(&self, mc: &MixingConstants) -> f64 {
        let base = self.l * self.beta * self.beta * mc.c_beta;
        12.0 * base * self.sigma2 + 36.0 * base * mc.d_beta * self.b2
    }
}

/// A bound value with provenance flags.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bound {
    pub value: f64,
    pub approximate: bool,
    pub note: Option<String>,
}

/// The three step-size candidates; the chosen step is their minimum.
pub fn theorem1_candidates(inputs: &BoundInputs) -> Result<[f64; 3]> {
    let mc = inputs.validate()?;
    let horizon = inputs.horizon();
    let topology = if inputs.beta == 0.0 || inputs.l == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (12.0 * inputs.beta * inputs.l * mc.d_beta)
    };
    let r1 = inputs.r1();
    let noise = if r1 == 0.0 {
        f64::INFINITY
    } else {
        (inputs.r0 / (r1 * horizon)).sqrt()
    };
    let r2 = inputs.r2(&mc);
    let drift = if r2 == 0.0 {
        f64::INFINITY
    } else {
        (inputs.r0 / (r2 * horizon)).cbrt()
    };
    Ok([topology, noise, drift])
}

pub fn theorem1_stepsize(inputs: &BoundInputs) -> Result<f64> {
    let gamma = theorem1_candidates(inputs)?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if gamma.is_infinite() {
        return Err(Error::InvalidInput(
            "every step-size candidate is unbounded (beta = 0 and sigma = 0)".into(),
        ));
    }
    Ok(gamma)
}

/// Upper bound on the running-average optimality gap of the convex theorem.
pub fn convex_bound(inputs: &BoundInputs) -> Result<Bound> {
    let mc = inputs.validate()?;
    let horizon = inputs.horizon();
    let r0 = inputs.r0;
    let value = 12.0 * r0 * inputs.l * mc.d_beta * inputs.beta / horizon
        + 2.0 * (r0 * inputs.r1() / horizon).sqrt()
        + 2.0 * inputs.r2(&mc).cbrt() * (r0 / horizon).powf(2.0 / 3.0);
    let note = (value == 0.0).then(|| {
        "degenerate: the deterministic term vanishes only because beta = 0 and there is no noise or heterogeneity".to_string()
    });
    Ok(Bound {
        value,
        approximate: inputs.approximate,
        note,
    })
}

/// Upper bound on the average squared gradient norm of the non-convex theorem,
/// evaluated at `inputs.gamma`.
pub fn nonconvex_bound(inputs: &BoundInputs) -> Result<Bound> {
    let mc = inputs.validate()?;
    let (l, beta, gamma) = (inputs.l, inputs.beta, inputs.gamma);
    if beta > 0.0 && l > 0.0 {
        let limit = 1.0 / (9.0 * l * inputs.period * beta);
        if gamma > limit {
            return Err(Error::StepSizePrecondition { gamma, limit });
        }
    }
    let f0 = inputs.r0 / 4.0;
    let descent = if f0 == 0.0 {
        0.0
    } else {
        8.0 * f0 / (inputs.horizon() * gamma)
    };
    let drift = l * l * gamma * gamma * beta * beta * mc.c_beta;
    let value = descent
        + 4.0 * gamma * l * inputs.sigma2 / inputs.n as f64
        + 24.0 * drift * inputs.sigma2
        + 72.0 * drift * mc.d_beta * inputs.b_hat2;
    Ok(Bound {
        value,
        approximate: inputs.approximate,
        note: None,
    })
}

/// Non-convex bound for a time-varying period sequence capped by `h_max`.
pub fn corollary1_bound(inputs: &BoundInputs, h_max: u64) -> Result<Bound> {
    if h_max < 1 {
        return Err(Error::InvalidPeriod(h_max));
    }
    nonconvex_bound(&BoundInputs {
        period: h_max as f64,
        ..*inputs
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gossip,
    GossipPga,
    Local,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gossip => "gossip",
            Family::GossipPga => "gossip_pga",
            Family::Local => "local",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Iid,
    NonIid,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Iid => "iid",
            Scenario::NonIid => "non_iid",
        })
    }
}

/// Order-of-magnitude transient stage (in iterations), without hidden constants.
pub fn transient_predict(
    family: Family,
    n: usize,
    beta: f64,
    period: f64,
    scenario: Scenario,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidInput(format!("beta must lie in [0, 1], got {beta}")));
    }
    let n3 = (n as f64).powi(3);
    let b4 = beta.powi(4);
    let squared = |v: f64| v * v;
    match family {
        Family::Gossip => {
            if beta >= 1.0 {
                return Err(Error::InfiniteTransient);
            }
            let inv_gap = 1.0 / (1.0 - beta);
            let x = match scenario {
                Scenario::Iid => squared(inv_gap),
                Scenario::NonIid => squared(inv_gap) * squared(inv_gap),
            };
            Ok(n3 * b4 * x)
        }
        Family::GossipPga | Family::Local => {
            if !period.is_finite() {
                return Err(Error::InvalidInput("period must be finite".into()));
            }
            if family == Family::Local {
                let x = match scenario {
                    Scenario::Iid => squared(period),
                    Scenario::NonIid => squared(period) * squared(period),
                };
                return Ok(n3 * 1.0 * x);
            }
            let mc = MixingConstants::with_real_period(beta, period)?;
            let x = match scenario {
                Scenario::Iid => squared(mc.c_beta),
                Scenario::NonIid => squared(mc.c_beta) * squared(mc.d_beta),
            };
            Ok(n3 * b4 * x)
        }
    }
}

/// Latency/bandwidth cost model: `alpha` seconds per message, `theta` seconds per scalar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommModel {
    pub alpha: f64,
    pub theta: f64,
    pub d: usize,
    pub n: usize,
    /// Gossip neighborhood size `|N_i|`, self included.
    pub degree: usize,
}

impl CommModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.theta > 0.0 && self.d > 0 && self.n > 0 && self.degree > 0) {
            return Err(Error::InvalidInput(format!("communication model must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CommMethod {
    AllReduce,
    Gossip,
    PgaAmortized(f64),
    LocalAmortized(f64),
}

/// Per-iteration communication time split into its bandwidth and latency parts.
pub fn comm_components(model: &CommModel, method: CommMethod) -> (f64, f64) {
    let td = model.theta * model.d as f64;
    let n = model.n as f64;
    let degree = model.degree as f64;
    match method {
        CommMethod::AllReduce => (2.0 * td, n * model.alpha),
        CommMethod::Gossip => (degree * td, model.alpha),
        CommMethod::PgaAmortized(h) => (degree * td + 2.0 * td / h, model.alpha + n * model.alpha / h),
        CommMethod::LocalAmortized(h) => (2.0 * td / h, n * model.alpha / h),
    }
}

pub fn comm_time_per_iter(model: &CommModel, method: CommMethod) -> f64 {
    let (bandwidth, latency) = comm_components(model, method);
    bandwidth + latency
}

fn family_method(family: Family, period: f64) -> CommMethod {
    match family {
        Family::Gossip => CommMethod::Gossip,
        Family::GossipPga => CommMethod::PgaAmortized(period),
        Family::Local => CommMethod::LocalAmortized(period),
    }
}

/// Transient stage times per-iteration communication, for `model.n` nodes.
pub fn transient_time(
    family: Family,
    model: &CommModel,
    beta: f64,
    period: f64,
    scenario: Scenario,
) -> Result<f64> {
    let iters = transient_predict(family, model.n, beta, period, scenario)?;
    Ok(iters * comm_time_per_iter(model, family_method(family, period)))
}

/// Asymptotic spectral-gap models used by the transient-time tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyModel {
    /// `1 - beta = 1/n`, `|N_i| = 5`.
    Grid,
    /// `1 - beta = 1/n^2`, `|N_i| = 3`.
    Ring,
}

impl TopologyModel {
    pub fn beta(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            TopologyModel::Grid => 1.0 - 1.0 / n,
            TopologyModel::Ring => 1.0 - 1.0 / (n * n),
        }
    }

    pub fn degree(self) -> usize {
        match self {
            TopologyModel::Grid => 5,
            TopologyModel::Ring => 3,
        }
    }
}

impl fmt::Display for TopologyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyModel::Grid => "grid",
            TopologyModel::Ring => "ring",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub family: Family,
    pub topology_model: TopologyModel,
    pub scenario: Scenario,
    pub iter_exponent: f64,
    pub theta_exponent: f64,
    pub alpha_exponent: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

/// Fits the growth exponents of the transient stage and of the bandwidth and
/// latency parts of the transient time, with period `H = sqrt(n)`.
pub fn table_row(
    family: Family,
    model: TopologyModel,
    scenario: Scenario,
    sizes: &[usize],
) -> Result<TableRow> {
    if sizes.len() < 2 {
        return Err(Error::InvalidInput("need at least two network sizes".into()));
    }
    let mut iters = Vec::new();
    let mut theta = Vec::new();
    let mut alpha = Vec::new();
    for &n in sizes {
        let period = (n as f64).sqrt();
        let beta = model.beta(n);
        let stage = transient_predict(family, n, beta, period, scenario)?;
        let unit = CommModel {
            alpha: 1.0,
            theta: 1.0,
            d: 1,
            n,
            degree: model.degree(),
        };
        let (bw, lat) = comm_components(&unit, family_method(family, period));
        iters.push(stage);
        theta.push(stage * bw);
        alpha.push(stage * lat);
    }
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    Ok(TableRow {
        family,
        topology_model: model,
        scenario,
        iter_exponent: loglog_slope(&xs, &iters),
        theta_exponent: loglog_slope(&xs, &theta),
        alpha_exponent: loglog_slope(&xs, &alpha),
    })
}

/// Published asymptotic `(theta d, alpha)` exponents of the transient time for
/// the gossip and periodic-averaging families with `H = sqrt(n)`.
pub fn expected_exponents(
    family: Family,
    model: TopologyModel,
    scenario: Scenario,
) -> Option<(f64, f64)> {
    use Family::*;
    use Scenario::*;
    use TopologyModel::*;
    match (family, model, scenario) {
        (Gossip, Grid, NonIid) => Some((7.0, 7.0)),
        (GossipPga, Grid, NonIid) => Some((5.0, 5.5)),
        (Gossip, Grid, Iid) => Some((5.0, 5.0)),
        (GossipPga, Grid, Iid) => Some((4.0, 4.5)),
        (Gossip, Ring, NonIid) => Some((11.0, 11.0)),
        (GossipPga, Ring, NonIid) => Some((5.0, 5.5)),
        (Gossip, Ring, Iid) => Some((7.0, 7.0)),
        (GossipPga, Ring, Iid) => Some((4.0, 4.5)),
        _ => None,
    }
}

/// Adaptive period `ceil((F0 / F_l)^(1/4) * H0)`.
pub fn theoretical_period_schedule(f0: f64, f_ell: f64, h0: u64) -> Result<u64> {
    if !(f0 > 0.0 && f_ell > 0.0) {
        return Err(Error::InvalidInput(format!(
            "losses must be positive, got F0 = {f0}, F = {f_ell}"
        )));
    }
    let ratio = (f0 / f_ell).sqrt().sqrt();
    Ok((ratio * h0 as f64).ceil().max(1.0) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn inputs() -> BoundInputs {
        BoundInputs {
            n: 20,
            t: 10_000,
            period: 16.0,
            beta: 0.967,
            l: 1.0,
            sigma2: 1.0,
            b2: 1.0,
            b_hat2: 1.0,
            r0: 2.0,
            gamma: 1e-3,
            approximate: false,
        }
    }

    #[test]
    fn stepsize_matches_direct_arithmetic() {
        // Independent evaluation of the three candidates.
        let beta: f64 = 0.967;
        let c: f64 = (0..16).map(|k| beta.powi(k)).sum();
        let d = 16.0_f64.min(1.0 / (1.0 - beta));
        let r1: f64 = 2.0 / 20.0;
        let r2 = 12.0 * beta * beta * c + 36.0 * beta * beta * c * d;
        let expect = [
            1.0 / (12.0 * beta * d),
            (2.0 / (r1 * 10_001.0)).sqrt(),
            (2.0 / (r2 * 10_001.0)).cbrt(),
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(theorem1_stepsize(&inputs()).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn stepsize_with_zero_beta_uses_noise_candidates() {
        let mut i = inputs();
        i.beta = 0.0;
        let [topo, noise, drift] = theorem1_candidates(&i).unwrap();
        assert!(topo.is_infinite() && drift.is_infinite());
        assert_eq!(theorem1_stepsize(&i).unwrap(), noise);
        i.sigma2 = 0.0;
        assert!(theorem1_stepsize(&i).is_err());
    }

    #[test]
    fn stepsize_rejects_zero_horizon() {
        let mut i = inputs();
        i.t = 0;
        assert!(theorem1_stepsize(&i).is_err());
    }

    #[test]
    fn convex_bound_degenerate_case() {
        let mut i = inputs();
        i.beta = 0.0;
        i.sigma2 = 0.0;
        i.b2 = 0.0;
        let b = convex_bound(&i).unwrap();
        assert_eq!(b.value, 0.0);
        assert!(b.note.is_some());
    }

    #[test]
    fn convex_bound_decreases_with_horizon() {
        let mut prev = f64::INFINITY;
        for t in [1u64, 10, 100, 1000, 10_000, 100_000] {
            let v = convex_bound(&BoundInputs { t, ..inputs() }).unwrap().value;
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn nonconvex_bound_reduces_without_gossip_error() {
        let mut i = inputs();
        i.beta = 0.0;
        let expect = 8.0 * 0.5 / (10_001.0 * i.gamma) + 4.0 * i.gamma / 20.0;
        assert_relative_eq!(nonconvex_bound(&i).unwrap().value, expect, max_relative = 1e-14);
        i.gamma = 0.0;
        assert!(nonconvex_bound(&i).unwrap().value.is_infinite());
    }

    #[test]
    fn nonconvex_bound_checks_step_precondition() {
        let mut i = inputs();
        i.gamma = 1.0;
        assert!(matches!(nonconvex_bound(&i), Err(Error::StepSizePrecondition { .. })));
    }

    #[test]
    fn corollary_with_constant_period() {
        let i = BoundInputs { gamma: 1e-4, ..inputs() };
        assert_eq!(corollary1_bound(&i, 16).unwrap(), nonconvex_bound(&i).unwrap());
        assert!(corollary1_bound(&i, 32).unwrap().value >= corollary1_bound(&i, 16).unwrap().value);
    }

    #[test]
    fn gossip_transient_grid_model() {
        let n = 64;
        let beta = 1.0 - 1.0 / n as f64;
        let v = transient_predict(Family::Gossip, n, beta, 1.0, Scenario::NonIid).unwrap();
        let n = n as f64;
        assert_relative_eq!(v, n.powi(3) * beta.powi(4) * n.powi(4), max_relative = 1e-9);
        assert!(matches!(
            transient_predict(Family::Gossip, 4, 1.0, 4.0, Scenario::Iid),
            Err(Error::InfiniteTransient)
        ));
    }

    #[test]
    fn pga_transient_with_unit_beta() {
        let n = 64usize;
        let h = (n as f64).sqrt();
        let v = transient_predict(Family::GossipPga, n, 1.0, h, Scenario::NonIid).unwrap();
        assert_relative_eq!(v, (n as f64).powi(5), max_relative = 1e-12);
    }

    #[test]
    fn comm_time_examples() {
        let m = CommModel { alpha: 2.0, theta: 1.0, d: 10, n: 4, degree: 3 };
        assert_eq!(comm_time_per_iter(&m, CommMethod::AllReduce), 28.0);
        assert_eq!(comm_time_per_iter(&m, CommMethod::Gossip), 32.0);
        assert_eq!(comm_time_per_iter(&m, CommMethod::PgaAmortized(f64::INFINITY)), 32.0);
        assert_eq!(comm_time_per_iter(&m, CommMethod::LocalAmortized(2.0)), 14.0);
    }

    #[test]
    fn theta_component_is_linear() {
        let m = CommModel { alpha: 0.5, theta: 1e-3, d: 100, n: 16, degree: 5 };
        let m2 = CommModel { theta: 2e-3, ..m };
        let (a, la) = comm_components(&m, CommMethod::PgaAmortized(4.0));
        let (b, lb) = comm_components(&m2, CommMethod::PgaAmortized(4.0));
        assert_eq!(b, 2.0 * a);
        assert_eq!(la, lb);
    }

    #[test]
    fn period_schedule_examples() {
        assert_eq!(theoretical_period_schedule(16.0, 1.0, 3).unwrap(), 6);
        assert_eq!(theoretical_period_schedule(0.7, 0.7, 5).unwrap(), 5);
        // 4 * 5^(1/4) = 5.98...
        assert_eq!(theoretical_period_schedule(5.0, 1.0, 4).unwrap(), 6);
        assert!(theoretical_period_schedule(0.0, 1.0, 4).is_err());
    }

    #[test]
    fn slope_of_pure_power() {
        let xs = [2.0, 4.0, 8.0, 16.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(2.5)).collect();
        assert_relative_eq!(loglog_slope(&xs, &ys), 2.5, max_relative = 1e-12);
    }
}
