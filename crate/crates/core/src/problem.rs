//! Synthetic distributed logistic regression and its problem constants.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::distributions::Open01;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Per-coordinate variance of the generated features.
pub const FEATURE_VARIANCE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heterogeneity {
    Iid,
    NonIid,
}

/// How a node forms its stochastic gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Batch {
    /// Mean over this many indices drawn uniformly with replacement.
    Sampled(usize),
    /// Exact local gradient; consumes no randomness.
    Full,
}

/// A sum-structured objective `f(x) = (1/n) sum_i f_i(x)` the engine can optimize.
pub trait Objective: Sync {
    fn nodes(&self) -> usize;
    fn dim(&self) -> usize;
    fn local_loss(&self, node: usize, x: &[f64]) -> f64;
    /// Writes `grad f_i(x)` into `out` and returns `f_i(x)`.
    fn local_loss_grad(&self, node: usize, x: &[f64], out: &mut [f64]) -> f64;
    /// Writes a mini-batch gradient into `out` and returns the mini-batch loss.
    fn sample_loss_grad(
        &self,
        node: usize,
        x: &[f64],
        batch: Batch,
        rng: &mut ChaCha8Rng,
        out: &mut [f64],
    ) -> f64;

    fn loss(&self, x: &[f64]) -> f64 {
        let n = self.nodes();
        (0..n).map(|i| self.local_loss(i, x)).sum::<f64>() / n as f64
    }

    /// Writes `grad f(x)` into `out` and returns `f(x)`.
    fn loss_grad(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let n = self.nodes();
        let mut tmp = vec![0.0; self.dim()];
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut total = 0.0;
        for i in 0..n {
            total += self.local_loss_grad(i, x, &mut tmp);
            for (o, g) in out.iter_mut().zip(&tmp) {
                *o += g;
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        total * inv
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticProblem {
    n: usize,
    samples: usize,
    dim: usize,
    /// Node-major, then sample-major rows of width `dim`.
    features: Vec<f64>,
    labels: Vec<f64>,
    planted: Vec<Vec<f64>>,
    heterogeneity: Heterogeneity,
}

impl LogisticProblem {
    /// Draws the synthetic dataset. Planted vectors come from stream 0 of the
    /// seed, node `i`'s samples from stream `i + 1`.
    pub fn generate(
        n: usize,
        samples: usize,
        dim: usize,
        heterogeneity: Heterogeneity,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 || samples == 0 || dim == 0 {
            return Err(Error::InvalidProblem(format!(
                "n, M and d must be positive (got {n}, {samples}, {dim})"
            )));
        }
        let mut planted_rng = rng::stream(seed, 0);
        let mut draw_unit = || -> Vec<f64> {
            loop {
                let v: Vec<f64> = (0..dim)
                    .map(|_| StandardNormal.sample(&mut planted_rng))
                    .collect();
                let norm = norm_sq(&v).sqrt();
                if norm > 0.0 {
                    return v.into_iter().map(|c| c / norm).collect();
                }
            }
        };
        let planted: Vec<Vec<f64>> = match heterogeneity {
            Heterogeneity::Iid => vec![draw_unit(); n],
            Heterogeneity::NonIid => (0..n).map(|_| draw_unit()).collect(),
        };

        let feature_dist = Normal::new(0.0, FEATURE_VARIANCE.sqrt()).expect("valid normal");
        let mut features = Vec::with_capacity(n * samples * dim);
        let mut labels = Vec::with_capacity(n * samples);
        for (i, x_star) in planted.iter().enumerate() {
            let mut node_rng = rng::stream(seed, i as u64 + 1);
            for _ in 0..samples {
                let start = features.len();
                features.extend((0..dim).map(|_| feature_dist.sample(&mut node_rng)));
                let u: f64 = node_rng.sample(Open01);
                let p = sigmoid(dot(&features[start..], x_star));
                labels.push(if u <= p { 1.0 } else { -1.0 });
            }
        }
        Ok(LogisticProblem {
            n,
            samples,
            dim,
            features,
            labels,
            planted,
            heterogeneity,
        })
    }

    pub fn samples_per_node(&self) -> usize {
        self.samples
    }

    pub fn heterogeneity(&self) -> Heterogeneity {
        self.heterogeneity
    }

    pub fn planted(&self) -> &[Vec<f64>] {
        &self.planted
    }

    pub fn labels(&self, node: usize) -> &[f64] {
        &self.labels[node * self.samples..(node + 1) * self.samples]
    }

    pub fn sample(&self, node: usize, m: usize) -> (&[f64], f64) {
        let row = node * self.samples + m;
        (
            &self.features[row * self.dim..(row + 1) * self.dim],
            self.labels[row],
        )
    }

    /// Node `i`'s `M x d` feature matrix.
    pub fn feature_matrix(&self, node: usize) -> DMatrix<f64> {
        let block = &self.features[node * self.samples * self.dim..(node + 1) * self.samples * self.dim];
        DMatrix::from_row_slice(self.samples, self.dim, block)
    }

    /// Multiplies every feature by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.features.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Builds a problem from explicit per-node samples.
    pub fn from_parts(
        features: Vec<Vec<Vec<f64>>>,
        labels: Vec<Vec<f64>>,
        planted: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = features.len();
        if n == 0 || labels.len() != n || planted.len() != n {
            return Err(Error::InvalidProblem("inconsistent node counts".into()));
        }
        let samples = features[0].len();
        let dim = features[0].first().map_or(0, Vec::len);
        if samples == 0 || dim == 0 {
            return Err(Error::InvalidProblem("empty dataset".into()));
        }
        let mut flat = Vec::with_capacity(n * samples * dim);
        let mut flat_labels = Vec::with_capacity(n * samples);
        for (rows, ys) in features.iter().zip(&labels) {
            if rows.len() != samples || ys.len() != samples {
                return Err(Error::InvalidProblem("nodes hold different sample counts".into()));
            }
            for row in rows {
                if row.len() != dim {
                    return Err(Error::InvalidProblem("ragged feature rows".into()));
                }
                flat.extend_from_slice(row);
            }
            for &y in ys {
                if y != 1.0 && y != -1.0 {
                    return Err(Error::InvalidProblem(format!("label {y} is not +1/-1")));
                }
                flat_labels.push(y);
            }
        }
        let heterogeneity = if planted.iter().all(|p| p == &planted[0]) {
            Heterogeneity::Iid
        } else {
            Heterogeneity::NonIid
        };
        Ok(LogisticProblem {
            n,
            samples,
            dim,
            features: flat,
            labels: flat_labels,
            planted,
            heterogeneity,
        })
    }

    /// Writes `node_XXXX.csv` (features then label) per node plus `planted.csv`.
    pub fn export_csv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut header: Vec<String> = (0..self.dim).map(|c| format!("h{c}")).collect();
        header.push("label".into());
        for i in 0..self.n {
            let mut w = csv::Writer::from_path(dir.join(format!("node_{i:04}.csv")))?;
            w.write_record(&header)?;
            for m in 0..self.samples {
                let (h, y) = self.sample(i, m);
                let mut rec: Vec<String> = h.iter().map(|v| v.to_string()).collect();
                rec.push(y.to_string());
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(dir.join("planted.csv"))?;
        for p in &self.planted {
            w.write_record(p.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn import_csv(dir: &Path) -> Result<Self> {
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidProblem(format!("cannot parse {s:?}")))
        };
        let mut planted = Vec::new();
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(dir.join("planted.csv"))?;
        for rec in r.records() {
            planted.push(rec?.iter().map(parse).collect::<Result<Vec<_>>>()?);
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..planted.len() {
            let mut r = csv::Reader::from_path(dir.join(format!("node_{i:04}.csv")))?;
            let mut rows = Vec::new();
            let mut ys = Vec::new();
            for rec in r.records() {
                let mut vals = rec?.iter().map(parse).collect::<Result<Vec<_>>>()?;
                let y = vals
                    .pop()
                    .ok_or_else(|| Error::InvalidProblem("empty row".into()))?;
                rows.push(vals);
                ys.push(y);
            }
            features.push(rows);
            labels.push(ys);
        }
        Self::from_parts(features, labels, planted)
    }

    #[inline]
    fn accumulate_sample(&self, row: usize, x: &[f64], out: &mut [f64], weight: f64) -> f64 {
        let h = &self.features[row * self.dim..(row + 1) * self.dim];
        let y = self.labels[row];
        let margin = -y * dot(h, x);
        let coeff = -y * sigmoid(margin) * weight;
        for (o, hv) in out.iter_mut().zip(h) {
            *o += coeff * hv;
        }
        softplus(margin)
    }
}

impl Objective for LogisticProblem {
    fn nodes(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn local_loss(&self, node: usize, x: &[f64]) -> f64 {
        let base = node * self.samples;
        (base..base + self.samples)
            .map(|row| {
                let h = &self.features[row * self.dim..(row + 1) * self.dim];
                softplus(-self.labels[row] * dot(h, x))
            })
            .sum::<f64>()
            / self.samples as f64
    }

    fn local_loss_grad(&self, node: usize, x: &[f64], out: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|v| *v = 0.0);
        let base = node * self.samples;
        let w = 1.0 / self.samples as f64;
        let mut loss = 0.0;
        for row in base..base + self.samples {
            loss += self.accumulate_sample(row, x, out, w);
        }
        loss * w
    }

    fn sample_loss_grad(
        &self,
        node: usize,
        x: &[f64],
        batch: Batch,
        rng: &mut ChaCha8Rng,
        out: &mut [f64],
    ) -> f64 {
        match batch {
            Batch::Full => self.local_loss_grad(node, x, out),
            Batch::Sampled(b) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let w = 1.0 / b as f64;
                let base = node * self.samples;
                let mut loss = 0.0;
                for _ in 0..b {
                    let m = rng.gen_range(0..self.samples);
                    loss += self.accumulate_sample(base + m, x, out, w);
                }
                loss * w
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

const INITIAL_STEP: f64 = 1.0;

/// Full-batch gradient descent with halving backtracking until `||grad f|| <= tol`.
///
/// Once the predicted Armijo decrease drops below the resolution of `f`, a
/// trial step is accepted when it shrinks the gradient norm instead.
pub fn solve_reference<P: Objective + ?Sized>(
    problem: &P,
    tol: f64,
    max_iters: usize,
) -> Result<ReferenceSolution> {
    let d = problem.dim();
    let mut x = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut f = problem.loss_grad(&x, &mut g);
    let mut gnorm2 = norm_sq(&g);
    let mut best = (x.clone(), gnorm2.sqrt());
    let mut trial = vec![0.0; d];
    let mut g_trial = vec![0.0; d];
    for it in 0..max_iters {
        if gnorm2.sqrt() <= tol {
            return Ok(ReferenceSolution {
                x_star: x,
                f_star: f,
                grad_norm: gnorm2.sqrt(),
                iterations: it,
            });
        }
        let mut step = INITIAL_STEP;
        let f_next = loop {
            for ((t, xv), gv) in trial.iter_mut().zip(&x).zip(&g) {
                *t = xv - step * gv;
            }
            let f_trial = problem.loss_grad(&trial, &mut g_trial);
            let predicted = 0.5 * step * gnorm2;
            let resolvable = predicted > 8.0 * f64::EPSILON * f.abs().max(1e-300);
            let accept = if resolvable {
                f_trial <= f - predicted
            } else {
                norm_sq(&g_trial) < gnorm2
            };
            if accept {
                break f_trial;
            }
            step *= 0.5;
            if step < 1e-300 {
                return Err(Error::NotConverged {
                    iters: it,
                    grad_norm: best.1,
                    best: best.0,
                });
            }
        };
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut g_trial);
        f = f_next;
        gnorm2 = norm_sq(&g);
        if gnorm2.sqrt() < best.1 {
            best = (x.clone(), gnorm2.sqrt());
        }
    }
    if gnorm2.sqrt() <= tol {
        return Ok(ReferenceSolution {
            x_star: x,
            f_star: f,
            grad_norm: gnorm2.sqrt(),
            iterations: max_iters,
        });
    }
    Err(Error::NotConverged {
        iters: max_iters,
        grad_norm: best.1,
        best: best.0,
    })
}

/// Smoothness, noise and heterogeneity constants of a problem.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProblemConstants {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub l: f64,
    /// Single-sample gradient noise at `x_star` (divide by the batch size for mini-batches).
    pub sigma2: f64,
    pub b2: f64,
    /// Probe-set lower bound on the uniform heterogeneity constant.
    pub b_hat2: f64,
    /// `sigma2` and `b_hat2` are estimates, not certified bounds.
    pub approximate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConstantEstimates {
    pub l: f64,
    pub sigma2: f64,
    pub b2: f64,
    pub b_hat2: f64,
}

/// Number of random unit directions in the heterogeneity probe set.
pub const PROBE_DIRECTIONS: usize = 4;

fn heterogeneity_at<P: Objective + ?Sized>(problem: &P, x: &[f64]) -> f64 {
    let n = problem.nodes();
    let d = problem.dim();
    let mut grads = vec![vec![0.0; d]; n];
    let mut mean = vec![0.0; d];
    for (i, g) in grads.iter_mut().enumerate() {
        problem.local_loss_grad(i, x, g);
        for (m, v) in mean.iter_mut().zip(g.iter()) {
            *m += v / n as f64;
        }
    }
    grads
        .iter()
        .map(|g| g.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / n as f64
}

/// Estimates `L`, `sigma^2`, `b^2` and a lower bound on `b_hat^2`.
///
/// `mc_samples = 0` sweeps every sample exactly for the noise estimate.
pub fn estimate_constants(
    problem: &LogisticProblem,
    x_star: &[f64],
    mc_samples: usize,
    seed: u64,
) -> ConstantEstimates {
    let n = problem.nodes();
    let d = problem.dim();
    let m = problem.samples_per_node();

    let l = (0..n)
        .map(|i| {
            let h = problem.feature_matrix(i);
            let gram = h.transpose() * &h;
            gram.symmetric_eigenvalues().max() / (4.0 * m as f64)
        })
        .fold(0.0_f64, f64::max);

    let mut local = vec![0.0; d];
    let mut single = vec![0.0; d];
    let mut sigma2 = 0.0_f64;
    let mut rng = rng::stream(seed, 0);
    for i in 0..n {
        problem.local_loss_grad(i, x_star, &mut local);
        let mut acc = 0.0;
        let draws = if mc_samples == 0 { m } else { mc_samples };
        for s in 0..draws {
            let idx = if mc_samples == 0 { s } else { rng.gen_range(0..m) };
            single.iter_mut().for_each(|v| *v = 0.0);
            problem.accumulate_sample(i * m + idx, x_star, &mut single, 1.0);
            acc += single.iter().zip(&local).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        sigma2 = sigma2.max(acc / draws as f64);
    }
    // Measured against the mean gradient, which vanishes at the exact optimum.
    let b2 = heterogeneity_at(problem, x_star);

    let mut probes = vec![x_star.to_vec(), vec![0.0; d]];
    for _ in 0..PROBE_DIRECTIONS {
        let u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = norm_sq(&u).sqrt().max(f64::MIN_POSITIVE);
        for sign in [1.0, -1.0] {
            probes.push(x_star.iter().zip(&u).map(|(x, v)| x + sign * v / norm).collect());
        }
    }
    let b_hat2 = probes
        .iter()
        .map(|p| heterogeneity_at(problem, p))
        .fold(0.0_f64, f64::max);

    ConstantEstimates {
        l,
        sigma2,
        b2,
        b_hat2,
    }
}

/// Solves for the reference optimum and estimates every constant.
pub fn problem_constants(
    problem: &LogisticProblem,
    tol: f64,
    max_iters: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<ProblemConstants> {
    let sol = solve_reference(problem, tol, max_iters)?;
    let est = estimate_constants(problem, &sol.x_star, mc_samples, seed);
    Ok(ProblemConstants {
        x_star: sol.x_star,
        f_star: sol.f_star,
        l: est.l,
        sigma2: est.sigma2,
        b2: est.b2,
        b_hat2: est.b_hat2,
        approximate: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    fn small(h: Heterogeneity) -> LogisticProblem {
        LogisticProblem::generate(4, 50, 5, h, 11).unwrap()
    }

    #[test]
    fn planted_vectors_are_unit_norm() {
        for h in [Heterogeneity::Iid, Heterogeneity::NonIid] {
            let p = small(h);
            for v in p.planted() {
                assert_abs_diff_eq!(norm_sq(v), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn iid_shares_planted_vector() {
        let p = small(Heterogeneity::Iid);
        assert!(p.planted().iter().all(|v| v == &p.planted()[0]));
        let q = small(Heterogeneity::NonIid);
        assert_ne!(q.planted()[0], q.planted()[1]);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(small(Heterogeneity::NonIid), small(Heterogeneity::NonIid));
        let other = LogisticProblem::generate(4, 50, 5, Heterogeneity::NonIid, 12).unwrap();
        assert_ne!(small(Heterogeneity::NonIid), other);
        assert!(LogisticProblem::generate(0, 5, 5, Heterogeneity::Iid, 1).is_err());
    }

    #[test]
    fn labels_are_signs() {
        let p = small(Heterogeneity::NonIid);
        assert!((0..4).all(|i| p.labels(i).iter().all(|&y| y == 1.0 || y == -1.0)));
    }

    #[test]
    fn zero_margin_label_probability_is_half() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn loss_and_gradient_at_origin() {
        let p = small(Heterogeneity::NonIid);
        let zero = vec![0.0; 5];
        let mut g = vec![0.0; 5];
        for i in 0..4 {
            assert_abs_diff_eq!(p.local_loss(i, &zero), LN_2, epsilon = 1e-15);
            p.local_loss_grad(i, &zero, &mut g);
            let mut expect = [0.0; 5];
            for m in 0..50 {
                let (h, y) = p.sample(i, m);
                for c in 0..5 {
                    expect[c] -= y / 2.0 * h[c] / 50.0;
                }
            }
            for c in 0..5 {
                assert_abs_diff_eq!(g[c], expect[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert_abs_diff_eq!(softplus(0.0), LN_2, epsilon = 1e-15);
    }

    #[test]
    fn full_batch_equals_local_gradient() {
        let p = small(Heterogeneity::NonIid);
        let x = vec![0.3, -0.1, 0.2, 0.0, 0.5];
        let mut a = vec![0.0; 5];
        let mut b = vec![0.0; 5];
        let mut r = rng::stream(0, 0);
        let la = p.sample_loss_grad(2, &x, Batch::Full, &mut r, &mut a);
        let lb = p.local_loss_grad(2, &x, &mut b);
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn sampled_gradient_is_reproducible() {
        let p = small(Heterogeneity::NonIid);
        let x = vec![0.1; 5];
        let draw = |s: u64| {
            let mut r = rng::stream(9, s);
            let mut g = vec![0.0; 5];
            p.sample_loss_grad(0, &x, Batch::Sampled(3), &mut r, &mut g);
            g
        };
        assert_eq!(draw(1), draw(1));
        assert_ne!(draw(1), draw(2));
    }

    #[test]
    fn separable_single_sample_does_not_converge() {
        let p = LogisticProblem::from_parts(
            vec![vec![vec![1.0, 0.0]]],
            vec![vec![1.0]],
            vec![vec![1.0, 0.0]],
        )
        .unwrap();
        match solve_reference(&p, 1e-10, 200) {
            Err(Error::NotConverged { best, iters, .. }) => {
                assert_eq!(iters, 200);
                assert!(best[0] > 0.0);
                assert_eq!(best[1], 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn reference_solver_reaches_tolerance() {
        let p = small(Heterogeneity::NonIid);
        let sol = solve_reference(&p, 1e-10, 100_000).unwrap();
        let mut g = vec![0.0; 5];
        p.loss_grad(&sol.x_star, &mut g);
        assert!(norm_sq(&g).sqrt() <= 1e-10);
        assert!(sol.f_star <= LN_2);
    }

    #[test]
    fn single_node_has_zero_heterogeneity() {
        let p = LogisticProblem::generate(1, 40, 3, Heterogeneity::NonIid, 5).unwrap();
        let sol = solve_reference(&p, 1e-10, 100_000).unwrap();
        let est = estimate_constants(&p, &sol.x_star, 0, 1);
        assert_eq!(est.b2, 0.0);
        assert_eq!(est.b_hat2, 0.0);
    }

    #[test]
    fn smoothness_scales_quadratically() {
        let p = small(Heterogeneity::NonIid);
        let x = vec![0.0; 5];
        let l1 = estimate_constants(&p, &x, 10, 0).l;
        let l3 = estimate_constants(&p.scaled(3.0), &x, 10, 0).l;
        assert_abs_diff_eq!(l3 / l1, 9.0, epsilon = 1e-9);
    }

    #[test]
    fn csv_bundle_round_trips() {
        let p = small(Heterogeneity::NonIid);
        let dir = tempfile::tempdir().unwrap();
        p.export_csv(dir.path()).unwrap();
        assert_eq!(LogisticProblem::import_csv(dir.path()).unwrap(), p);
    }
}
