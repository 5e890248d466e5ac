//! Network topologies and their doubly stochastic mixing matrices.
//!
//! Every topology stores its mixing rule as sparse rows `(neighbor, weight)` in
//! ascending neighbor order, so a gossip step on node `i` is always the same
//! left-to-right floating point sum. Static topologies additionally keep the
//! dense matrix for spectral analysis and export.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking row and column sums of produced matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Grid { rows: usize, cols: usize },
    StaticExponential,
    OnePeerExponential,
    FullyConnected,
    DisconnectedIdentity,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::Ring => write!(f, "ring"),
            TopologyKind::Grid { rows, cols } => write!(f, "grid{rows}x{cols}"),
            TopologyKind::StaticExponential => write!(f, "exponential"),
            TopologyKind::OnePeerExponential => write!(f, "one_peer_exponential"),
            TopologyKind::FullyConnected => write!(f, "fully_connected"),
            TopologyKind::DisconnectedIdentity => write!(f, "identity"),
        }
    }
}

type SparseRow = Vec<(usize, f64)>;

/// An immutable network of `n` nodes with its mixing rule.
#[derive(Clone, Debug)]
pub struct Topology {
    n: usize,
    kind: TopologyKind,
    weights: Option<DMatrix<f64>>,
    rows: Vec<SparseRow>,
    schedule_period: usize,
}

impl Topology {
    fn from_dense(kind: TopologyKind, w: DMatrix<f64>) -> Self {
        let n = w.nrows();
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| w[(i, j)] != 0.0)
                    .map(|j| (j, w[(i, j)]))
                    .collect()
            })
            .collect();
        Topology {
            n,
            kind,
            weights: Some(w),
            rows,
            schedule_period: 1,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn is_time_varying(&self) -> bool {
        self.weights.is_none()
    }

    /// Number of distinct per-iteration matrices in the schedule (1 for static kinds).
    pub fn schedule_period(&self) -> usize {
        self.schedule_period
    }

    /// Dense weight matrix of a static topology.
    pub fn static_weights(&self) -> Option<&DMatrix<f64>> {
        self.weights.as_ref()
    }

    /// Largest neighborhood size `|N_i|` (self included) over all nodes.
    pub fn max_degree(&self) -> usize {
        match self.kind {
            TopologyKind::OnePeerExponential => 2.min(self.n),
            _ => self.rows.iter().map(Vec::len).max().unwrap_or(0),
        }
    }

    /// Whether a gossip step moves any data between distinct nodes.
    pub fn communicates(&self) -> bool {
        self.n > 1 && self.kind != TopologyKind::DisconnectedIdentity
    }

    fn one_peer_shift(&self, k: u64) -> usize {
        1usize << (k % self.schedule_period as u64)
    }

    /// Sparse row `i` of the matrix active at iteration `k`, neighbors ascending.
    pub fn row_at(&self, i: usize, k: u64) -> SparseRow {
        if self.weights.is_some() {
            return self.rows[i].clone();
        }
        let peer = (i + self.one_peer_shift(k)) % self.n;
        if peer == i {
            vec![(i, 1.0)]
        } else {
            let mut row = vec![(i, 0.5), (peer, 0.5)];
            row.sort_by_key(|&(j, _)| j);
            row
        }
    }

    /// Dense matrix active at iteration `k`.
    pub fn weights_at(&self, k: u64) -> DMatrix<f64> {
        if let Some(w) = &self.weights {
            return w.clone();
        }
        let mut w = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row_at(i, k) {
                w[(i, j)] = v;
            }
        }
        w
    }

    /// One gossip step: `dst_i = sum_j w_ij src_j` for flat node-major blocks of width `dim`.
    pub fn mix_into(&self, k: u64, src: &[f64], dst: &mut [f64], dim: usize) {
        debug_assert_eq!(src.len(), self.n * dim);
        debug_assert_eq!(dst.len(), self.n * dim);
        if self.weights.is_some() {
            for (i, row) in self.rows.iter().enumerate() {
                accumulate_row(row, src, &mut dst[i * dim..(i + 1) * dim], dim);
            }
        } else {
            for i in 0..self.n {
                let row = self.row_at(i, k);
                accumulate_row(&row, src, &mut dst[i * dim..(i + 1) * dim], dim);
            }
        }
    }

    /// Spectral norm `||W - (1/n) 11^T||_2` of a static topology.
    pub fn beta(&self) -> Result<f64> {
        let w = self.weights.as_ref().ok_or_else(|| {
            Error::Unsupported(format!(
                "beta is undefined for the time-varying {} schedule",
                self.kind
            ))
        })?;
        Ok(deviation_norm(w))
    }

    /// Writes the matrix active at iteration `k` as row-major CSV.
    pub fn write_weights_csv<W: Write>(&self, k: u64, out: W) -> Result<()> {
        let w = self.weights_at(k);
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for i in 0..self.n {
            writer.write_record((0..self.n).map(|j| format!("{}", w[(i, j)])))?;
        }
        writer.flush()?;
        Ok(())
    }
}

fn accumulate_row(row: &[(usize, f64)], src: &[f64], out: &mut [f64], dim: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for &(j, w) in row {
        let xj = &src[j * dim..(j + 1) * dim];
        for (o, x) in out.iter_mut().zip(xj) {
            *o += w * x;
        }
    }
}

/// `||M - (1/n) 11^T||_2` for any square matrix; symmetric input takes the
/// eigenvalue path, anything else the singular value path.
pub fn deviation_norm(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let avg = 1.0 / n as f64;
    let dev = w.map(|v| v - avg);
    if dev.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let norm = if dev == dev.transpose() {
        dev.symmetric_eigenvalues()
            .iter()
            .fold(0.0_f64, |m, &l| m.max(l.abs()))
    } else {
        dev.singular_values().max()
    };
    norm.min(1.0)
}

/// Checks nonnegativity and unit row/column sums, describing the worst violation.
pub fn check_doubly_stochastic(w: &DMatrix<f64>, tol: f64) -> std::result::Result<(), String> {
    if w.nrows() != w.ncols() {
        return Err(format!("matrix is {}x{}, not square", w.nrows(), w.ncols()));
    }
    if let Some((idx, v)) = w.iter().enumerate().find(|(_, v)| **v < 0.0 || !v.is_finite()) {
        return Err(format!("entry {idx} is {v}"));
    }
    for i in 0..w.nrows() {
        let s: f64 = w.row(i).sum();
        if (s - 1.0).abs() > tol {
            return Err(format!("row {i} sums to {s}"));
        }
        let s: f64 = w.column(i).sum();
        if (s - 1.0).abs() > tol {
            return Err(format!("column {i} sums to {s}"));
        }
    }
    Ok(())
}

/// Builds weights `w_ij = 1/max(|N_i|, |N_j|)` with the remainder on the diagonal.
fn metropolis_hastings(neighbors: &[Vec<usize>]) -> DMatrix<f64> {
    let n = neighbors.len();
    let size: Vec<usize> = neighbors.iter().map(|nb| nb.len() + 1).collect();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for &j in &neighbors[i] {
            w[(i, j)] = 1.0 / size[i].max(size[j]) as f64;
        }
    }
    for i in 0..n {
        let off: f64 = neighbors[i].iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

fn undirected_neighbors(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut nb = vec![Vec::new(); n];
    for (a, b) in edges {
        if a != b {
            nb[a].push(b);
            nb[b].push(a);
        }
    }
    for list in &mut nb {
        list.sort_unstable();
        list.dedup();
    }
    nb
}

/// Cycle where each node averages itself and both neighbors with weight 1/3.
pub fn build_ring(n: usize) -> Result<Topology> {
    if n < 3 {
        return Err(Error::InvalidTopology(format!("ring needs n >= 3, got {n}")));
    }
    let third = 1.0 / 3.0;
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        w[(i, i)] = third;
        w[(i, (i + 1) % n)] = third;
        w[(i, (i + n - 1) % n)] = third;
    }
    Ok(Topology::from_dense(TopologyKind::Ring, w))
}

/// Non-wrapping 2-D grid with Metropolis-Hastings weights.
pub fn build_grid(rows: usize, cols: usize) -> Result<Topology> {
    if rows == 0 || cols == 0 || rows * cols < 2 {
        return Err(Error::InvalidTopology(format!(
            "grid needs at least two nodes, got {rows}x{cols}"
        )));
    }
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((id(r, c), id(r + 1, c)));
            }
        }
    }
    let nb = undirected_neighbors(rows * cols, edges.into_iter());
    Ok(Topology::from_dense(
        TopologyKind::Grid { rows, cols },
        metropolis_hastings(&nb),
    ))
}

fn ceil_log2(n: usize) -> usize {
    (usize::BITS - (n - 1).leading_zeros()) as usize
}

/// Exponential graph linking `i` to `i + 2^j mod n`.
///
/// For power-of-two `n` the links are directed and uniformly weighted, which
/// keeps the circulant matrix doubly stochastic. Other sizes use the
/// undirected closure with Metropolis-Hastings weights.
pub fn build_static_exponential(n: usize) -> Result<Topology> {
    if n == 0 {
        return Err(Error::InvalidTopology("n must be at least 1".into()));
    }
    let hops = ceil_log2(n);
    let w = if n.is_power_of_two() {
        let mut w = DMatrix::zeros(n, n);
        let weight = 1.0 / (hops + 1) as f64;
        for i in 0..n {
            w[(i, i)] = weight;
            for j in 0..hops {
                w[(i, (i + (1 << j)) % n)] = weight;
            }
        }
        w
    } else {
        let edges = (0..n).flat_map(|i| (0..hops).map(move |j| (i, (i + (1 << j)) % n)));
        metropolis_hastings(&undirected_neighbors(n, edges))
    };
    Ok(Topology::from_dense(TopologyKind::StaticExponential, w))
}

/// Time-varying one-peer exponential graph: at iteration `k` node `i` averages
/// with `i + 2^(k mod log2 n)`.
pub fn build_one_peer_exponential(n: usize) -> Result<Topology> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::UnsupportedTopology(format!(
            "one-peer exponential graph requires a power-of-two n, got {n}"
        )));
    }
    Ok(Topology {
        n,
        kind: TopologyKind::OnePeerExponential,
        weights: None,
        rows: Vec::new(),
        schedule_period: n.trailing_zeros() as usize,
    })
}

pub fn build_fully_connected(n: usize) -> Result<Topology> {
    if n == 0 {
        return Err(Error::InvalidTopology("n must be at least 1".into()));
    }
    let w = DMatrix::from_element(n, n, 1.0 / n as f64);
    Ok(Topology::from_dense(TopologyKind::FullyConnected, w))
}

pub fn build_identity(n: usize) -> Result<Topology> {
    if n == 0 {
        return Err(Error::InvalidTopology("n must be at least 1".into()));
    }
    Ok(Topology::from_dense(
        TopologyKind::DisconnectedIdentity,
        DMatrix::identity(n, n),
    ))
}

/// Derived constants `C_beta = sum_{k<H} beta^k` and `D_beta = min{H, 1/(1-beta)}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MixingConstants {
    pub beta: f64,
    pub c_beta: f64,
    pub d_beta: f64,
    pub period: f64,
}

impl MixingConstants {
    /// Same as [`mixing_constants`] but accepts a real-valued period such as `sqrt(n)`.
    pub fn with_real_period(beta: f64, period: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidInput(format!("beta must lie in [0, 1], got {beta}")));
        }
        if period.is_nan() || period < 1.0 {
            return Err(Error::InvalidInput(format!("period must be >= 1, got {period}")));
        }
        let (c_beta, d_beta) = if beta == 1.0 {
            (period, period)
        } else {
            let inv_gap = 1.0 / (1.0 - beta);
            let d = period.min(inv_gap);
            let c = if period.is_infinite() {
                inv_gap
            } else {
                (1.0 - beta.powf(period)) / (1.0 - beta)
            };
            (c.min(d), d)
        };
        Ok(MixingConstants {
            beta,
            c_beta,
            d_beta,
            period,
        })
    }
}

pub fn mixing_constants(beta: f64, period: u64) -> Result<MixingConstants> {
    if period < 1 {
        return Err(Error::InvalidPeriod(period));
    }
    MixingConstants::with_real_period(beta, period as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn assert_doubly_stochastic(t: &Topology, k: u64) {
        check_doubly_stochastic(&t.weights_at(k), STOCHASTIC_TOL).unwrap();
    }

    #[test]
    fn ring_of_three_is_complete() {
        let t = build_ring(3).unwrap();
        let w = t.static_weights().unwrap();
        assert!(w.iter().all(|&v| v == 1.0 / 3.0));
        assert_abs_diff_eq!(t.beta().unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn ring_rejects_small_n() {
        assert!(matches!(build_ring(2), Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn ring_beta_matches_circulant_eigenvalue() {
        for n in [20usize, 50] {
            let expected = (1.0 + 2.0 * (2.0 * PI / n as f64).cos()) / 3.0;
            assert_abs_diff_eq!(build_ring(n).unwrap().beta().unwrap(), expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn two_node_grid() {
        let t = build_grid(1, 2).unwrap();
        let w = t.static_weights().unwrap();
        assert!(w.iter().all(|&v| v == 0.5));
        assert_abs_diff_eq!(t.beta().unwrap(), 0.0, epsilon = 1e-15);
        assert!(build_grid(1, 1).is_err());
    }

    #[test]
    fn grid_interior_weights() {
        let t = build_grid(3, 3).unwrap();
        let w = t.static_weights().unwrap();
        let centre = 4;
        for nb in [1, 3, 5, 7] {
            assert_eq!(w[(centre, nb)], 0.2);
        }
        assert_abs_diff_eq!(w[(centre, centre)], 0.2, epsilon = 1e-15);
        assert_eq!(t.max_degree(), 5);
        assert_doubly_stochastic(&t, 0);
    }

    #[test]
    fn exponential_power_of_two_neighborhood() {
        let t = build_static_exponential(4).unwrap();
        let w = t.static_weights().unwrap();
        for j in 0..3 {
            assert_eq!(w[(0, j)], 1.0 / 3.0);
        }
        assert_eq!(w[(0, 3)], 0.0);
        assert_doubly_stochastic(&t, 0);
        let two = build_static_exponential(2).unwrap();
        assert_abs_diff_eq!(two.beta().unwrap(), 0.0, epsilon = 1e-15);
        let one = build_static_exponential(1).unwrap();
        assert_eq!(one.weights_at(0)[(0, 0)], 1.0);
    }

    #[test]
    fn exponential_non_power_of_two_is_symmetric() {
        for n in [3usize, 5, 6, 12, 20] {
            let t = build_static_exponential(n).unwrap();
            let w = t.static_weights().unwrap();
            assert_eq!(w, &w.transpose());
            assert_doubly_stochastic(&t, 0);
            assert!(t.beta().unwrap() < 1.0);
        }
    }

    #[test]
    fn one_peer_schedule() {
        let t = build_one_peer_exponential(2).unwrap();
        for k in 0..5 {
            assert!(t.weights_at(k).iter().all(|&v| v == 0.5));
        }
        let t = build_one_peer_exponential(8).unwrap();
        assert_eq!(t.row_at(0, 0), vec![(0, 0.5), (1, 0.5)]);
        assert_eq!(t.row_at(0, 1), vec![(0, 0.5), (2, 0.5)]);
        assert_eq!(t.row_at(0, 3), vec![(0, 0.5), (1, 0.5)]);
        assert_eq!(t.row_at(7, 0), vec![(0, 0.5), (7, 0.5)]);
        assert!(t.beta().is_err());
        assert!(matches!(
            build_one_peer_exponential(6),
            Err(Error::UnsupportedTopology(_))
        ));
    }

    #[test]
    fn fully_connected_and_identity() {
        let t = build_fully_connected(4).unwrap();
        assert!(t.static_weights().unwrap().iter().all(|&v| v == 0.25));
        assert_eq!(t.beta().unwrap(), 0.0);
        assert_eq!(build_identity(4).unwrap().beta().unwrap(), 1.0);
        assert_eq!(build_identity(1).unwrap().beta().unwrap(), 0.0);
        assert!(!build_identity(4).unwrap().communicates());
    }

    #[test]
    fn mixing_matches_dense_product() {
        let t = build_grid(2, 3).unwrap();
        let dim = 2;
        let src: Vec<f64> = (0..12).map(|v| v as f64 * 0.7 - 3.0).collect();
        let mut dst = vec![0.0; 12];
        t.mix_into(0, &src, &mut dst, dim);
        let w = t.weights_at(0);
        for i in 0..6 {
            for c in 0..dim {
                let expect: f64 = (0..6).map(|j| w[(i, j)] * src[j * dim + c]).sum();
                assert_abs_diff_eq!(dst[i * dim + c], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mixing_constants_examples() {
        let m = mixing_constants(0.5, 4).unwrap();
        assert_abs_diff_eq!(m.c_beta, 1.875, epsilon = 1e-15);
        assert_eq!(m.d_beta, 2.0);
        let m = mixing_constants(0.0, 7).unwrap();
        assert_eq!((m.c_beta, m.d_beta), (1.0, 1.0));
        let m = mixing_constants(1.0, 5).unwrap();
        assert_eq!((m.c_beta, m.d_beta), (5.0, 5.0));
        assert!(matches!(mixing_constants(0.5, 0), Err(Error::InvalidPeriod(0))));
    }

    #[test]
    fn mixing_constants_against_direct_sum() {
        // 16-term summation oracle.
        let direct: f64 = (0..16).map(|k| 0.967f64.powi(k)).sum();
        let m = mixing_constants(0.967, 16).unwrap();
        assert_abs_diff_eq!(m.c_beta, direct, epsilon = 1e-12);
        assert_abs_diff_eq!(m.c_beta, 12.59, epsilon = 0.005);
        assert_eq!(m.d_beta, 16.0);
    }

    #[test]
    fn csv_export_is_row_major() {
        let t = build_ring(3).unwrap();
        let mut buf = Vec::new();
        t.write_weights_csv(0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let parsed: Vec<f64> = lines[0].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(parsed, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn corrupted_matrix_is_reported() {
        let mut w = build_ring(4).unwrap().weights_at(0);
        w[(0, 0)] += 0.1;
        let msg = check_doubly_stochastic(&w, STOCHASTIC_TOL).unwrap_err();
        assert!(msg.contains("row 0"), "{msg}");
    }
}
