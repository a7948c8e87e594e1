//! Server backhaul graph: adjacency, Laplacian spectrum, gossip mixing
//! weights and the convergence constants that depend on them.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};

/// Connectivity threshold on the algebraic connectivity.
pub const CONNECTIVITY_TOL: f64 = 1e-9;

/// Symmetric 0/1 adjacency with zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self { n, bits: vec![false; n * n] }
    }

    pub fn complete(n: usize) -> Self {
        let mut a = Self::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                a.add_edge(i, j);
            }
        }
        a
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Self::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::Graph(format!("invalid edge ({i}, {j}) for {n} nodes")));
            }
            a.add_edge(i, j);
        }
        Ok(a)
    }

    /// Builds from a dense 0/1 matrix, checking symmetry and the diagonal.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let mut a = Self::empty(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Graph("adjacency matrix must be square".into()));
            }
            for (j, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(Error::Graph(format!("adjacency entries must be 0 or 1, got {v}")));
                }
                if i == j && v != 0 {
                    return Err(Error::Graph("adjacency diagonal must be zero".into()));
                }
                if v != rows[j][i] {
                    return Err(Error::Graph(format!("adjacency is not symmetric at ({i}, {j})")));
                }
                a.bits[i * n + j] = v == 1;
            }
        }
        Ok(a)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        assert!(i != j, "self loops are not allowed");
        self.bits[i * self.n + j] = true;
        self.bits[j * self.n + i] = true;
    }

    pub fn remove_edge(&mut self, i: usize, j: usize) {
        self.bits[i * self.n + j] = false;
        self.bits[j * self.n + i] = false;
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.has_edge(i, j)).count()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.has_edge(i, j))
    }

    /// Undirected edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count() / 2
    }

    pub fn is_subgraph_of(&self, other: &Adjacency) -> bool {
        self.n == other.n && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| if self.has_edge(i, j) { 1.0 } else { 0.0 })
    }

    /// Upper triangle as a `0`/`1` string, row by row.
    pub fn upper_bits(&self) -> String {
        let mut s = String::with_capacity(self.n * (self.n.saturating_sub(1)) / 2);
        for i in 0..self.n {
            for j in i + 1..self.n {
                s.push(if self.has_edge(i, j) { '1' } else { '0' });
            }
        }
        s
    }

    pub fn from_upper_bits(n: usize, bits: &str) -> Result<Self> {
        let expected = n * n.saturating_sub(1) / 2;
        if bits.len() != expected {
            return Err(Error::Graph(format!("expected {expected} adjacency bits, got {}", bits.len())));
        }
        let mut a = Self::empty(n);
        let mut chars = bits.chars();
        for i in 0..n {
            for j in i + 1..n {
                match chars.next() {
                    Some('1') => a.add_edge(i, j),
                    Some('0') => {}
                    other => return Err(Error::Graph(format!("bad adjacency bit {other:?}"))),
                }
            }
        }
        Ok(a)
    }
}

/// Backhaul state for one global round.
#[derive(Debug, Clone, PartialEq)]
pub struct BackhaulGraph {
    pub base: Adjacency,
    pub active: Adjacency,
    /// Link bandwidth in bits/s; zero off the base edges.
    pub bandwidth: DMatrix<f64>,
}

impl BackhaulGraph {
    pub fn new(base: Adjacency, bandwidth: DMatrix<f64>) -> Result<Self> {
        let g = Self { active: base.clone(), base, bandwidth };
        g.validate()?;
        Ok(g)
    }

    pub fn num_servers(&self) -> usize {
        self.base.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.base.len();
        if self.bandwidth.nrows() != n || self.bandwidth.ncols() != n || self.active.len() != n {
            return Err(Error::Graph("backhaul matrices must all be C x C".into()));
        }
        if !self.active.is_subgraph_of(&self.base) {
            return Err(Error::Graph("active edges must be a subset of base edges".into()));
        }
        for i in 0..n {
            for j in 0..n {
                let b = self.bandwidth[(i, j)];
                if b != self.bandwidth[(j, i)] {
                    return Err(Error::Graph("bandwidth matrix must be symmetric".into()));
                }
                if self.base.has_edge(i, j) {
                    if !(b > 0.0) {
                        return Err(Error::Graph(format!("base link ({i}, {j}) has no bandwidth")));
                    }
                } else if b != 0.0 {
                    return Err(Error::Graph(format!("bandwidth on non-edge ({i}, {j})")));
                }
            }
        }
        if !is_connected(&self.base) {
            return Err(Error::Graph("base graph must be connected".into()));
        }
        Ok(())
    }
}

pub fn laplacian(adjacency: &Adjacency) -> DMatrix<f64> {
    let n = adjacency.len();
    let mut l = -adjacency.to_matrix();
    for i in 0..n {
        l[(i, i)] = adjacency.degree(i) as f64;
    }
    l
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Graph("matrix must be square".into()));
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in i + 1..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Graph(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_symmetric(m)?;
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Second-smallest Laplacian eigenvalue.
pub fn algebraic_connectivity(laplacian: &DMatrix<f64>) -> Result<f64> {
    if laplacian.nrows() < 2 {
        return Err(Error::Graph("algebraic connectivity needs at least two nodes".into()));
    }
    Ok(symmetric_eigenvalues(laplacian)?[1])
}

/// Spectral connectivity test: `lambda_2 > 1e-9`. Graphs with fewer than two
/// nodes are connected.
pub fn is_connected(adjacency: &Adjacency) -> bool {
    if adjacency.len() < 2 {
        return true;
    }
    let l = laplacian(adjacency);
    algebraic_connectivity(&l).map(|l2| l2 > CONNECTIVITY_TOL).unwrap_or(false)
}

/// Breadth-first connectivity test.
pub fn is_connected_traversal(adjacency: &Adjacency) -> bool {
    let n = adjacency.len();
    if n < 2 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for v in adjacency.neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Symmetric doubly stochastic gossip matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix(DMatrix<f64>);

impl MixingMatrix {
    /// Wraps a matrix after checking symmetry and unit row sums.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&m)?;
        for (i, row) in m.row_iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Graph(format!("mixing row {i} sums to {s}")));
            }
        }
        Ok(Self(m))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// Every entry `1 / n`.
    pub fn uniform(n: usize) -> Self {
        Self(DMatrix::from_element(n, n, 1.0 / n as f64))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

/// Metropolis–Hastings weights on the given adjacency.
pub fn metropolis_mixing(adjacency: &Adjacency) -> MixingMatrix {
    let n = adjacency.len();
    let deg: Vec<usize> = (0..n).map(|i| adjacency.degree(i)).collect();
    let mut m = DMatrix::zeros(n, n);
    for (i, j) in adjacency.edges() {
        let w = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        m[(i, j)] = w;
        m[(j, i)] = w;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)]).sum();
        m[(i, i)] = 1.0 - off;
    }
    MixingMatrix(m)
}

/// Second-largest eigenvalue magnitude of a mixing matrix.
pub fn zeta(mixing: &MixingMatrix) -> f64 {
    let n = mixing.len();
    if n < 2 {
        return 0.0;
    }
    let ev = symmetric_eigenvalues(mixing.matrix()).expect("mixing matrices are symmetric");
    // Largest is 1; the next in magnitude is either the second-largest or the smallest.
    ev[n - 2].abs().max(ev[0].abs())
}

/// `(Omega_1, Omega_2)` for gossip contraction `zeta` repeated `psi` times.
pub fn convergence_constants(zeta: f64, psi: u32) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&zeta) {
        return Err(Error::domain(format!("convergence constants need 0 <= zeta < 1, got {zeta}")));
    }
    if psi == 0 {
        return Err(Error::domain("psi must be >= 1"));
    }
    let zp = zeta.powi(psi as i32);
    let z2p = zp * zp;
    let omega1 = z2p / (1.0 - z2p);
    let omega2 = 1.0 / (1.0 - z2p) + 2.0 / (1.0 - zp) + zp / ((1.0 - zp) * (1.0 - zp));
    Ok((omega1, omega2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceDiagnostics {
    pub zeta: f64,
    pub omega1: f64,
    pub omega2: f64,
}

impl ConvergenceDiagnostics {
    pub fn new(mixing: &MixingMatrix, psi: u32) -> Result<Self> {
        let zeta = zeta(mixing);
        let (omega1, omega2) = convergence_constants(zeta, psi)?;
        Ok(Self { zeta, omega1, omega2 })
    }
}

/// User-supplied constants for evaluating the gradient-norm bound. None of
/// these are measured by the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub lipschitz: f64,
    pub grad_variance: f64,
    pub inter_cluster_divergence: f64,
    /// `F(u_1) - F_inf`.
    pub initial_gap: f64,
}

/// Right-hand side of the average squared gradient-norm bound, and whether
/// `eta` satisfies the step-size condition it requires.
#[allow(clippy::too_many_arguments)]
pub fn convergence_bound(
    diag: &ConvergenceDiagnostics,
    inputs: &BoundInputs,
    cluster_sizes: &[usize],
    intra_cluster_divergence: &[f64],
    eta: f64,
    rounds: usize,
    edge_rounds: usize,
    local_iters: u32,
) -> (f64, bool) {
    let l = inputs.lipschitz;
    let sigma2 = inputs.grad_variance * inputs.grad_variance;
    let eps2 = inputs.inter_cluster_divergence * inputs.inter_cluster_divergence;
    let c = cluster_sizes.len() as f64;
    let n: f64 = cluster_sizes.iter().sum::<usize>() as f64;
    let r = edge_rounds as f64;
    let s = f64::from(local_iters);
    let phi = rounds as f64 * r * s;
    let intra: f64 = cluster_sizes.iter().zip(intra_cluster_divergence).map(|(nc, e)| *nc as f64 / n * e * e).sum();
    let bound = 2.0 * inputs.initial_gap / (eta * phi)
        + eta * l * sigma2 / n
        + 8.0 * eta * eta * l * l * (diag.omega1 * r * s + (c - 1.0) / n * r * s) * sigma2
        + 16.0 * eta * eta * l * l * r * r * s * s * diag.omega2 * eps2
        + 8.0 * (n - c) / n * eta * eta * l * l * s * sigma2
        + 16.0 * l * l * eta * eta * s * s * intra;
    let step_ok = eta <= 1.0 / (2.0 * l * s) && eta <= 1.0 / (2.0 * (2.0 * diag.omega2).sqrt() * l * r * s);
    (bound, step_ok)
}

/// Erdős–Rényi graph on `n` nodes, resampled until connected.
pub fn erdos_renyi_connected<R: Rng>(n: usize, p: f64, rng: &mut R) -> Result<Adjacency> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Graph(format!("edge probability must be in (0, 1], got {p}")));
    }
    for _ in 0..100_000 {
        let mut a = Adjacency::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    a.add_edge(i, j);
                }
            }
        }
        if is_connected_traversal(&a) {
            return Ok(a);
        }
    }
    Err(Error::Graph(format!("no connected G({n}, {p}) sample after 100000 draws")))
}
