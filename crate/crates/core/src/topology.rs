//! Backhaul topology design at the last edge round of each global round.
//!
//! Starting from the base graph, batches of the slowest links are removed
//! while the graph stays connected and the estimated consensus distance
//! stays under the threshold. A batch is kept only if the predicted global
//! round time strictly drops; otherwise the batch size is halved.

use nalgebra::DMatrix;

use crate::alloc::{Allocation, AllocationPolicy, ClusterRound};
use crate::cost::{self, Hyperparams};
use crate::error::{Error, Result};
use crate::graph::{is_connected, Adjacency, BackhaulGraph};

/// Pairwise consensus distances between edge servers and how many topology
/// decisions ago each entry was last measured.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMatrix {
    upsilon: DMatrix<f64>,
    staleness: DMatrix<u32>,
}

impl ConsensusMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { upsilon: DMatrix::zeros(n, n), staleness: DMatrix::zeros(n, n) }
    }

    pub fn from_matrix(upsilon: DMatrix<f64>) -> Result<Self> {
        let n = upsilon.nrows();
        if upsilon.ncols() != n {
            return Err(Error::domain("consensus matrix must be square"));
        }
        for i in 0..n {
            if upsilon[(i, i)] != 0.0 {
                return Err(Error::domain("consensus matrix diagonal must be zero"));
            }
            for j in 0..n {
                let v = upsilon[(i, j)];
                if !(v >= 0.0 && v.is_finite()) || v != upsilon[(j, i)] {
                    return Err(Error::domain("consensus matrix must be symmetric, finite and non-negative"));
                }
            }
        }
        Ok(Self { upsilon, staleness: DMatrix::zeros(n, n) })
    }

    pub fn len(&self) -> usize {
        self.upsilon.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upsilon[(i, j)]
    }

    pub fn staleness(&self, i: usize, j: usize) -> u32 {
        self.staleness[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.upsilon
    }

    /// Re-measures the pairs adjacent in `measured`; every other pair keeps
    /// its value and ages by one.
    pub fn refresh(&mut self, measured: &Adjacency, distance: impl Fn(usize, usize) -> f64) -> Result<()> {
        let n = self.len();
        if measured.len() != n {
            return Err(Error::domain("adjacency size does not match consensus matrix"));
        }
        for i in 0..n {
            for j in i + 1..n {
                if measured.has_edge(i, j) {
                    let d = distance(i, j);
                    if !(d >= 0.0 && d.is_finite()) {
                        return Err(Error::Invariant(format!("consensus distance ({i}, {j}) is {d}")));
                    }
                    self.upsilon[(i, j)] = d;
                    self.upsilon[(j, i)] = d;
                    self.staleness[(i, j)] = 0;
                    self.staleness[(j, i)] = 0;
                } else {
                    self.staleness[(i, j)] += 1;
                    self.staleness[(j, i)] += 1;
                }
            }
        }
        Ok(())
    }

    /// Mean over ordered pairs `c != c'`.
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        self.upsilon.sum() / (n * (n - 1)) as f64
    }

    pub fn max_staleness(&self) -> u32 {
        self.staleness.max()
    }
}

/// Estimated consensus distance after gossip: the average of `Upsilon` over
/// pairs that are not directly linked.
pub fn consensus_constraint_lhs(active: &Adjacency, upsilon: &ConsensusMatrix) -> f64 {
    let n = active.len();
    debug_assert_eq!(n, upsilon.len());
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && !active.has_edge(i, j) {
                sum += upsilon.get(i, j);
            }
        }
    }
    sum / (n * n) as f64
}

/// Sync time of every server over its active links. A lone server has
/// nothing to synchronize.
pub fn sync_times(active: &Adjacency, bandwidth: &DMatrix<f64>, hyper: &Hyperparams) -> Result<Vec<f64>> {
    let n = active.len();
    (0..n)
        .map(|c| {
            if n == 1 {
                return Ok(0.0);
            }
            let links: Vec<f64> = active.neighbors(c).map(|k| bandwidth[(c, k)]).collect();
            cost::server_sync_time(hyper.psi, hyper.model_bits, &links)
                .map_err(|e| Error::Graph(format!("server {c}: {e}")))
        })
        .collect()
}

/// Global round time given realized earlier edge rounds, the last-round
/// allocation and an active topology.
pub fn predicted_global_time(
    past_edge_times: &[Vec<f64>],
    clusters: &[ClusterRound],
    allocations: &[Allocation],
    active: &Adjacency,
    bandwidth: &DMatrix<f64>,
    hyper: &Hyperparams,
) -> Result<f64> {
    if past_edge_times.len() != clusters.len() || allocations.len() != clusters.len() {
        return Err(Error::domain("need past times and an allocation for every cluster"));
    }
    let last = last_round_times(clusters, allocations)?;
    predicted_from_last(past_edge_times, &last, active, bandwidth, hyper)
}

fn last_round_times(clusters: &[ClusterRound], allocations: &[Allocation]) -> Result<Vec<f64>> {
    clusters.iter().zip(allocations).map(|(c, a)| c.round_time(a)).collect()
}

fn predicted_from_last(
    past_edge_times: &[Vec<f64>],
    last: &[f64],
    active: &Adjacency,
    bandwidth: &DMatrix<f64>,
    hyper: &Hyperparams,
) -> Result<f64> {
    let edge_times: Vec<Vec<f64>> = past_edge_times
        .iter()
        .zip(last)
        .map(|(past, l)| {
            let mut v = past.clone();
            v.push(*l);
            v
        })
        .collect();
    let sync = sync_times(active, bandwidth, hyper)?;
    cost::global_round_time(&edge_times, &sync)
}

/// Up to `e` active links, slowest first, whose joint removal keeps the
/// consensus estimate within `upsilon_max`. Links that would breach the
/// threshold are skipped. Ties are broken by `(c, c')`.
pub fn select_slowest_links(
    graph: &BackhaulGraph,
    e: usize,
    upsilon: &ConsensusMatrix,
    upsilon_max: f64,
) -> Vec<(usize, usize)> {
    select_links(&graph.active, &graph.bandwidth, e, upsilon, upsilon_max)
}

fn select_links(
    active: &Adjacency,
    bandwidth: &DMatrix<f64>,
    e: usize,
    upsilon: &ConsensusMatrix,
    upsilon_max: f64,
) -> Vec<(usize, usize)> {
    let mut links = active.edges();
    links.sort_by(|a, b| bandwidth[*a].total_cmp(&bandwidth[*b]).then(a.cmp(b)));
    let mut trial = active.clone();
    let mut chosen = Vec::with_capacity(e);
    for (i, j) in links {
        if chosen.len() == e {
            break;
        }
        trial.remove_edge(i, j);
        if consensus_constraint_lhs(&trial, upsilon) <= upsilon_max {
            chosen.push((i, j));
        } else {
            trial.add_edge(i, j);
        }
    }
    chosen
}

/// Solves every cluster's allocation. Device indices in errors count
/// devices across all clusters.
pub fn allocate_clusters(clusters: &[ClusterRound], policy: AllocationPolicy) -> Result<Vec<Allocation>> {
    let mut offset = 0;
    let mut out = Vec::with_capacity(clusters.len());
    for c in clusters {
        out.push(policy.allocate(c).map_err(|e| e.offset_device(offset))?);
        offset += c.devices.len();
    }
    Ok(out)
}

/// Inputs to the joint topology and last-round allocation problem.
#[derive(Debug, Clone, Copy)]
pub struct DesignProblem<'a> {
    /// Last-round devices per cluster with their energy caps.
    pub clusters: &'a [ClusterRound],
    /// Realized edge-round times of this global round so far, per cluster.
    pub past_edge_times: &'a [Vec<f64>],
    /// Base graph and this round's link bandwidths. `active` is ignored.
    pub backhaul: &'a BackhaulGraph,
    pub upsilon: &'a ConsensusMatrix,
    pub upsilon_max: f64,
    pub hyper: &'a Hyperparams,
    pub policy: AllocationPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyDecision {
    pub active: Adjacency,
    pub allocations: Vec<Allocation>,
    pub predicted_time: f64,
    /// Number of times every cluster's allocation was solved.
    pub allocator_calls: usize,
    /// Predicted time of the initial configuration and of each accepted one.
    pub accepted_times: Vec<f64>,
}

impl DesignProblem<'_> {
    fn check(&self) -> Result<()> {
        let n = self.backhaul.num_servers();
        if self.clusters.len() != n || self.past_edge_times.len() != n || self.upsilon.len() != n {
            return Err(Error::domain("clusters, past times, consensus matrix and backhaul disagree on C"));
        }
        self.backhaul.validate()
    }

    pub fn allocate(&self) -> Result<Vec<Allocation>> {
        allocate_clusters(self.clusters, self.policy)
    }

    pub fn predicted(&self, allocations: &[Allocation], active: &Adjacency) -> Result<f64> {
        predicted_global_time(
            self.past_edge_times,
            self.clusters,
            allocations,
            active,
            &self.backhaul.bandwidth,
            self.hyper,
        )
    }

    /// Allocation and predicted time for a given topology, with no search.
    pub fn evaluate(&self, active: &Adjacency) -> Result<TopologyDecision> {
        self.check()?;
        if !active.is_subgraph_of(&self.backhaul.base) || !is_connected(active) {
            return Err(Error::Graph("topology must be a connected subgraph of the base graph".into()));
        }
        let allocations = self.allocate()?;
        let predicted_time = self.predicted(&allocations, active)?;
        Ok(TopologyDecision {
            active: active.clone(),
            allocations,
            predicted_time,
            allocator_calls: 1,
            accepted_times: vec![predicted_time],
        })
    }
}

/// Greedy slowest-link removal with a halving batch size.
pub fn solve_p22(problem: &DesignProblem) -> Result<TopologyDecision> {
    let mut best = problem.evaluate(&problem.backhaul.base)?;
    let mut flag = true;
    let mut e = 0usize;
    loop {
        e = if flag { (2 * best.active.edge_count()).isqrt() } else { e / 2 };
        let links = select_links(&best.active, &problem.backhaul.bandwidth, e, problem.upsilon, problem.upsilon_max);
        let mut candidate = best.active.clone();
        for (i, j) in links {
            candidate.remove_edge(i, j);
            if !is_connected(&candidate) {
                candidate.add_edge(i, j);
            }
        }
        let allocations = problem.allocate()?;
        best.allocator_calls += 1;
        let time = problem.predicted(&allocations, &candidate)?;
        flag = time < best.predicted_time;
        if flag {
            best.active = candidate;
            best.allocations = allocations;
            best.predicted_time = time;
            best.accepted_times.push(time);
        }
        if !flag && e <= 1 {
            break;
        }
    }
    Ok(best)
}

/// Worst-case number of allocation solves for a base graph with `edges`
/// links: each acceptance removes a link and each run of rejections halves
/// the batch size down to one.
pub fn allocator_call_bound(edges: usize) -> usize {
    let halvings = usize::BITS as usize - edges.max(1).leading_zeros() as usize;
    1 + (edges + 1) * (halvings + 2)
}

/// Exhaustive search used to check the greedy designer on small graphs.
pub mod oracle {
    use super::*;

    /// Best connected subgraph of the base graph within the consensus
    /// threshold, with the allocation solved once and shared by all
    /// candidates.
    pub fn exhaustive_topology(problem: &DesignProblem) -> Result<(Adjacency, f64)> {
        problem.check()?;
        let base_edges = problem.backhaul.base.edges();
        if base_edges.len() > 20 {
            return Err(Error::domain("exhaustive search limited to 20 base links"));
        }
        let n = problem.backhaul.num_servers();
        let allocations = problem.allocate()?;
        let last = last_round_times(problem.clusters, &allocations)?;
        let mut best: Option<(Adjacency, f64)> = None;
        for mask in 0u32..(1 << base_edges.len()) {
            let mut a = Adjacency::empty(n);
            for (k, (i, j)) in base_edges.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    a.add_edge(*i, *j);
                }
            }
            if !crate::graph::is_connected_traversal(&a)
                || consensus_constraint_lhs(&a, problem.upsilon) > problem.upsilon_max
            {
                continue;
            }
            let t =
                predicted_from_last(problem.past_edge_times, &last, &a, &problem.backhaul.bandwidth, problem.hyper)?;
            if best.as_ref().is_none_or(|(_, bt)| t < *bt) {
                best = Some((a, t));
            }
        }
        best.ok_or_else(|| Error::Graph("no connected subgraph satisfies the consensus threshold".into()))
    }
}
