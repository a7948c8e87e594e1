//! The online control loop: allocate every edge round, redesign the backhaul
//! topology at the last edge round, train, and account time and energy.

use rayon::prelude::*;

use super::config::{Method, ScenarioConfig};
use super::env::{build_scenario, draw_round_environment, Scenario};
use super::trace::RoundTrace;
use crate::alloc::{energy_cap, Allocation, ClusterRound, DeviceRound, EnergyLedger, RoundPhase};
use crate::cost;
use crate::error::{Error, Result};
use crate::graph::{metropolis_mixing, zeta, Adjacency, BackhaulGraph};
use crate::rng::{stream_rng, Stream};
use crate::topology::{
    allocate_clusters, consensus_constraint_lhs, solve_p22, sync_times, ConsensusMatrix, DesignProblem,
    TopologyDecision,
};
use crate::trainer::{consensus_average, consensus_pairwise, edge_aggregate, inter_server_mix, local_sgd};
use crate::trainer::{ModelState, SgdConfig};

/// State visible after each edge round.
pub struct RoundSnapshot<'a> {
    pub scenario: &'a Scenario,
    pub t: usize,
    pub r: usize,
    /// Server models after aggregation, and after gossip at the last edge round.
    pub server_models: &'a [ModelState],
    pub clusters: &'a [ClusterRound],
    pub allocations: &'a [Allocation],
    pub decision: Option<&'a TopologyDecision>,
    pub trace: &'a RoundTrace,
}

pub fn run(config: &ScenarioConfig) -> Result<Vec<RoundTrace>> {
    run_observed(config, |_| {})
}

pub fn run_fedrt(config: &ScenarioConfig) -> Result<Vec<RoundTrace>> {
    run(&config.clone().with_method(Method::FedRt))
}

pub fn run_baseline(config: &ScenarioConfig) -> Result<Vec<RoundTrace>> {
    if config.method == Method::FedRt {
        return Err(Error::Config("fedrt is not a baseline".into()));
    }
    run(config)
}

fn upper_triangle(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|ij| m[ij]).collect()
}

fn cluster_rounds(sc: &Scenario, snr: &[f64], budget: &[f64], caps: &[f64]) -> Vec<ClusterRound> {
    (0..sc.num_clusters())
        .map(|c| ClusterRound {
            devices: sc
                .cluster_devices(c)
                .map(|n| DeviceRound {
                    profile: sc.profiles[n],
                    hyper: sc.device_hyper[n],
                    snr: snr[n],
                    energy_cap: caps[n],
                })
                .collect(),
            bandwidth_budget: budget[c],
        })
        .collect()
}

pub fn run_observed(config: &ScenarioConfig, mut observe: impl FnMut(&RoundSnapshot)) -> Result<Vec<RoundTrace>> {
    let sc = build_scenario(config)?;
    let method = config.method;
    let policy = method.allocation_policy();
    let (rounds, edge_rounds) = (sc.hyper.rounds, sc.hyper.edge_rounds);
    let c_count = sc.num_clusters();
    let per_cluster = config.devices_per_cluster;

    let mut ledger = EnergyLedger::from_profiles(&sc.profiles);
    let init = sc.model.init(&mut stream_rng(config.seed, Stream::Init, &[]));
    let mut servers = vec![init; c_count];
    let mut upsilon = ConsensusMatrix::zeros(c_count);
    let mut reference: Option<f64> = None;
    // topology of the previous global round; its pairs are the ones measured
    let mut previous = sc.base.clone();
    let mut elapsed = 0.0;
    let mut traces = Vec::with_capacity(rounds * edge_rounds);

    for t in 0..rounds {
        let (_, bandwidth) = draw_round_environment(config, &sc.base, t, 0);
        let backhaul = BackhaulGraph::new(sc.base.clone(), bandwidth.clone())?;
        let mut past: Vec<Vec<f64>> = vec![Vec::with_capacity(edge_rounds); c_count];
        for r in 0..edge_rounds {
            let last = r + 1 == edge_rounds;
            let (channel, _) = draw_round_environment(config, &sc.base, t, r);
            let phase = if last { RoundPhase::Last } else { RoundPhase::Mid };
            let caps = energy_cap(&ledger, t, r, rounds, edge_rounds, phase)?;
            let clusters = cluster_rounds(&sc, &channel.snr, &channel.server_bandwidth, &caps);

            let mut decision = None;
            let mut threshold = None;
            let allocations = if last {
                upsilon.refresh(&previous, |i, j| consensus_pairwise(&servers[i], &servers[j]))?;
                if reference.is_none() && upsilon.mean_off_diagonal() > 0.0 {
                    reference = Some(upsilon.mean_off_diagonal());
                }
                // the base graph is always admissible
                let u = config
                    .upsilon_max
                    .threshold(t, rounds, reference)
                    .max(consensus_constraint_lhs(&sc.base, &upsilon));
                let problem = DesignProblem {
                    clusters: &clusters,
                    past_edge_times: &past,
                    backhaul: &backhaul,
                    upsilon: &upsilon,
                    upsilon_max: u,
                    hyper: &sc.hyper,
                    policy,
                };
                let d = if method.designs_topology() { solve_p22(&problem)? } else { problem.evaluate(&sc.base)? };
                threshold = Some(u);
                let allocations = d.allocations.clone();
                decision = Some(d);
                allocations
            } else {
                allocate_clusters(&clusters, policy)?
            };

            let mut device_energy = Vec::with_capacity(sc.num_devices());
            let mut cluster_time = Vec::with_capacity(c_count);
            for (c, (cl, a)) in clusters.iter().zip(&allocations).enumerate() {
                cl.check(a).map_err(|e| Error::Invariant(format!("round ({t}, {r}) cluster {c}: {e}")))?;
                device_energy.extend(cl.device_energies(a)?);
                cluster_time.push(cl.round_time(a)?);
            }
            ledger.record(&device_energy)?;

            let h = &config.hyper;
            let device_models = (0..sc.num_devices())
                .into_par_iter()
                .map(|n| {
                    let cfg = SgdConfig {
                        steps: sc.device_hyper[n].local_iters,
                        batch_size: h.batch_size,
                        eta: h.eta,
                        momentum: h.momentum,
                    };
                    let mut rng = stream_rng(config.seed, Stream::Training, &[t as u64, r as u64, n as u64]);
                    local_sgd(&sc.model, &servers[n / per_cluster], &sc.shards[n], &cfg, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            for c in 0..c_count {
                servers[c] = edge_aggregate(&device_models[sc.cluster_devices(c)])?;
                servers[c].check_finite()?;
                past[c].push(cluster_time[c]);
            }

            let mut trace = RoundTrace {
                method,
                seed: config.seed,
                t,
                r,
                device_bandwidth: allocations.iter().flat_map(|a| a.bandwidth.iter().copied()).collect(),
                device_frequency: allocations.iter().flat_map(|a| a.frequency.iter().copied()).collect(),
                device_snr: channel.snr.clone(),
                device_local_iters: sc.device_hyper.iter().map(|h| h.local_iters).collect(),
                device_energy,
                cumulative_energy: ledger.spent().to_vec(),
                cluster_budget: channel.server_bandwidth.clone(),
                cluster_time,
                cluster_sync_time: None,
                backhaul_bandwidth: upper_triangle(&bandwidth),
                active_edges: previous.clone(),
                global_time: None,
                cumulative_time: 0.0,
                consensus_bound: None,
                upsilon_max: threshold,
                consensus_average: 0.0,
                max_staleness: None,
                zeta: None,
                train_loss: None,
                test_accuracy: None,
                test_loss: None,
            };

            if let Some(d) = &decision {
                let mixing = metropolis_mixing(&d.active);
                servers = inter_server_mix(&servers, &mixing, sc.hyper.psi)?;
                let sync = sync_times(&d.active, &bandwidth, &sc.hyper)?;
                let global = cost::global_round_time(&past, &sync)?;
                if global != d.predicted_time {
                    return Err(Error::Invariant(format!(
                        "round {t}: realized time {global} differs from predicted {}",
                        d.predicted_time
                    )));
                }
                elapsed += global;
                let mean = edge_aggregate(&servers)?;
                let (train_loss, _) = sc.model.evaluate(&mean, &sc.train);
                let (test_loss, test_accuracy) = sc.model.evaluate(&mean, &sc.test);
                trace.cluster_sync_time = Some(sync);
                trace.active_edges = d.active.clone();
                trace.global_time = Some(global);
                trace.cumulative_time = elapsed;
                trace.consensus_bound = Some(consensus_constraint_lhs(&d.active, &upsilon));
                trace.max_staleness = Some(upsilon.max_staleness());
                trace.zeta = Some(zeta(&mixing));
                trace.train_loss = Some(train_loss);
                trace.test_accuracy = Some(test_accuracy);
                trace.test_loss = Some(test_loss);
            } else {
                let partial = past.iter().map(|p| cost::cluster_total_time(p, 0.0)).fold(0.0, f64::max);
                trace.cumulative_time = elapsed + partial;
            }
            trace.consensus_average = consensus_average(&servers)?;

            observe(&RoundSnapshot {
                scenario: &sc,
                t,
                r,
                server_models: &servers,
                clusters: &clusters,
                allocations: &allocations,
                decision: decision.as_ref(),
                trace: &trace,
            });
            traces.push(trace);
            if let Some(d) = decision {
                previous = d.active;
            }
        }
    }
    Ok(traces)
}

/// Active topology of every global round, in order.
pub fn topologies(traces: &[RoundTrace]) -> Vec<Adjacency> {
    traces.iter().filter(|t| t.global_time.is_some()).map(|t| t.active_edges.clone()).collect()
}
