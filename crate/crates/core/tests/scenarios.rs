//! End-to-end runs of the harness on small scenarios.

use hfel::sim::config::GraphSpec;
use hfel::sim::runner::topologies;
use hfel::sim::{run, summarize};
use hfel::trainer::PartitionScheme;
use hfel::{Error, Method, ScenarioConfig};
use rayon::prelude::*;

fn short(method: Method, seed: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::canonical().with_method(method).with_seed(seed);
    c.hyper.rounds = 12;
    c
}

#[test]
fn every_method_stays_within_energy_budget() {
    let grid: Vec<(Method, u64)> = Method::ALL.into_iter().flat_map(|m| (0..20).map(move |s| (m, s))).collect();
    grid.par_iter().for_each(|&(m, seed)| {
        let c = short(m, 100 + seed);
        let tr = run(&c).unwrap();
        let last = tr.last().unwrap();
        for (n, e) in last.cumulative_energy.iter().enumerate() {
            assert!(*e <= c.devices.energy_budget, "{m} seed {seed} device {n}: {e}");
        }
    });
}

fn homogeneous(method: Method) -> ScenarioConfig {
    let mut c = short(method, 5);
    c.devices.mu = [3e5, 3e5];
    c.devices.alpha_factor = [0.05, 0.05];
    c.channel.snr_db = [8.0, 8.0];
    c.channel.backhaul = [5e6, 5e6];
    c.partition = PartitionScheme::Iid;
    c
}

#[test]
fn homogeneous_scenario_gives_every_method_the_same_run() {
    let runs: Vec<_> = Method::ALL.into_iter().map(|m| run(&homogeneous(m)).unwrap()).collect();
    let reference = &runs[0];
    for (m, tr) in Method::ALL.into_iter().zip(&runs).skip(1) {
        assert_eq!(topologies(tr), topologies(reference), "{m}");
        for (a, b) in tr.iter().zip(reference) {
            assert!((a.cumulative_time - b.cumulative_time).abs() <= 1e-9 * b.cumulative_time, "{m}");
            assert_eq!(a.device_local_iters, b.device_local_iters, "{m}");
            assert_eq!(a.test_accuracy, b.test_accuracy, "{m}");
            assert_eq!(a.consensus_average, b.consensus_average, "{m}");
        }
    }
}

#[test]
fn fedrt_is_faster_than_ce_fedavg() {
    for seed in 0..3 {
        let f = summarize(&run(&short(Method::FedRt, seed)).unwrap()).unwrap();
        let c = summarize(&run(&short(Method::CeFedAvg, seed)).unwrap()).unwrap();
        assert!(f.total_time < c.total_time, "seed {seed}: {} vs {}", f.total_time, c.total_time);
    }
}

#[test]
fn mll_sgd_gives_cheaper_devices_more_iterations() {
    let c = short(Method::MllSgd, 3);
    let tr = run(&c).unwrap();
    let sc = hfel::sim::build_scenario(&c).unwrap();
    let iters = &tr[0].device_local_iters;
    for i in 0..iters.len() {
        for j in 0..iters.len() {
            let (ci, cj) = (sc.profiles[i].mu / sc.profiles[i].f_max, sc.profiles[j].mu / sc.profiles[j].f_max);
            if ci <= cj {
                assert!(iters[i] >= iters[j]);
            }
        }
    }
    // the slowest device keeps the configured count; faster ones fill its time
    assert_eq!(iters.iter().min(), Some(&c.hyper.local_iters));
}

#[test]
fn ring_backhaul_stays_connected_and_within_base() {
    let mut c = short(Method::FedRt, 8);
    c.clusters = 6;
    c.graph = GraphSpec::Ring;
    let tr = run(&c).unwrap();
    let base = hfel::sim::env::base_graph(&c).unwrap();
    for a in topologies(&tr) {
        assert!(a.is_subgraph_of(&base));
        assert!(hfel::graph::is_connected_traversal(&a));
    }
}

#[test]
fn unreachable_energy_budget_is_reported_as_infeasible() {
    let mut c = short(Method::FedRt, 0);
    c.devices.energy_budget = 1e-4;
    match run(&c) {
        Err(Error::Infeasible { .. }) => {}
        other => panic!("expected infeasibility, got {:?}", other.map(|t| t.len())),
    }
}
