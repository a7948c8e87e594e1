//! Fixtures for the benchmarks: one realistic round drawn from a scenario.

use hfel::alloc::{energy_cap, ClusterRound, DeviceRound, EnergyLedger, RoundPhase};
use hfel::sim::config::GraphSpec;
use hfel::sim::{build_scenario, draw_round_environment, Scenario};
use hfel::{BackhaulGraph, ScenarioConfig};

pub struct RoundFixture {
    pub scenario: Scenario,
    pub clusters: Vec<ClusterRound>,
    pub backhaul: BackhaulGraph,
    /// One completed edge round per cluster, as seen at the decision point.
    pub past_edge_times: Vec<Vec<f64>>,
}

/// First global round of the canonical scenario scaled to `clusters`
/// servers on a complete backhaul.
pub fn round_fixture(clusters: usize, seed: u64) -> RoundFixture {
    let mut config = ScenarioConfig::canonical().with_seed(seed);
    config.clusters = clusters;
    config.graph = GraphSpec::Complete;
    let scenario = build_scenario(&config).expect("canonical scenario builds");
    let h = scenario.hyper;
    let ledger = EnergyLedger::from_profiles(&scenario.profiles);
    let caps = energy_cap(&ledger, 0, h.edge_rounds - 1, h.rounds, h.edge_rounds, RoundPhase::Last).unwrap();
    let (channel, bandwidth) = draw_round_environment(&config, &scenario.base, 0, h.edge_rounds - 1);
    let clusters: Vec<ClusterRound> = (0..scenario.num_clusters())
        .map(|c| ClusterRound {
            devices: scenario
                .cluster_devices(c)
                .map(|n| DeviceRound {
                    profile: scenario.profiles[n],
                    hyper: scenario.device_hyper[n],
                    snr: channel.snr[n],
                    energy_cap: caps[n],
                })
                .collect(),
            bandwidth_budget: channel.server_bandwidth[c],
        })
        .collect();
    let past_edge_times = vec![vec![0.05]; clusters.len()];
    let backhaul = BackhaulGraph::new(scenario.base.clone(), bandwidth).unwrap();
    RoundFixture { scenario, clusters, backhaul, past_edge_times }
}
