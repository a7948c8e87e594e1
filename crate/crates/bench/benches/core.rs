use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hfel::alloc::oracle::brute_force_allocation_oracle;
use hfel::alloc::{allocate_min_time, AllocationPolicy};
use hfel::rng::{stream_rng, Stream};
use hfel::sim::run;
use hfel::topology::{solve_p22, ConsensusMatrix, DesignProblem};
use hfel::trainer::SgdConfig;
use hfel::{Method, ScenarioConfig};
use hfel_bench::round_fixture;

fn allocator(c: &mut Criterion) {
    let fx = round_fixture(4, 1);
    let cluster = &fx.clusters[0];
    let mut g = c.benchmark_group("allocator");
    g.bench_function("min_time_3_devices", |b| b.iter(|| allocate_min_time(cluster).unwrap()));
    g.sample_size(10);
    g.bench_function("grid_oracle_3_devices_20", |b| b.iter(|| brute_force_allocation_oracle(cluster, 20).unwrap()));
    g.finish();
}

fn designer(c: &mut Criterion) {
    let mut g = c.benchmark_group("designer");
    for servers in [4, 8, 12] {
        let fx = round_fixture(servers, 2);
        let upsilon = ConsensusMatrix::zeros(servers);
        let problem = DesignProblem {
            clusters: &fx.clusters,
            past_edge_times: &fx.past_edge_times,
            backhaul: &fx.backhaul,
            upsilon: &upsilon,
            upsilon_max: 0.0,
            hyper: &fx.scenario.hyper,
            policy: AllocationPolicy::Optimized,
        };
        g.bench_with_input(BenchmarkId::new("greedy_complete", servers), &problem, |b, p| {
            b.iter(|| solve_p22(p).unwrap())
        });
    }
    g.finish();
}

fn trainer(c: &mut Criterion) {
    let fx = round_fixture(4, 3);
    let sc = &fx.scenario;
    let init = sc.model.init(&mut stream_rng(3, Stream::Init, &[]));
    let cfg = SgdConfig { steps: 10, batch_size: 32, eta: 0.05, momentum: 0.9 };
    c.bench_function("local_sgd_10_steps", |b| {
        b.iter(|| {
            let mut rng = stream_rng(3, Stream::Training, &[0, 0, 0]);
            hfel::trainer::local_sgd(&sc.model, &init, &sc.shards[0], &cfg, &mut rng).unwrap()
        })
    });
}

fn end_to_end(c: &mut Criterion) {
    let mut config = ScenarioConfig::canonical().with_method(Method::FedRt);
    config.hyper.rounds = 5;
    let mut g = c.benchmark_group("run");
    g.sample_size(10);
    g.bench_function("fedrt_5_global_rounds", |b| b.iter(|| run(&config).unwrap()));
    g.finish();
}

criterion_group!(benches, allocator, designer, trainer, end_to_end);
criterion_main!(benches);
