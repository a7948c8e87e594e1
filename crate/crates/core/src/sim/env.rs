//! Scenario instantiation and per-round random environment.
//!
//! Every draw comes from a stream keyed by the master seed and its role, so
//! runs of different methods with the same seed see identical devices, data,
//! channels and backhaul rates.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;

use super::config::{DataSource, GraphSpec, ScenarioConfig};
use crate::cost::{db_to_linear, ChannelState, DeviceProfile, Hyperparams};
use crate::error::{Error, Result};
use crate::graph::{erdos_renyi_connected, is_connected, Adjacency};
use crate::rng::{stream_rng, stream_seed, Stream};
use crate::trainer::data::load_delimited;
use crate::trainer::{
    make_synthetic_dataset, partition, Architecture, DataShard, Dataset, Objective, PartitionSpec, SoftmaxModel,
};

/// Everything fixed for the duration of a run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    /// Global device order: cluster 0's devices first.
    pub profiles: Vec<DeviceProfile>,
    pub hyper: Hyperparams,
    /// Per-device schedule; differs from `hyper` only in local iterations.
    pub device_hyper: Vec<Hyperparams>,
    pub base: Adjacency,
    pub model: SoftmaxModel,
    pub train: Dataset,
    pub test: Dataset,
    pub shards: Vec<DataShard>,
}

impl Scenario {
    pub fn num_clusters(&self) -> usize {
        self.config.clusters
    }

    pub fn num_devices(&self) -> usize {
        self.profiles.len()
    }

    /// Global device ids of cluster `c`.
    pub fn cluster_devices(&self, c: usize) -> std::ops::Range<usize> {
        let k = self.config.devices_per_cluster;
        c * k..(c + 1) * k
    }
}

fn uniform<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}

pub fn base_graph(config: &ScenarioConfig) -> Result<Adjacency> {
    let n = config.clusters;
    let a = match &config.graph {
        GraphSpec::Complete => Adjacency::complete(n),
        GraphSpec::Ring => {
            let mut a = Adjacency::empty(n);
            for i in 0..n {
                if n > 1 && i != (i + 1) % n {
                    a.add_edge(i, (i + 1) % n);
                }
            }
            a
        }
        GraphSpec::ErdosRenyi { p } => {
            erdos_renyi_connected(n, *p, &mut stream_rng(config.seed, Stream::Scenario, &[1]))?
        }
        GraphSpec::Edges { edges } => {
            let pairs: Vec<(usize, usize)> = edges.iter().map(|[i, j]| (*i, *j)).collect();
            Adjacency::from_edges(n, &pairs)?
        }
    };
    if !is_connected(&a) {
        return Err(Error::Config("base graph is not connected".into()));
    }
    Ok(a)
}

pub fn draw_profiles(config: &ScenarioConfig) -> Vec<DeviceProfile> {
    let mut rng = stream_rng(config.seed, Stream::Scenario, &[0]);
    let d = &config.devices;
    (0..config.num_devices())
        .map(|_| {
            let mu = uniform(&mut rng, d.mu);
            let alpha = d.alpha_scale * uniform(&mut rng, d.alpha_factor);
            DeviceProfile { mu, alpha, power: d.power, f_min: d.f_min, f_max: d.f_max, energy_budget: d.energy_budget }
        })
        .collect()
}

/// Local iterations per device that equalize computation time at `f_max`
/// with the slowest device, never fewer than one.
pub fn scaled_local_iters(profiles: &[DeviceProfile], local_iters: u32) -> Vec<u32> {
    let cost = |p: &DeviceProfile| p.mu / p.f_max;
    let slowest = profiles.iter().map(cost).fold(0.0, f64::max);
    profiles.iter().map(|p| ((f64::from(local_iters) * slowest / cost(p)).floor() as u32).max(1)).collect()
}

fn load_data(config: &ScenarioConfig) -> Result<(Dataset, Dataset)> {
    match &config.data.source {
        DataSource::Synthetic { num_classes, dim, train_per_class, test_per_class, separation } => Ok((
            make_synthetic_dataset(
                *num_classes,
                *dim,
                *train_per_class,
                *separation,
                stream_seed(config.seed, Stream::Data, &[]),
            )?,
            make_synthetic_dataset(
                *num_classes,
                *dim,
                *test_per_class,
                *separation,
                stream_seed(config.seed, Stream::TestData, &[]),
            )?,
        )),
        DataSource::Files { train_features, train_labels, test_features, test_labels, delimiter, num_classes } => {
            let delim = u8::try_from(*delimiter)
                .map_err(|_| Error::Config(format!("delimiter {delimiter:?} must be a single byte")))?;
            let train = load_delimited(Path::new(train_features), Path::new(train_labels), delim, *num_classes)?;
            let k = num_classes.unwrap_or(train.num_classes);
            let test = load_delimited(Path::new(test_features), Path::new(test_labels), delim, Some(k))?;
            if train.dim != test.dim || train.num_classes != test.num_classes {
                return Err(Error::Data("train and test files disagree on shape".into()));
            }
            Ok((train, test))
        }
    }
}

pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let profiles = draw_profiles(config);
    let base = base_graph(config)?;
    let (train, test) = load_data(config)?;
    let model = SoftmaxModel::new(Architecture {
        input_dim: train.dim,
        num_classes: train.num_classes,
        hidden: config.data.hidden,
    })?;
    let h = &config.hyper;
    let hyper = Hyperparams {
        rounds: h.rounds,
        edge_rounds: h.edge_rounds,
        local_iters: h.local_iters,
        batch_size: h.batch_size,
        psi: h.psi,
        model_bits: h.model_bits.unwrap_or(32.0 * model.dim() as f64),
        eta: h.eta,
    };
    hyper.validate()?;
    let iters = if config.method.scales_local_iters() {
        scaled_local_iters(&profiles, h.local_iters)
    } else {
        vec![h.local_iters; profiles.len()]
    };
    let device_hyper = iters.into_iter().map(|s| hyper.with_local_iters(s)).collect();
    let spec = PartitionSpec { scheme: config.partition, seed: stream_seed(config.seed, Stream::Partition, &[]) };
    let shards = partition(&train, &spec, &vec![config.devices_per_cluster; config.clusters])?;
    Ok(Scenario { config: config.clone(), profiles, hyper, device_hyper, base, model, train, test, shards })
}

/// Device SNRs for edge round `(t, r)` and backhaul rates for global round
/// `t`. Rates are symmetric and exactly zero off the base edges.
pub fn draw_round_environment(
    config: &ScenarioConfig,
    base: &Adjacency,
    t: usize,
    r: usize,
) -> (ChannelState, DMatrix<f64>) {
    let mut ch = stream_rng(config.seed, Stream::Channel, &[t as u64, r as u64]);
    let snr = (0..config.num_devices()).map(|_| db_to_linear(uniform(&mut ch, config.channel.snr_db))).collect();
    let channel = ChannelState { snr, server_bandwidth: vec![config.channel.cluster_bandwidth; config.clusters] };
    let mut bh = stream_rng(config.seed, Stream::Backhaul, &[t as u64]);
    let n = base.len();
    let mut bw = DMatrix::zeros(n, n);
    for (i, j) in base.edges() {
        let b = uniform(&mut bh, config.channel.backhaul);
        bw[(i, j)] = b;
        bw[(j, i)] = b;
    }
    (channel, bw)
}
