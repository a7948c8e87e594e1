//! Declarative scenario description, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alloc::AllocationPolicy;
use crate::error::{Error, Result};
use crate::trainer::PartitionScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fedrt")]
    FedRt,
    #[serde(rename = "static-r")]
    StaticR,
    #[serde(rename = "static-t")]
    StaticT,
    #[serde(rename = "ce-fedavg")]
    CeFedAvg,
    #[serde(rename = "mll-sgd")]
    MllSgd,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::FedRt, Method::StaticR, Method::StaticT, Method::CeFedAvg, Method::MllSgd];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::FedRt => "fedrt",
            Method::StaticR => "static-r",
            Method::StaticT => "static-t",
            Method::CeFedAvg => "ce-fedavg",
            Method::MllSgd => "mll-sgd",
        }
    }

    pub fn allocation_policy(self) -> AllocationPolicy {
        match self {
            Method::FedRt | Method::StaticT => AllocationPolicy::Optimized,
            Method::StaticR | Method::CeFedAvg | Method::MllSgd => AllocationPolicy::UniformBandwidth,
        }
    }

    /// Whether the backhaul topology is pruned each global round.
    pub fn designs_topology(self) -> bool {
        matches!(self, Method::FedRt | Method::StaticR)
    }

    /// Whether faster devices run more local iterations.
    pub fn scales_local_iters(self) -> bool {
        self == Method::MllSgd
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Closed interval `[min, max]` sampled uniformly.
pub type Range = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub rounds: usize,
    pub edge_rounds: usize,
    pub local_iters: u32,
    pub batch_size: u32,
    pub psi: u32,
    pub eta: f64,
    pub momentum: f64,
    /// Defaults to 32 bits per model parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_bits: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    /// CPU cycles per sample.
    pub mu: Range,
    /// Capacitance coefficient is `alpha_scale * U(alpha_factor)`.
    pub alpha_scale: f64,
    pub alpha_factor: Range,
    pub f_min: f64,
    pub f_max: f64,
    pub power: f64,
    pub energy_budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub snr_db: Range,
    /// Uplink budget of every edge server, in hertz.
    pub cluster_bandwidth: f64,
    /// Backhaul link rate in bits/s, redrawn each global round.
    pub backhaul: Range,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum GraphSpec {
    Complete,
    Ring,
    /// Resampled until connected.
    ErdosRenyi {
        p: f64,
    },
    Edges {
        edges: Vec<[usize; 2]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        num_classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        separation: f64,
    },
    /// Delimited numeric files: one sample per line, one label per line.
    Files {
        train_features: PathBuf,
        train_labels: PathBuf,
        test_features: PathBuf,
        test_labels: PathBuf,
        #[serde(default = "default_delimiter")]
        delimiter: char,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_classes: Option<usize>,
    },
}

fn default_delimiter() -> char {
    ','
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Hidden layer width; none means plain softmax regression.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
}

/// Consensus threshold per global round. Relative schedules scale the mean
/// pairwise consensus distance seen at the first topology decision where it
/// is positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum UpsilonSchedule {
    Relative {
        gamma: f64,
    },
    Constant {
        value: f64,
    },
    /// Factor moves linearly from `start` at the first round to `end` at the last.
    LinearDecay {
        start: f64,
        end: f64,
    },
}

impl UpsilonSchedule {
    pub fn threshold(&self, t: usize, rounds: usize, reference: Option<f64>) -> f64 {
        let reference = reference.unwrap_or(0.0);
        match *self {
            UpsilonSchedule::Relative { gamma } => gamma * reference,
            UpsilonSchedule::Constant { value } => value,
            UpsilonSchedule::LinearDecay { start, end } => {
                let frac = if rounds > 1 { t as f64 / (rounds - 1) as f64 } else { 0.0 };
                (start + (end - start) * frac) * reference
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub method: Method,
    pub seed: u64,
    pub clusters: usize,
    pub devices_per_cluster: usize,
    pub hyper: HyperConfig,
    pub devices: DeviceConfig,
    pub channel: ChannelConfig,
    pub graph: GraphSpec,
    pub data: DataConfig,
    pub partition: PartitionScheme,
    pub upsilon_max: UpsilonSchedule,
}

impl ScenarioConfig {
    /// Four clusters of three heterogeneous devices, fifty global rounds.
    pub fn canonical() -> Self {
        Self {
            method: Method::FedRt,
            seed: 0,
            clusters: 4,
            devices_per_cluster: 3,
            hyper: HyperConfig {
                rounds: 50,
                edge_rounds: 2,
                local_iters: 10,
                batch_size: 32,
                psi: 10,
                eta: 0.05,
                momentum: 0.9,
                model_bits: None,
            },
            devices: DeviceConfig {
                mu: [1e5, 5e5],
                alpha_scale: 2e-28,
                alpha_factor: [0.01, 0.1],
                f_min: 2e9,
                f_max: 3e9,
                power: 0.01,
                energy_budget: 1.0,
            },
            channel: ChannelConfig { snr_db: [0.0, 15.0], cluster_bandwidth: 1e6, backhaul: [1e5, 1e7] },
            graph: GraphSpec::Complete,
            data: DataConfig {
                source: DataSource::Synthetic {
                    num_classes: 10,
                    dim: 32,
                    train_per_class: 300,
                    test_per_class: 100,
                    separation: 1.5,
                },
                hidden: None,
            },
            partition: PartitionScheme::Dirichlet { beta: 1.0 },
            upsilon_max: UpsilonSchedule::Relative { gamma: 1.0 },
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn num_devices(&self) -> usize {
        self.clusters * self.devices_per_cluster
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let positive_range = |name: &str, r: Range| -> Result<()> {
            if r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be a positive range [min, max], got {r:?}")))
            }
        };
        if self.clusters == 0 || self.devices_per_cluster == 0 {
            return bad("need at least one cluster and one device per cluster".into());
        }
        let h = &self.hyper;
        if h.rounds == 0 || h.edge_rounds == 0 || h.local_iters == 0 || h.batch_size == 0 || h.psi == 0 {
            return bad("rounds, edge_rounds, local_iters, batch_size and psi must be positive".into());
        }
        if !(h.eta >= 0.0 && h.eta.is_finite()) || !(0.0..1.0).contains(&h.momentum) {
            return bad(format!("need eta >= 0 and 0 <= momentum < 1, got {} and {}", h.eta, h.momentum));
        }
        if let Some(bits) = h.model_bits {
            if !(bits > 0.0 && bits.is_finite()) {
                return bad(format!("model_bits must be positive, got {bits}"));
            }
        }
        let d = &self.devices;
        positive_range("devices.mu", d.mu)?;
        positive_range("devices.alpha_factor", d.alpha_factor)?;
        for (name, v) in
            [("alpha_scale", d.alpha_scale), ("f_min", d.f_min), ("power", d.power), ("energy_budget", d.energy_budget)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("devices.{name} must be positive, got {v}"));
            }
        }
        if !(d.f_max >= d.f_min && d.f_max.is_finite()) {
            return bad(format!("devices.f_max {} below f_min {}", d.f_max, d.f_min));
        }
        let c = &self.channel;
        if !(c.snr_db[0] <= c.snr_db[1] && c.snr_db.iter().all(|x| x.is_finite())) {
            return bad(format!("channel.snr_db must be a range, got {:?}", c.snr_db));
        }
        positive_range("channel.backhaul", c.backhaul)?;
        if !(c.cluster_bandwidth > 0.0 && c.cluster_bandwidth.is_finite()) {
            return bad(format!("channel.cluster_bandwidth must be positive, got {}", c.cluster_bandwidth));
        }
        match &self.graph {
            GraphSpec::ErdosRenyi { p } if !(*p > 0.0 && *p <= 1.0) => {
                return bad(format!("graph.p must be in (0, 1], got {p}"));
            }
            GraphSpec::Edges { edges } if edges.iter().any(|[i, j]| i == j || *i.max(j) >= self.clusters) => {
                return bad("graph.edges must join distinct existing servers".into());
            }
            _ => {}
        }
        if let DataSource::Synthetic { num_classes, dim, train_per_class, test_per_class, separation } =
            self.data.source
        {
            if num_classes < 2 || dim < num_classes || train_per_class == 0 || test_per_class == 0 {
                return bad("synthetic data needs >= 2 classes, dim >= classes and samples in both splits".into());
            }
            if !(separation >= 0.0 && separation.is_finite()) {
                return bad(format!("data.separation must be non-negative, got {separation}"));
            }
        }
        if self.data.hidden == Some(0) {
            return bad("data.hidden must be positive when set".into());
        }
        match self.partition {
            PartitionScheme::Dirichlet { beta } if !(beta > 0.0 && beta.is_finite()) => {
                return bad(format!("partition.beta must be positive, got {beta}"));
            }
            PartitionScheme::ClusterPathological { labels_per_cluster: 0 } => {
                return bad("partition.labels_per_cluster must be positive".into());
            }
            _ => {}
        }
        let ok = match self.upsilon_max {
            UpsilonSchedule::Relative { gamma } => gamma >= 0.0 && gamma.is_finite(),
            UpsilonSchedule::Constant { value } => value >= 0.0 && value.is_finite(),
            UpsilonSchedule::LinearDecay { start, end } => {
                start >= 0.0 && end >= 0.0 && start.is_finite() && end.is_finite()
            }
        };
        if !ok {
            return bad(format!("upsilon_max parameters must be non-negative: {:?}", self.upsilon_max));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trips_through_toml() {
        let c = ScenarioConfig::canonical();
        c.validate().unwrap();
        let text = c.to_toml_string().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = ScenarioConfig::canonical().to_toml_string().unwrap();
        text = text.replacen("seed = 0", "seed = 0\nsurprise = 1", 1);
        assert!(matches!(ScenarioConfig::from_toml_str(&text), Err(Error::Config(_))));
        let nested =
            ScenarioConfig::canonical().to_toml_string().unwrap().replacen("psi = 10", "psi = 10\nzeta = 0.5", 1);
        assert!(ScenarioConfig::from_toml_str(&nested).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut c = ScenarioConfig::canonical();
        c.devices.mu = [5e5, 1e5];
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::canonical();
        c.graph = GraphSpec::Edges { edges: vec![[0, 9]] };
        assert!(c.validate().is_err());
        assert!("fedrt".parse::<Method>().is_ok());
        assert!("FedAvg".parse::<Method>().is_err());
    }

    #[test]
    fn schedules() {
        let r = UpsilonSchedule::Relative { gamma: 2.0 };
        assert_eq!(r.threshold(3, 10, Some(0.5)), 1.0);
        assert_eq!(r.threshold(3, 10, None), 0.0);
        let d = UpsilonSchedule::LinearDecay { start: 1.0, end: 0.0 };
        assert_eq!(d.threshold(0, 5, Some(2.0)), 2.0);
        assert_eq!(d.threshold(4, 5, Some(2.0)), 0.0);
        assert_eq!(UpsilonSchedule::Constant { value: 0.3 }.threshold(7, 10, None), 0.3);
    }
}
