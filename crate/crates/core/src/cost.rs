//! Time and energy formulas for devices and edge servers.
//!
//! Every other module evaluates latency and energy through these functions.
//! Units are SI throughout: hertz for bandwidth and CPU frequency, bits for
//! model size, seconds, joules and watts. SNR is a linear ratio.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static parameters of one edge device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// CPU cycles per training sample.
    pub mu: f64,
    /// Effective capacitance coefficient of the chipset.
    pub alpha: f64,
    /// Transmit power in watts.
    pub power: f64,
    pub f_min: f64,
    pub f_max: f64,
    /// Total energy the device may spend over the whole run, in joules.
    pub energy_budget: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu", self.mu),
            ("alpha", self.alpha),
            ("power", self.power),
            ("f_min", self.f_min),
            ("energy_budget", self.energy_budget),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::domain(format!("device {name} must be positive, got {v}")));
            }
        }
        if !(self.f_max.is_finite() && self.f_max >= self.f_min) {
            return Err(Error::domain(format!(
                "frequency bounds must satisfy 0 < f_min <= f_max, got [{}, {}]",
                self.f_min, self.f_max
            )));
        }
        Ok(())
    }

    /// CPU cycles for one edge round of `hyper.local_iters` iterations.
    pub fn round_cycles(&self, hyper: &Hyperparams) -> f64 {
        f64::from(hyper.local_iters) * f64::from(hyper.batch_size) * self.mu
    }
}

/// Training schedule shared by all devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Global rounds `T`.
    pub rounds: usize,
    /// Edge rounds per global round `R`.
    pub edge_rounds: usize,
    /// Local SGD iterations per edge round `S`.
    pub local_iters: u32,
    /// Mini-batch size `I`.
    pub batch_size: u32,
    /// Gossip repetitions between servers per global round.
    pub psi: u32,
    /// Model size in bits.
    pub model_bits: f64,
    pub eta: f64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.edge_rounds == 0 || self.local_iters == 0 || self.batch_size == 0 || self.psi == 0 {
            return Err(Error::domain("round, iteration, batch and gossip counts must be >= 1"));
        }
        if !(self.model_bits > 0.0 && self.model_bits.is_finite()) {
            return Err(Error::domain("model_bits must be positive"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::domain("eta must be positive"));
        }
        Ok(())
    }

    /// Same schedule with a different local iteration count.
    pub fn with_local_iters(mut self, local_iters: u32) -> Self {
        self.local_iters = local_iters;
        self
    }
}

/// Per-round wireless state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    /// Linear SNR for every device, indexed by global device id.
    pub snr: Vec<f64>,
    /// Uplink bandwidth budget of each cluster, in hertz.
    pub server_bandwidth: Vec<f64>,
}

impl ChannelState {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.snr.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::domain(format!("snr must be positive, got {s}")));
        }
        if let Some(b) = self.server_bandwidth.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(Error::domain(format!("server bandwidth must be positive, got {b}")));
        }
        Ok(())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Shannon uplink rate in bits per second.
pub fn comm_rate(bandwidth: f64, snr: f64) -> Result<f64> {
    if !(bandwidth > 0.0) || !(snr > 0.0) {
        return Err(Error::domain(format!("comm_rate needs positive bandwidth and snr, got ({bandwidth}, {snr})")));
    }
    Ok(bandwidth * (1.0 + snr).log2())
}

/// Upload time of one model. Download is not modeled.
pub fn device_comm_time(model_bits: f64, bandwidth: f64, snr: f64) -> Result<f64> {
    Ok(model_bits / comm_rate(bandwidth, snr)?)
}

pub fn device_comp_time(local_iters: u32, batch_size: u32, mu: f64, f: f64) -> Result<f64> {
    if !(f > 0.0) {
        return Err(Error::domain(format!("cpu frequency must be positive, got {f}")));
    }
    Ok(f64::from(local_iters) * f64::from(batch_size) * mu / f)
}

/// DVFS computation energy `(alpha / 2) * S * I * mu * f^2`.
pub fn comp_energy(alpha: f64, local_iters: u32, batch_size: u32, mu: f64, f: f64) -> Result<f64> {
    if !(alpha > 0.0 && mu > 0.0 && f > 0.0) || local_iters == 0 || batch_size == 0 {
        return Err(Error::domain("comp_energy needs positive inputs"));
    }
    Ok(alpha / 2.0 * f64::from(local_iters) * f64::from(batch_size) * mu * f * f)
}

pub fn comm_energy(power: f64, comm_time: f64) -> Result<f64> {
    if !(power > 0.0) || comm_time < 0.0 || comm_time.is_nan() {
        return Err(Error::domain(format!(
            "comm_energy needs positive power and non-negative time, got ({power}, {comm_time})"
        )));
    }
    Ok(power * comm_time)
}

/// Computation time plus upload time for one edge round.
pub fn device_round_time(
    profile: &DeviceProfile,
    hyper: &Hyperparams,
    bandwidth: f64,
    f: f64,
    snr: f64,
) -> Result<f64> {
    let comp = device_comp_time(hyper.local_iters, hyper.batch_size, profile.mu, f)?;
    let comm = device_comm_time(hyper.model_bits, bandwidth, snr)?;
    Ok(comp + comm)
}

/// Upload energy plus computation energy for one edge round.
pub fn device_round_energy(
    profile: &DeviceProfile,
    hyper: &Hyperparams,
    bandwidth: f64,
    f: f64,
    snr: f64,
) -> Result<f64> {
    let comm_time = device_comm_time(hyper.model_bits, bandwidth, snr)?;
    let comm = comm_energy(profile.power, comm_time)?;
    let comp = comp_energy(profile.alpha, hyper.local_iters, hyper.batch_size, profile.mu, f)?;
    Ok(comm + comp)
}

/// A cluster finishes an edge round when its slowest device does.
pub fn cluster_round_time(device_times: &[f64]) -> Result<f64> {
    if device_times.is_empty() {
        return Err(Error::domain("cluster has no devices"));
    }
    Ok(device_times.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Time for `psi` model exchanges over the slowest neighbor link.
pub fn server_sync_time(psi: u32, model_bits: f64, neighbor_bandwidths: &[f64]) -> Result<f64> {
    if neighbor_bandwidths.is_empty() {
        return Err(Error::domain("server has no neighbors to synchronize with"));
    }
    let slowest = neighbor_bandwidths.iter().copied().fold(f64::INFINITY, f64::min);
    if !(slowest > 0.0) {
        return Err(Error::domain(format!("backhaul bandwidth must be positive, got {slowest}")));
    }
    Ok(f64::from(psi) * model_bits / slowest)
}

/// Per-cluster total of one global round: edge-round times summed in order,
/// then the sync time added.
pub fn cluster_total_time(edge_times: &[f64], sync_time: f64) -> f64 {
    edge_times.iter().fold(0.0, |acc, t| acc + t) + sync_time
}

/// Global round time: the slowest cluster's edge rounds plus its sync.
pub fn global_round_time(per_cluster_edge_times: &[Vec<f64>], per_cluster_sync: &[f64]) -> Result<f64> {
    if per_cluster_edge_times.is_empty() || per_cluster_edge_times.len() != per_cluster_sync.len() {
        return Err(Error::domain("need one sync time per cluster and at least one cluster"));
    }
    Ok(per_cluster_edge_times
        .iter()
        .zip(per_cluster_sync)
        .map(|(edge, sync)| cluster_total_time(edge, *sync))
        .fold(f64::NEG_INFINITY, f64::max))
}
