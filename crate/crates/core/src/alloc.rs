//! Per-edge-round bandwidth and CPU frequency allocation.
//!
//! Within one cluster the round time is the slowest device's compute plus
//! upload time. For a target time `tau` every device has a smallest
//! bandwidth that lets it finish by `tau` without exceeding its energy cap;
//! `tau` is feasible when those bandwidths fit in the cluster budget.
//! Feasibility is monotone in `tau`, so the optimum is found by bisection.

use serde::{Deserialize, Serialize};

use crate::cost::{self, DeviceProfile, Hyperparams};
use crate::error::{Error, Result};

/// Relative tolerance of the inner frequency bisection.
pub const FREQ_REL_TOL: f64 = 1e-10;
/// Relative tolerance of the outer deadline bisection.
pub const TAU_REL_TOL: f64 = 1e-12;
/// Returned plans stay this far inside the energy cap so rounding cannot
/// push a device over its budget.
const SAFETY: f64 = 1.0 - 1e-12;

/// Bandwidth (Hz) and CPU frequency (Hz) per device for one edge round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub bandwidth: Vec<f64>,
    pub frequency: Vec<f64>,
}

/// One device's inputs to an allocation problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceRound {
    pub profile: DeviceProfile,
    /// Carries the device's own local iteration count.
    pub hyper: Hyperparams,
    pub snr: f64,
    pub energy_cap: f64,
}

impl DeviceRound {
    fn cycles(&self) -> f64 {
        self.profile.round_cycles(&self.hyper)
    }

    /// `(alpha / 2) * S * I * mu`, so that computation energy is `k * f^2`.
    fn energy_coeff(&self) -> f64 {
        self.profile.alpha / 2.0 * self.cycles()
    }

    fn spectral_efficiency(&self) -> f64 {
        (1.0 + self.snr).log2()
    }

    pub fn time(&self, bandwidth: f64, frequency: f64) -> Result<f64> {
        cost::device_round_time(&self.profile, &self.hyper, bandwidth, frequency, self.snr)
    }

    pub fn energy(&self, bandwidth: f64, frequency: f64) -> Result<f64> {
        cost::device_round_energy(&self.profile, &self.hyper, bandwidth, frequency, self.snr)
    }

    /// Longest upload time allowed by the deadline at frequency `f`.
    fn deadline_slack(&self, tau: f64, f: f64) -> f64 {
        tau - self.cycles() / f
    }

    /// Longest upload time allowed by the energy cap at frequency `f`.
    fn energy_slack(&self, f: f64) -> f64 {
        (self.energy_cap - self.energy_coeff() * f * f) / self.profile.power
    }
}

/// All devices of one cluster plus its uplink budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRound {
    pub devices: Vec<DeviceRound>,
    pub bandwidth_budget: f64,
}

impl ClusterRound {
    pub fn device_times(&self, alloc: &Allocation) -> Result<Vec<f64>> {
        self.devices
            .iter()
            .zip(alloc.bandwidth.iter().zip(&alloc.frequency))
            .map(|(d, (b, f))| d.time(*b, *f))
            .collect()
    }

    pub fn device_energies(&self, alloc: &Allocation) -> Result<Vec<f64>> {
        self.devices
            .iter()
            .zip(alloc.bandwidth.iter().zip(&alloc.frequency))
            .map(|(d, (b, f))| d.energy(*b, *f))
            .collect()
    }

    pub fn round_time(&self, alloc: &Allocation) -> Result<f64> {
        cost::cluster_round_time(&self.device_times(alloc)?)
    }

    /// Checks an allocation against the budget, frequency bounds and energy
    /// caps by recomputing everything through the cost model.
    pub fn check(&self, alloc: &Allocation) -> Result<()> {
        let n = self.devices.len();
        if alloc.bandwidth.len() != n || alloc.frequency.len() != n {
            return Err(Error::Invariant("allocation size does not match cluster".into()));
        }
        let total: f64 = alloc.bandwidth.iter().sum();
        if total > self.bandwidth_budget * (1.0 + 1e-9) {
            return Err(Error::Invariant(format!("bandwidth {total} exceeds budget {}", self.bandwidth_budget)));
        }
        let energies = self.device_energies(alloc)?;
        for (i, d) in self.devices.iter().enumerate() {
            if !(alloc.bandwidth[i] > 0.0) {
                return Err(Error::Invariant(format!("device {i} has no bandwidth")));
            }
            let f = alloc.frequency[i];
            if f < d.profile.f_min || f > d.profile.f_max {
                return Err(Error::Invariant(format!("device {i} frequency {f} out of bounds")));
            }
            if energies[i] > d.energy_cap {
                return Err(Error::Invariant(format!(
                    "device {i} energy {} exceeds cap {}",
                    energies[i], d.energy_cap
                )));
            }
        }
        Ok(())
    }
}

/// Cumulative energy per device against its budget.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    spent: Vec<f64>,
    budget: Vec<f64>,
}

impl EnergyLedger {
    pub fn new(budget: Vec<f64>) -> Self {
        Self { spent: vec![0.0; budget.len()], budget }
    }

    pub fn from_profiles(profiles: &[DeviceProfile]) -> Self {
        Self::new(profiles.iter().map(|p| p.energy_budget).collect())
    }

    pub fn spent(&self) -> &[f64] {
        &self.spent
    }

    pub fn budget(&self) -> &[f64] {
        &self.budget
    }

    pub fn len(&self) -> usize {
        self.spent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spent.is_empty()
    }

    /// Ledger restricted to a contiguous device range.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self { spent: self.spent[range.clone()].to_vec(), budget: self.budget[range].to_vec() }
    }

    /// Adds one round of realized energy. Fails without modifying the
    /// ledger if any device would exceed its budget.
    pub fn record(&mut self, energy: &[f64]) -> Result<()> {
        if energy.len() != self.spent.len() {
            return Err(Error::Invariant("energy vector size mismatch".into()));
        }
        for (n, e) in energy.iter().enumerate() {
            if !(*e >= 0.0) {
                return Err(Error::Invariant(format!("device {n} negative energy {e}")));
            }
            if self.spent[n] + e > self.budget[n] {
                return Err(Error::Invariant(format!(
                    "device {n} would spend {} of budget {}",
                    self.spent[n] + e,
                    self.budget[n]
                )));
            }
        }
        for (s, e) in self.spent.iter_mut().zip(energy) {
            *s += e;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundPhase {
    /// Edge rounds before the last one of a global round.
    Mid,
    /// The last edge round, where the topology is also decided.
    Last,
}

/// Per-device energy allowed in round `(t, r)`: the remaining budget divided
/// by the number of rounds the current round's energy is committed for.
pub fn energy_cap(
    ledger: &EnergyLedger,
    t: usize,
    r: usize,
    rounds: usize,
    edge_rounds: usize,
    phase: RoundPhase,
) -> Result<Vec<f64>> {
    if t >= rounds || r >= edge_rounds {
        return Err(Error::domain(format!("round ({t}, {r}) outside schedule ({rounds}, {edge_rounds})")));
    }
    let m = match phase {
        RoundPhase::Mid => (rounds - t) * edge_rounds + edge_rounds - r,
        RoundPhase::Last => (rounds - t) * edge_rounds + 1,
    } as f64;
    ledger
        .spent
        .iter()
        .zip(&ledger.budget)
        .enumerate()
        .map(|(n, (s, b))| {
            if s > b {
                Err(Error::Infeasible { device: n, reason: format!("already spent {s} J of a {b} J budget") })
            } else {
                Ok((b - s) / m)
            }
        })
        .collect()
}

/// Bandwidth that lets a device at frequency `f` finish compute and upload
/// within `tau`.
pub fn min_bandwidth_for_deadline(
    profile: &DeviceProfile,
    hyper: &Hyperparams,
    snr: f64,
    tau: f64,
    f: f64,
) -> Result<f64> {
    let comp = cost::device_comp_time(hyper.local_iters, hyper.batch_size, profile.mu, f)?;
    if !(tau > comp) {
        return Err(Error::Infeasible {
            device: 0,
            reason: format!("deadline {tau} s does not exceed compute time {comp} s"),
        });
    }
    Ok(hyper.model_bits / ((tau - comp) * (1.0 + snr).log2()))
}

/// Frequency and minimal bandwidth for one device to meet a deadline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevicePlan {
    pub frequency: f64,
    pub bandwidth: f64,
}

/// Smallest-bandwidth plan for a device to finish within `tau` using at most
/// `energy_cap` joules, or `None` if no frequency works.
///
/// The allowed upload time at frequency `f` is bounded by the deadline slack
/// `tau - SI mu / f` (increasing in `f`) and the energy slack
/// `(cap - alpha/2 SI mu f^2) / p` (decreasing in `f`). Bandwidth demand is
/// minimized where their minimum peaks: the largest `f` at which the energy
/// slack still covers the deadline slack, found by bisection. When even
/// `f_min` cannot cover the full deadline slack, the device runs at `f_min`
/// and uploads faster than the deadline requires.
pub fn best_frequency_for_deadline(
    profile: &DeviceProfile,
    hyper: &Hyperparams,
    snr: f64,
    tau: f64,
    energy_cap: f64,
) -> Option<DevicePlan> {
    let dev = DeviceRound { profile: *profile, hyper: *hyper, snr, energy_cap };
    plan_for_deadline(&dev, tau)
}

fn plan_for_deadline(dev: &DeviceRound, tau: f64) -> Option<DevicePlan> {
    if !(tau > 0.0) || !(dev.energy_cap >= 0.0) {
        return None;
    }
    let (f_min, f_max) = (dev.profile.f_min, dev.profile.f_max);
    let covered = |f: f64| dev.deadline_slack(tau, f) <= dev.energy_slack(f);
    let frequency = if covered(f_max) {
        f_max
    } else if !covered(f_min) {
        f_min
    } else {
        let (mut lo, mut hi) = (f_min, f_max);
        while hi - lo > FREQ_REL_TOL * hi {
            let mid = 0.5 * (lo + hi);
            if covered(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let upload = dev.deadline_slack(tau, frequency).min(dev.energy_slack(frequency)) * SAFETY;
    if !(upload > 0.0) {
        return None;
    }
    Some(DevicePlan { frequency, bandwidth: dev.hyper.model_bits / (upload * dev.spectral_efficiency()) })
}

fn plans_at(cluster: &ClusterRound, tau: f64) -> Option<Vec<DevicePlan>> {
    cluster.devices.iter().map(|d| plan_for_deadline(d, tau)).collect()
}

fn demand(plans: &Option<Vec<DevicePlan>>) -> f64 {
    plans.as_ref().map(|p| p.iter().map(|d| d.bandwidth).sum()).unwrap_or(f64::INFINITY)
}

fn check_cluster(cluster: &ClusterRound) -> Result<()> {
    if cluster.devices.is_empty() {
        return Err(Error::domain("cluster has no devices"));
    }
    if !(cluster.bandwidth_budget > 0.0 && cluster.bandwidth_budget.is_finite()) {
        return Err(Error::domain("cluster bandwidth budget must be positive"));
    }
    for d in &cluster.devices {
        d.profile.validate()?;
        if !(d.snr > 0.0) {
            return Err(Error::domain(format!("snr must be positive, got {}", d.snr)));
        }
    }
    Ok(())
}

/// Fails with the binding device when no deadline, however long, is feasible.
///
/// As `tau` grows the deadline stops binding and each device's upload time is
/// limited only by its energy slack at `f_min`.
fn check_asymptotic_feasibility(cluster: &ClusterRound) -> Result<()> {
    let mut demands = Vec::with_capacity(cluster.devices.len());
    for (i, d) in cluster.devices.iter().enumerate() {
        let slack = d.energy_slack(d.profile.f_min);
        if !(slack > 0.0) {
            return Err(Error::Infeasible {
                device: i,
                reason: format!(
                    "energy cap {:.6e} J does not cover computation at f_min ({:.6e} J)",
                    d.energy_cap,
                    d.energy_coeff() * d.profile.f_min * d.profile.f_min
                ),
            });
        }
        demands.push(d.hyper.model_bits / (slack * d.spectral_efficiency()));
    }
    let total: f64 = demands.iter().sum();
    if total >= cluster.bandwidth_budget {
        let (device, _) = demands.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty");
        return Err(Error::Infeasible {
            device,
            reason: format!(
                "energy caps need at least {total:.6e} Hz of uplink, budget is {:.6e} Hz",
                cluster.bandwidth_budget
            ),
        });
    }
    Ok(())
}

/// Result of the deadline bisection, before bandwidth redistribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MinTimeSolution {
    pub allocation: Allocation,
    /// Smallest feasible deadline found.
    pub tau: f64,
}

/// Minimizes the cluster round time. Residual bandwidth is handed out in
/// proportion to each device's share, which only shortens uploads.
pub fn allocate_min_time(cluster: &ClusterRound) -> Result<MinTimeSolution> {
    check_cluster(cluster)?;
    check_asymptotic_feasibility(cluster)?;
    let budget = cluster.bandwidth_budget;

    let mut lo = cluster.devices.iter().map(|d| d.cycles() / d.profile.f_max).fold(0.0, f64::max);
    let mut hi = 2.0 * lo;
    let mut hi_plans = plans_at(cluster, hi);
    while demand(&hi_plans) > budget {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Infeasible { device: 0, reason: "no finite deadline is feasible".into() });
        }
        hi_plans = plans_at(cluster, hi);
    }
    while hi - lo > TAU_REL_TOL * hi {
        let mid = 0.5 * (lo + hi);
        let plans = plans_at(cluster, mid);
        if demand(&plans) <= budget {
            hi = mid;
            hi_plans = plans;
        } else {
            lo = mid;
        }
    }
    let plans = hi_plans.expect("upper bracket is feasible");
    let used: f64 = plans.iter().map(|p| p.bandwidth).sum();
    let scale = budget / used;
    let allocation = Allocation {
        bandwidth: plans.iter().map(|p| p.bandwidth * scale).collect(),
        frequency: plans.iter().map(|p| p.frequency).collect(),
    };
    Ok(MinTimeSolution { allocation, tau: hi })
}

/// Splits the budget evenly and runs every device as fast as its energy cap
/// allows at that bandwidth.
pub fn uniform_bandwidth_allocation(cluster: &ClusterRound) -> Result<Allocation> {
    check_cluster(cluster)?;
    let share = cluster.bandwidth_budget / cluster.devices.len() as f64;
    let mut frequency = Vec::with_capacity(cluster.devices.len());
    for (i, d) in cluster.devices.iter().enumerate() {
        frequency.push(frequency_for_bandwidth(d, share).ok_or_else(|| Error::Infeasible {
            device: i,
            reason: format!(
                "energy cap {:.6e} J cannot cover a round at f_min with an even bandwidth share",
                d.energy_cap
            ),
        })?);
    }
    Ok(Allocation { bandwidth: vec![share; cluster.devices.len()], frequency })
}

/// Fastest frequency whose round energy at bandwidth `b` fits the cap.
fn frequency_for_bandwidth(dev: &DeviceRound, bandwidth: f64) -> Option<f64> {
    let upload = cost::device_comm_time(dev.hyper.model_bits, bandwidth, dev.snr).ok()?;
    let left = dev.energy_cap - dev.profile.power * upload;
    if !(left > 0.0) {
        return None;
    }
    let f = ((left / dev.energy_coeff()).sqrt() * SAFETY).min(dev.profile.f_max);
    (f >= dev.profile.f_min).then_some(f)
}

/// How device bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllocationPolicy {
    /// Joint bandwidth and frequency optimization.
    Optimized,
    /// Even bandwidth split, frequency limited by the energy cap.
    UniformBandwidth,
}

impl AllocationPolicy {
    pub fn allocate(self, cluster: &ClusterRound) -> Result<Allocation> {
        match self {
            AllocationPolicy::Optimized => allocate_min_time(cluster).map(|s| s.allocation),
            AllocationPolicy::UniformBandwidth => uniform_bandwidth_allocation(cluster),
        }
    }
}

/// Allocation for a mid-global-round edge round with energy caps taken from
/// the ledger. `ledger` covers exactly the devices in `profiles`.
pub fn solve_p21(
    profiles: &[DeviceProfile],
    hyper: &Hyperparams,
    snr: &[f64],
    bandwidth_budget: f64,
    ledger: &EnergyLedger,
    t: usize,
    r: usize,
) -> Result<Allocation> {
    if profiles.len() != snr.len() || profiles.len() != ledger.len() {
        return Err(Error::domain("profiles, snr and ledger sizes differ"));
    }
    let caps = energy_cap(ledger, t, r, hyper.rounds, hyper.edge_rounds, RoundPhase::Mid)?;
    let cluster = ClusterRound {
        devices: profiles
            .iter()
            .zip(snr)
            .zip(caps)
            .map(|((p, s), cap)| DeviceRound { profile: *p, hyper: *hyper, snr: *s, energy_cap: cap })
            .collect(),
        bandwidth_budget,
    };
    Ok(allocate_min_time(&cluster)?.allocation)
}

/// Exhaustive grid search used as an independent optimality check.
pub mod oracle {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    pub struct OracleSolution {
        pub allocation: Allocation,
        pub round_time: f64,
        /// Largest change in any device's time from one grid step on either
        /// axis at the optimum.
        pub resolution: f64,
    }

    fn compositions(total: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut dyn FnMut(&[usize])) {
        if parts == 1 {
            prefix.push(total);
            out(prefix);
            prefix.pop();
            return;
        }
        for k in 1..=total - (parts - 1) {
            prefix.push(k);
            compositions(total - k, parts - 1, prefix, out);
            prefix.pop();
        }
    }

    /// Searches bandwidth shares `k / grid` of the budget (all shares
    /// positive, summing to the budget) and `grid` evenly spaced frequencies
    /// per device. Given the bandwidths, each device independently takes the
    /// fastest grid frequency within its energy cap.
    pub fn brute_force_allocation_oracle(cluster: &ClusterRound, grid_points: usize) -> Result<OracleSolution> {
        check_cluster(cluster)?;
        let n = cluster.devices.len();
        if grid_points < n.max(2) {
            return Err(Error::domain("grid must have at least one point per device and two per axis"));
        }
        let budget = cluster.bandwidth_budget;
        let freq_grid: Vec<Vec<f64>> = cluster
            .devices
            .iter()
            .map(|d| {
                (0..grid_points)
                    .map(|j| {
                        let (lo, hi) = (d.profile.f_min, d.profile.f_max);
                        if j + 1 == grid_points {
                            hi
                        } else {
                            lo + (hi - lo) * j as f64 / (grid_points - 1) as f64
                        }
                    })
                    .collect()
            })
            .collect();

        let best_freq = |i: usize, b: f64| -> Option<(usize, f64)> {
            let d = &cluster.devices[i];
            (0..grid_points).rev().find_map(|j| {
                let f = freq_grid[i][j];
                let e = d.energy(b, f).ok()?;
                (e <= d.energy_cap).then(|| (j, d.time(b, f).expect("valid inputs")))
            })
        };

        let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
        compositions(grid_points, n, &mut Vec::with_capacity(n), &mut |ks| {
            let mut worst = 0.0f64;
            let mut fidx = Vec::with_capacity(n);
            for (i, k) in ks.iter().enumerate() {
                match best_freq(i, budget * *k as f64 / grid_points as f64) {
                    Some((j, t)) => {
                        worst = worst.max(t);
                        fidx.push(j);
                    }
                    None => return,
                }
            }
            if best.as_ref().is_none_or(|(t, _, _)| worst < *t) {
                best = Some((worst, ks.to_vec(), fidx));
            }
        });

        let Some((round_time, ks, fidx)) = best else {
            let device = (0..n)
                .find(|&i| best_freq(i, budget * (grid_points - n + 1) as f64 / grid_points as f64).is_none())
                .unwrap_or(0);
            return Err(Error::Infeasible { device, reason: "no grid point satisfies the energy caps".into() });
        };
        let bandwidth: Vec<f64> = ks.iter().map(|k| budget * *k as f64 / grid_points as f64).collect();
        let frequency: Vec<f64> = fidx.iter().enumerate().map(|(i, j)| freq_grid[i][*j]).collect();
        let step_b = budget / grid_points as f64;
        let mut resolution = 0.0f64;
        for (i, d) in cluster.devices.iter().enumerate() {
            let t0 = d.time(bandwidth[i], frequency[i])?;
            if bandwidth[i] > step_b {
                resolution = resolution.max(d.time(bandwidth[i] - step_b, frequency[i])? - t0);
            }
            resolution = resolution.max(d.time(bandwidth[i] + step_b, frequency[i]).map(|t| t0 - t)?);
            if fidx[i] > 0 {
                resolution = resolution.max(d.time(bandwidth[i], freq_grid[i][fidx[i] - 1])? - t0);
            }
        }
        Ok(OracleSolution { allocation: Allocation { bandwidth, frequency }, round_time, resolution })
    }
}
