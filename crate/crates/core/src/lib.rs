//! Simulation and control of two-tier hierarchical federated edge learning.
//!
//! Devices train under edge servers; servers synchronize over a peer-to-peer
//! backhaul. The crate models per-round latency and energy, allocates device
//! bandwidth and CPU frequency, prunes slow backhaul links under a consensus
//! constraint, and runs the whole training loop on a small learner.

// `!(x > 0.0)` is the NaN-rejecting form used for every domain check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod cost;
pub mod error;
pub mod graph;
pub mod rng;
pub mod sim;
pub mod topology;
pub mod trainer;

pub use alloc::{Allocation, EnergyLedger, RoundPhase};
pub use cost::{ChannelState, DeviceProfile, Hyperparams};
pub use error::{Error, Result};
pub use graph::{Adjacency, BackhaulGraph, ConvergenceDiagnostics, MixingMatrix};
pub use sim::config::{Method, ScenarioConfig};
pub use sim::trace::RoundTrace;
pub use topology::{ConsensusMatrix, TopologyDecision};
pub use trainer::ModelState;
