//! Local SGD on devices, averaging at edge servers and gossip between
//! servers, on a small classifier over partitioned data.

pub mod data;
pub mod gossip;
pub mod model;
pub mod partition;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use data::{make_synthetic_dataset, DataShard, Dataset};
pub use gossip::{
    consensus_average, consensus_pairwise, edge_aggregate, estimate_consensus_after_mix, inter_server_mix,
};
pub use model::{Architecture, Objective, Quadratic, SoftmaxModel};
pub use partition::{partition, PartitionScheme, PartitionSpec};

/// Flat parameter vector of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub params: Vec<f64>,
}

impl ModelState {
    pub fn new(params: Vec<f64>) -> Self {
        Self { params }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { params: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.params.iter().position(|p| !p.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Invariant(format!("parameter {i} is {}", self.params[i]))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub steps: u32,
    pub batch_size: u32,
    pub eta: f64,
    pub momentum: f64,
}

/// `steps` mini-batch SGD steps with heavy-ball momentum, starting from zero
/// velocity. Batches are drawn with replacement; a batch at least as large
/// as the shard uses the whole shard.
pub fn local_sgd<O: Objective + ?Sized, R: Rng>(
    objective: &O,
    model: &ModelState,
    shard: &DataShard,
    cfg: &SgdConfig,
    rng: &mut R,
) -> Result<ModelState> {
    let n = shard.data.len();
    if n == 0 {
        return Err(Error::Data(format!("device {} has an empty shard", shard.owner)));
    }
    if model.dim() != objective.dim() {
        return Err(Error::domain("model and objective dimensions differ"));
    }
    let mut w = model.params.clone();
    let mut velocity = vec![0.0; w.len()];
    let mut grad = vec![0.0; w.len()];
    let full: Vec<usize> = (0..n).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size as usize);
    for _ in 0..cfg.steps {
        let idx: &[usize] = if cfg.batch_size as usize >= n {
            &full
        } else {
            batch.clear();
            batch.extend((0..cfg.batch_size).map(|_| rng.random_range(0..n)));
            &batch
        };
        objective.loss_grad(&w, &shard.data, idx, &mut grad);
        for ((wi, vi), gi) in w.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
            *vi = cfg.momentum * *vi + gi;
            *wi -= cfg.eta * *vi;
        }
    }
    let out = ModelState::new(w);
    out.check_finite()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shard(seed: u64) -> DataShard {
        let data = make_synthetic_dataset(4, 4, 10, 1.0, seed).unwrap();
        DataShard { owner: 0, data }
    }

    fn relative_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn zero_step_size_is_identity() {
        let s = shard(1);
        let m = SoftmaxModel::new(Architecture { input_dim: 4, num_classes: 4, hidden: None }).unwrap();
        let w0 = m.init(&mut ChaCha8Rng::seed_from_u64(0));
        let cfg = SgdConfig { steps: 5, batch_size: 8, eta: 0.0, momentum: 0.9 };
        let w1 = local_sgd(&m, &w0, &s, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(w0, w1);
    }

    #[test]
    fn empty_shard_is_error() {
        let s = DataShard { owner: 3, data: Dataset::new(Vec::new(), Vec::new(), 4, 4).unwrap() };
        let m = Quadratic::new(vec![1.0; 4]);
        let cfg = SgdConfig { steps: 1, batch_size: 1, eta: 0.1, momentum: 0.0 };
        assert!(local_sgd(&m, &ModelState::zeros(4), &s, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn full_batch_step_matches_finite_differences() {
        let s = shard(2);
        let q = Quadratic::new(vec![0.5, 1.0, 2.0, 4.0]);
        let w0 = ModelState::new(vec![0.3, -0.2, 0.7, 0.1]);
        let eta = 0.01;
        let cfg = SgdConfig { steps: 1, batch_size: 1000, eta, momentum: 0.9 };
        let w1 = local_sgd(&q, &w0, &s, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let step: Vec<f64> = w0.params.iter().zip(&w1.params).map(|(a, b)| (a - b) / eta).collect();
        let fd = model::finite_difference_gradient(&q, &w0.params, &s.data, 1e-6);
        assert!(relative_err(&step, &fd) < 1e-5);
    }

    #[test]
    fn deterministic_given_seed() {
        let s = shard(3);
        let m = SoftmaxModel::new(Architecture { input_dim: 4, num_classes: 4, hidden: Some(5) }).unwrap();
        let w0 = m.init(&mut ChaCha8Rng::seed_from_u64(0));
        let cfg = SgdConfig { steps: 4, batch_size: 3, eta: 0.1, momentum: 0.9 };
        let a = local_sgd(&m, &w0, &s, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = local_sgd(&m, &w0, &s, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_steps_reduce_loss_on_average() {
        let s = shard(4);
        let m = SoftmaxModel::new(Architecture { input_dim: 4, num_classes: 4, hidden: None }).unwrap();
        let all: Vec<usize> = (0..s.data.len()).collect();
        let mut grad = vec![0.0; m.dim()];
        let mut total_drop = 0.0;
        for seed in 0..10 {
            let w0 = m.init(&mut ChaCha8Rng::seed_from_u64(100 + seed));
            let cfg = SgdConfig { steps: 5, batch_size: 8, eta: 0.01, momentum: 0.0 };
            let w1 = local_sgd(&m, &w0, &s, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let l0 = m.loss_grad(&w0.params, &s.data, &all, &mut grad);
            let l1 = m.loss_grad(&w1.params, &s.data, &all, &mut grad);
            total_drop += l0 - l1;
        }
        assert!(total_drop > 0.0);
    }
}
