//! Intra-cluster averaging, inter-server gossip and consensus distances.

use nalgebra::DMatrix;

use super::ModelState;
use crate::error::{Error, Result};
use crate::graph::{Adjacency, MixingMatrix};
use crate::topology::{consensus_constraint_lhs, ConsensusMatrix};

fn check_dims(models: &[ModelState]) -> Result<usize> {
    let first = models.first().ok_or_else(|| Error::domain("no models to combine"))?;
    let d = first.dim();
    if models.iter().any(|m| m.dim() != d) {
        return Err(Error::domain("models have different dimensions"));
    }
    Ok(d)
}

/// Plain average, accumulated in model order.
pub fn edge_aggregate(models: &[ModelState]) -> Result<ModelState> {
    let d = check_dims(models)?;
    let mut sum = vec![0.0; d];
    for m in models {
        for (s, p) in sum.iter_mut().zip(&m.params) {
            *s += p;
        }
    }
    let k = models.len() as f64;
    sum.iter_mut().for_each(|s| *s /= k);
    Ok(ModelState::new(sum))
}

/// `psi` rounds of `u <- M u` on the server models stacked as rows.
pub fn inter_server_mix(models: &[ModelState], mixing: &MixingMatrix, psi: u32) -> Result<Vec<ModelState>> {
    let d = check_dims(models)?;
    let c = models.len();
    if mixing.len() != c {
        return Err(Error::domain("mixing matrix size does not match server count"));
    }
    let mut u = DMatrix::from_fn(c, d, |i, j| models[i].params[j]);
    for _ in 0..psi {
        u = mixing.matrix() * &u;
    }
    Ok((0..c).map(|i| ModelState::new(u.row(i).iter().copied().collect())).collect())
}

pub fn consensus_pairwise(a: &ModelState, b: &ModelState) -> f64 {
    a.params.iter().zip(&b.params).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean distance of each server model from their average.
pub fn consensus_average(models: &[ModelState]) -> Result<f64> {
    let mean = edge_aggregate(models)?;
    Ok(models.iter().map(|m| consensus_pairwise(&mean, m)).sum::<f64>() / models.len() as f64)
}

/// Consensus distance bound after gossip on `active`, assuming uniform mixing.
pub fn estimate_consensus_after_mix(active: &Adjacency, upsilon: &ConsensusMatrix) -> f64 {
    consensus_constraint_lhs(active, upsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{erdos_renyi_connected, metropolis_mixing, zeta};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_models(rng: &mut ChaCha8Rng, c: usize, d: usize) -> Vec<ModelState> {
        (0..c).map(|_| ModelState::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect())).collect()
    }

    #[test]
    fn aggregate_examples() {
        let m = ModelState::new(vec![1.0, -2.0]);
        assert_eq!(edge_aggregate(&[m.clone(), m.clone()]).unwrap(), m);
        let mid = edge_aggregate(&[ModelState::new(vec![0.0, 2.0]), ModelState::new(vec![2.0, 4.0])]).unwrap();
        assert_eq!(mid.params, vec![1.0, 3.0]);
        assert!(edge_aggregate(&[]).is_err());
    }

    #[test]
    fn mean_of_equal_cluster_means_is_global_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all = random_models(&mut rng, 6, 5);
        let means = [edge_aggregate(&all[..3]).unwrap(), edge_aggregate(&all[3..]).unwrap()];
        let a = edge_aggregate(&means).unwrap();
        let b = edge_aggregate(&all).unwrap();
        assert!(consensus_pairwise(&a, &b) < 1e-15);
    }

    #[test]
    fn mixing_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_models(&mut rng, 4, 3);
        let mixed = inter_server_mix(&u, &MixingMatrix::uniform(4), 1).unwrap();
        let avg = edge_aggregate(&u).unwrap();
        for m in &mixed {
            assert!(consensus_pairwise(m, &avg) < 1e-14);
        }
        assert_eq!(inter_server_mix(&u, &MixingMatrix::identity(4), 5).unwrap(), u);
    }

    #[test]
    fn consensus_examples() {
        let a = ModelState::new(vec![0.0, 0.0]);
        let b = ModelState::new(vec![2.0, 0.0]);
        assert_eq!(consensus_average(&[a.clone(), b.clone()]).unwrap(), 1.0);
        assert_eq!(consensus_pairwise(&a, &b), consensus_pairwise(&b, &a));
        assert_eq!(consensus_average(&[a.clone(), a.clone()]).unwrap(), 0.0);
        let shift = |m: &ModelState| ModelState::new(m.params.iter().map(|x| x + 3.5).collect());
        let moved = consensus_average(&[shift(&a), shift(&b)]).unwrap();
        assert!((moved - 1.0).abs() < 1e-15);
    }

    #[test]
    fn realized_consensus_under_uniform_mixing_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let c = rng.random_range(2..7);
            let u = random_models(&mut rng, c, 4);
            let a = erdos_renyi_connected(c, 0.5, &mut rng).unwrap();
            let ups =
                ConsensusMatrix::from_matrix(DMatrix::from_fn(c, c, |i, j| consensus_pairwise(&u[i], &u[j]))).unwrap();
            let mixed = inter_server_mix(&u, &MixingMatrix::uniform(c), 1).unwrap();
            // uniform mixing reaches exact average, so realized spread is zero
            assert!(consensus_average(&mixed).unwrap() <= estimate_consensus_after_mix(&a, &ups) + 1e-12);
        }
    }

    #[test]
    fn decay_follows_second_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let c = rng.random_range(3..8);
            let a = erdos_renyi_connected(c, 0.5, &mut rng).unwrap();
            let m = metropolis_mixing(&a);
            let z = zeta(&m);
            let psi = 2;
            let mut u = random_models(&mut rng, c, 6);
            let avg = edge_aggregate(&u).unwrap();
            let spread0 = (u.iter().map(|x| consensus_pairwise(x, &avg).powi(2)).sum::<f64>() / c as f64).sqrt();
            for k in 1..=20 {
                u = inter_server_mix(&u, &m, psi).unwrap();
                let bound = 1.05 * z.powi((k * psi) as i32) * spread0;
                assert!(consensus_average(&u).unwrap() <= bound + 1e-12);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_model(d: usize) -> impl Strategy<Value = ModelState> {
            proptest::collection::vec(-10.0f64..10.0, d).prop_map(ModelState::new)
        }

        proptest! {
            #[test]
            fn triangle_inequality(a in arb_model(5), b in arb_model(5), c in arb_model(5)) {
                let ab = consensus_pairwise(&a, &b);
                let bc = consensus_pairwise(&b, &c);
                let ac = consensus_pairwise(&a, &c);
                prop_assert!(ac <= ab + bc + 1e-12);
            }

            #[test]
            fn gossip_preserves_mean(seed in 0u64..1000, c in 2usize..8, psi in 1u32..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = erdos_renyi_connected(c, 0.5, &mut rng).unwrap();
                let u = random_models(&mut rng, c, 7);
                let before = edge_aggregate(&u).unwrap();
                let after = edge_aggregate(&inter_server_mix(&u, &metropolis_mixing(&a), psi).unwrap()).unwrap();
                let norm = before.params.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!(consensus_pairwise(&before, &after) / norm < 1e-9);
            }
        }
    }
}
