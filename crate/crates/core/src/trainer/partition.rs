//! Splitting a dataset across devices grouped into clusters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::data::{DataShard, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum PartitionScheme {
    Iid,
    /// Per-class device proportions drawn from a symmetric Dirichlet.
    Dirichlet {
        beta: f64,
    },
    /// Each cluster sees only `labels_per_cluster` consecutive labels
    /// (wrapping), spread evenly over its devices.
    ClusterPathological {
        labels_per_cluster: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub seed: u64,
}

/// Labels held by cluster `c` of `clusters` under the pathological scheme.
pub fn cluster_labels(c: usize, clusters: usize, num_classes: usize, labels_per_cluster: usize) -> Vec<usize> {
    let start = c * num_classes / clusters;
    (0..labels_per_cluster).map(|j| (start + j) % num_classes).collect()
}

/// Shards in device order: cluster 0's devices first. Every sample lands on
/// exactly one device and every device gets at least one sample.
pub fn partition(dataset: &Dataset, spec: &PartitionSpec, devices_per_cluster: &[usize]) -> Result<Vec<DataShard>> {
    let n: usize = devices_per_cluster.iter().sum();
    if n == 0 || devices_per_cluster.contains(&0) {
        return Err(Error::Data("every cluster needs at least one device".into()));
    }
    if dataset.len() < n {
        return Err(Error::Data(format!("{} samples cannot cover {n} devices", dataset.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut owned: Vec<Vec<usize>> = match spec.scheme {
        PartitionScheme::Iid => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut rng);
            split_even(&idx, n)
        }
        PartitionScheme::Dirichlet { beta } => dirichlet(dataset, beta, n, &mut rng)?,
        PartitionScheme::ClusterPathological { labels_per_cluster } => {
            pathological(dataset, labels_per_cluster, devices_per_cluster, &mut rng)?
        }
    };
    fill_empty(&mut owned);
    Ok(owned
        .into_iter()
        .enumerate()
        .map(|(owner, mut idx)| {
            idx.sort_unstable();
            DataShard { owner, data: dataset.subset(&idx) }
        })
        .collect())
}

/// Contiguous chunks whose sizes differ by at most one.
fn split_even(idx: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let (q, r) = (idx.len() / parts, idx.len() % parts);
    let mut out = Vec::with_capacity(parts);
    let mut at = 0;
    for p in 0..parts {
        let take = q + usize::from(p < r);
        out.push(idx[at..at + take].to_vec());
        at += take;
    }
    out
}

fn dirichlet(dataset: &Dataset, beta: f64, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::Data(format!("dirichlet concentration {beta}: {e}")))?;
    let mut out = vec![Vec::new(); n];
    for mut idx in dataset.indices_by_class() {
        idx.shuffle(rng);
        let mut w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter_mut().for_each(|x| *x /= total);
        } else {
            // every draw underflowed; give the class to one random device
            w.iter_mut().for_each(|x| *x = 0.0);
            w[rng.random_range(0..n)] = 1.0;
        }
        let mut at = 0;
        let mut acc = 0.0;
        for (d, share) in w.iter().enumerate() {
            acc += share;
            let end = if d + 1 == n { idx.len() } else { ((acc * idx.len() as f64).round() as usize).min(idx.len()) };
            out[d].extend_from_slice(&idx[at..end.max(at)]);
            at = end.max(at);
        }
    }
    Ok(out)
}

fn pathological(
    dataset: &Dataset,
    lc: usize,
    devices_per_cluster: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    let k = dataset.num_classes;
    let c = devices_per_cluster.len();
    if lc == 0 || lc > k {
        return Err(Error::Data(format!("labels per cluster must be in 1..={k}, got {lc}")));
    }
    let holders: Vec<Vec<usize>> =
        (0..k).map(|y| (0..c).filter(|&cl| cluster_labels(cl, c, k, lc).contains(&y)).collect()).collect();
    if let Some(y) = holders.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("label {y} is held by no cluster with {lc} labels per cluster")));
    }
    let mut per_cluster = vec![Vec::new(); c];
    for (y, mut idx) in dataset.indices_by_class().into_iter().enumerate() {
        idx.shuffle(rng);
        for (part, cl) in split_even(&idx, holders[y].len()).into_iter().zip(&holders[y]) {
            per_cluster[*cl].extend(part);
        }
    }
    let mut out = Vec::new();
    for (mut idx, &devices) in per_cluster.into_iter().zip(devices_per_cluster) {
        idx.shuffle(rng);
        out.extend(split_even(&idx, devices));
    }
    Ok(out)
}

/// Moves one sample from the largest shard into each empty one.
fn fill_empty(owned: &mut [Vec<usize>]) {
    while let Some(empty) = owned.iter().position(Vec::is_empty) {
        let largest = (0..owned.len()).max_by_key(|&i| (owned[i].len(), std::cmp::Reverse(i))).expect("non-empty");
        let moved = owned[largest].pop().expect("total samples exceed device count");
        owned[empty].push(moved);
    }
}

#[cfg(test)]
mod tests {
    use super::super::data::make_synthetic_dataset;
    use super::*;

    fn coverage(shards: &[DataShard], total: usize) {
        let n: usize = shards.iter().map(|s| s.data.len()).sum();
        assert_eq!(n, total);
        assert!(shards.iter().all(|s| !s.data.is_empty()));
    }

    fn class_hist(s: &DataShard) -> Vec<usize> {
        let mut h = vec![0; s.data.num_classes];
        for y in &s.data.labels {
            h[*y] += 1;
        }
        h
    }

    #[test]
    fn iid_equal_sizes() {
        let d = make_synthetic_dataset(4, 4, 30, 1.0, 0).unwrap();
        let spec = PartitionSpec { scheme: PartitionScheme::Iid, seed: 1 };
        let shards = partition(&d, &spec, &[3, 3]).unwrap();
        assert!(shards.iter().all(|s| s.data.len() == 20));
        coverage(&shards, 120);
        assert_eq!(shards[4].owner, 4);
    }

    #[test]
    fn too_few_samples() {
        let d = make_synthetic_dataset(2, 2, 2, 1.0, 0).unwrap();
        let spec = PartitionSpec { scheme: PartitionScheme::Iid, seed: 1 };
        assert!(partition(&d, &spec, &[3, 2]).is_err());
    }

    #[test]
    fn pathological_restricts_labels() {
        let d = make_synthetic_dataset(10, 10, 20, 1.0, 0).unwrap();
        let spec = PartitionSpec { scheme: PartitionScheme::ClusterPathological { labels_per_cluster: 3 }, seed: 2 };
        let shards = partition(&d, &spec, &[2, 2, 2, 2]).unwrap();
        coverage(&shards, 200);
        for (i, s) in shards.iter().enumerate() {
            let allowed = cluster_labels(i / 2, 4, 10, 3);
            assert!(s.data.labels.iter().all(|y| allowed.contains(y)));
        }
        let bad = PartitionSpec { scheme: PartitionScheme::ClusterPathological { labels_per_cluster: 2 }, seed: 2 };
        assert!(partition(&d, &bad, &[2, 2, 2, 2]).is_err());
    }

    #[test]
    fn pathological_with_all_labels_covers_every_class_per_cluster() {
        let d = make_synthetic_dataset(4, 4, 40, 1.0, 0).unwrap();
        let spec = PartitionSpec { scheme: PartitionScheme::ClusterPathological { labels_per_cluster: 4 }, seed: 3 };
        let shards = partition(&d, &spec, &[2, 2]).unwrap();
        for cl in 0..2 {
            let mut h = vec![0; 4];
            for s in &shards[2 * cl..2 * cl + 2] {
                for (a, b) in h.iter_mut().zip(class_hist(s)) {
                    *a += b;
                }
            }
            assert_eq!(h, vec![20; 4]);
        }
    }

    #[test]
    fn dirichlet_approaches_iid_with_large_beta() {
        let d = make_synthetic_dataset(5, 5, 400, 1.0, 0).unwrap();
        let chi2 = |beta: f64| {
            let mut total = 0.0;
            for seed in 0..5 {
                let spec = PartitionSpec { scheme: PartitionScheme::Dirichlet { beta }, seed };
                let shards = partition(&d, &spec, &[4, 4]).unwrap();
                coverage(&shards, 2000);
                for s in &shards {
                    let n = s.data.len() as f64;
                    let e = n / 5.0;
                    total += class_hist(s).iter().map(|o| (*o as f64 - e).powi(2) / e).sum::<f64>() / n;
                }
            }
            total
        };
        let (a, b, c) = (chi2(1.0), chi2(10.0), chi2(100.0));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn dirichlet_small_beta_still_covers_devices() {
        let d = make_synthetic_dataset(3, 3, 10, 1.0, 0).unwrap();
        let spec = PartitionSpec { scheme: PartitionScheme::Dirichlet { beta: 0.01 }, seed: 4 };
        let shards = partition(&d, &spec, &[5, 5]).unwrap();
        coverage(&shards, 30);
    }
}
