//! Learner and data checks that need a full training loop.

use hfel::graph::{metropolis_mixing, Adjacency};
use hfel::rng::{stream_rng, Stream};
use hfel::trainer::{
    edge_aggregate, inter_server_mix, local_sgd, make_synthetic_dataset, Architecture, DataShard, Dataset, ModelState,
    SgdConfig, SoftmaxModel,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CLASSES: usize = 10;
const DIM: usize = 32;

fn centralized_accuracy(separation: f64, seed: u64) -> f64 {
    let train = make_synthetic_dataset(CLASSES, DIM, 200, separation, seed).unwrap();
    let test = make_synthetic_dataset(CLASSES, DIM, 100, separation, seed + 1).unwrap();
    let model = SoftmaxModel::new(Architecture { input_dim: DIM, num_classes: CLASSES, hidden: None }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = model.init(&mut rng);
    let shard = DataShard { owner: 0, data: train };
    let cfg = SgdConfig { steps: 1500, batch_size: 64, eta: 0.05, momentum: 0.9 };
    let w = local_sgd(&model, &w0, &shard, &cfg, &mut rng).unwrap();
    model.evaluate(&w, &test).1
}

#[test]
fn well_separated_classes_are_learnable() {
    for seed in [1, 2] {
        let acc = centralized_accuracy(3.0, seed);
        assert!(acc >= 0.9, "seed {seed}: accuracy {acc}");
    }
}

#[test]
fn coincident_classes_sit_at_chance() {
    let acc = centralized_accuracy(0.0, 3);
    assert!((acc - 1.0 / CLASSES as f64).abs() <= 0.05, "accuracy {acc}");
}

fn replicated_shards(data: &Dataset, n: usize) -> Vec<DataShard> {
    (0..n).map(|owner| DataShard { owner, data: data.clone() }).collect()
}

#[test]
fn identical_models_stay_identical_without_gradient_steps() {
    let data = make_synthetic_dataset(4, 6, 20, 1.0, 9).unwrap();
    let model = SoftmaxModel::new(Architecture { input_dim: 6, num_classes: 4, hidden: Some(5) }).unwrap();
    let shards = replicated_shards(&data, 6);
    let start = model.init(&mut ChaCha8Rng::seed_from_u64(4));
    let mixing = metropolis_mixing(&Adjacency::from_edges(3, &[(0, 1), (1, 2)]).unwrap());
    let cfg = SgdConfig { steps: 5, batch_size: 8, eta: 0.0, momentum: 0.9 };
    let mut servers: Vec<ModelState> = vec![start.clone(); 3];
    for t in 0..10u64 {
        let devices: Vec<ModelState> = shards
            .iter()
            .map(|s| {
                let mut rng = stream_rng(77, Stream::Training, &[t, 0, s.owner as u64]);
                local_sgd(&model, &servers[s.owner / 2], s, &cfg, &mut rng).unwrap()
            })
            .collect();
        let edge: Vec<ModelState> = devices.chunks(2).map(|d| edge_aggregate(d).unwrap()).collect();
        servers = inter_server_mix(&edge, &mixing, 3).unwrap();
    }
    // only round-off from non-dyadic mixing weights may separate them
    let norm = start.params.iter().map(|x| x * x).sum::<f64>().sqrt();
    for s in &servers {
        let d = s.params.iter().zip(&start.params).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!(d <= 1e-14 * norm, "drift {d}");
    }
}

#[test]
fn hidden_layer_learns_separable_data() {
    let train = make_synthetic_dataset(3, 4, 60, 2.0, 12).unwrap();
    let model = SoftmaxModel::new(Architecture { input_dim: 4, num_classes: 3, hidden: Some(8) }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let w0 = model.init(&mut rng);
    let (loss0, _) = model.evaluate(&w0, &train);
    let shard = DataShard { owner: 0, data: train.clone() };
    let cfg = SgdConfig { steps: 600, batch_size: 16, eta: 0.05, momentum: 0.9 };
    let w = local_sgd(&model, &w0, &shard, &cfg, &mut rng).unwrap();
    let (loss, acc) = model.evaluate(&w, &train);
    assert!(loss < 0.5 * loss0, "loss {loss0} -> {loss}");
    assert!(acc > 0.9, "accuracy {acc}");
}
