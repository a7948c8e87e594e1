//! Learners: multinomial softmax regression with an optional tanh hidden
//! layer, and a separable quadratic used to test the optimizer.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::ModelState;
use crate::error::{Error, Result};

/// Mean loss and gradient over a set of sample indices.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient of the mean loss over `idx` into `grad` and
    /// returns that loss.
    fn loss_grad(&self, params: &[f64], data: &Dataset, idx: &[usize], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    pub num_classes: usize,
    /// Width of the tanh hidden layer, if any.
    pub hidden: Option<usize>,
}

impl Architecture {
    pub fn param_count(&self) -> usize {
        match self.hidden {
            None => (self.input_dim + 1) * self.num_classes,
            Some(h) => (self.input_dim + 1) * h + (h + 1) * self.num_classes,
        }
    }
}

/// Parameters are laid out as row-major weight matrices followed by their
/// biases, layer by layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftmaxModel {
    pub arch: Architecture,
}

/// Work buffers sized for one sample.
struct Scratch {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl SoftmaxModel {
    pub fn new(arch: Architecture) -> Result<Self> {
        if arch.input_dim == 0 || arch.num_classes < 2 || arch.hidden == Some(0) {
            return Err(Error::domain("model needs inputs, at least two classes and a non-empty hidden layer"));
        }
        Ok(Self { arch })
    }

    /// Small Gaussian weights, zero biases.
    pub fn init<R: Rng>(&self, rng: &mut R) -> ModelState {
        let mut p = vec![0.0; self.arch.param_count()];
        let (d, k) = (self.arch.input_dim, self.arch.num_classes);
        let mut fill = |slice: &mut [f64], fan_in: usize| {
            let n = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            for v in slice {
                *v = n.sample(rng) * 0.1;
            }
        };
        match self.arch.hidden {
            None => fill(&mut p[..k * d], d),
            Some(h) => {
                fill(&mut p[..h * d], d);
                let w2 = h * d + h;
                fill(&mut p[w2..w2 + k * h], h);
            }
        }
        ModelState::new(p)
    }

    fn scratch(&self) -> Scratch {
        Scratch { hidden: vec![0.0; self.arch.hidden.unwrap_or(0)], logits: vec![0.0; self.arch.num_classes] }
    }

    /// Fills `s.logits` with class probabilities for sample `x`.
    fn forward(&self, params: &[f64], x: &[f64], s: &mut Scratch) {
        let (d, k) = (self.arch.input_dim, self.arch.num_classes);
        let (input, width, w_off) = match self.arch.hidden {
            None => (x, d, 0),
            Some(h) => {
                let (w1, b1) = params[..h * d + h].split_at(h * d);
                for j in 0..h {
                    let row = &w1[j * d..(j + 1) * d];
                    s.hidden[j] = (dot(row, x) + b1[j]).tanh();
                }
                (&s.hidden[..], h, h * d + h)
            }
        };
        let (w, b) = params[w_off..w_off + k * width + k].split_at(k * width);
        for c in 0..k {
            s.logits[c] = dot(&w[c * width..(c + 1) * width], input) + b[c];
        }
        let max = s.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for l in s.logits.iter_mut() {
            *l = (*l - max).exp();
            z += *l;
        }
        for l in s.logits.iter_mut() {
            *l /= z;
        }
    }

    /// Mean cross-entropy and accuracy over all samples.
    pub fn evaluate(&self, model: &ModelState, data: &Dataset) -> (f64, f64) {
        if data.is_empty() {
            return (0.0, 0.0);
        }
        let mut s = self.scratch();
        let mut loss = 0.0;
        let mut correct = 0usize;
        for i in 0..data.len() {
            self.forward(&model.params, data.row(i), &mut s);
            let y = data.labels[i];
            loss -= s.logits[y].max(f64::MIN_POSITIVE).ln();
            let pred = argmax(&s.logits);
            correct += usize::from(pred == y);
        }
        (loss / data.len() as f64, correct as f64 / data.len() as f64)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl Objective for SoftmaxModel {
    fn dim(&self) -> usize {
        self.arch.param_count()
    }

    fn loss_grad(&self, params: &[f64], data: &Dataset, idx: &[usize], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (d, k) = (self.arch.input_dim, self.arch.num_classes);
        let mut s = self.scratch();
        let mut delta_hidden = vec![0.0; self.arch.hidden.unwrap_or(0)];
        let mut loss = 0.0;
        for &i in idx {
            let x = data.row(i);
            let y = data.labels[i];
            self.forward(params, x, &mut s);
            loss -= s.logits[y].max(f64::MIN_POSITIVE).ln();
            // softmax output minus one-hot label
            s.logits[y] -= 1.0;
            match self.arch.hidden {
                None => {
                    let (gw, gb) = grad.split_at_mut(k * d);
                    for c in 0..k {
                        let e = s.logits[c];
                        for (g, xi) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                            *g += e * xi;
                        }
                        gb[c] += e;
                    }
                }
                Some(h) => {
                    let off = h * d + h;
                    let w2 = &params[off..off + k * h];
                    for (j, dh) in delta_hidden.iter_mut().enumerate() {
                        let back: f64 = (0..k).map(|c| s.logits[c] * w2[c * h + j]).sum();
                        *dh = back * (1.0 - s.hidden[j] * s.hidden[j]);
                    }
                    let (g1, g2) = grad.split_at_mut(off);
                    let (gw2, gb2) = g2.split_at_mut(k * h);
                    for c in 0..k {
                        let e = s.logits[c];
                        for (g, a) in gw2[c * h..(c + 1) * h].iter_mut().zip(&s.hidden) {
                            *g += e * a;
                        }
                        gb2[c] += e;
                    }
                    let (gw1, gb1) = g1.split_at_mut(h * d);
                    for j in 0..h {
                        for (g, xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                            *g += delta_hidden[j] * xi;
                        }
                        gb1[j] += delta_hidden[j];
                    }
                }
            }
        }
        let scale = 1.0 / idx.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        loss * scale
    }
}

/// `mean_i 0.5 * sum_j curvature_j * (w_j - x_ij)^2` over the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub curvature: Vec<f64>,
}

impl Quadratic {
    pub fn new(curvature: Vec<f64>) -> Self {
        Self { curvature }
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn loss_grad(&self, params: &[f64], data: &Dataset, idx: &[usize], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for &i in idx {
            let x = data.row(i);
            for j in 0..params.len() {
                let r = params[j] - x[j];
                loss += 0.5 * self.curvature[j] * r * r;
                grad[j] += self.curvature[j] * r;
            }
        }
        let scale = 1.0 / idx.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        loss * scale
    }
}

/// Central-difference gradient of the full-data mean loss.
pub fn finite_difference_gradient<O: Objective + ?Sized>(
    objective: &O,
    params: &[f64],
    data: &Dataset,
    h: f64,
) -> Vec<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut scratch = vec![0.0; params.len()];
    let mut w = params.to_vec();
    (0..params.len())
        .map(|j| {
            w[j] = params[j] + h;
            let up = objective.loss_grad(&w, data, &idx, &mut scratch);
            w[j] = params[j] - h;
            let down = objective.loss_grad(&w, data, &idx, &mut scratch);
            w[j] = params[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::data::make_synthetic_dataset;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_rel(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        num / b.iter().map(|y| y * y).sum::<f64>().sqrt()
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let data = make_synthetic_dataset(3, 4, 6, 1.0, 5).unwrap();
        let idx: Vec<usize> = (0..data.len()).collect();
        for hidden in [None, Some(3)] {
            let m = SoftmaxModel::new(Architecture { input_dim: 4, num_classes: 3, hidden }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut w = m.init(&mut rng);
            for p in w.params.iter_mut() {
                *p += rng.random_range(-0.5..0.5);
            }
            let mut g = vec![0.0; m.dim()];
            m.loss_grad(&w.params, &data, &idx, &mut g);
            let fd = finite_difference_gradient(&m, &w.params, &data, 1e-6);
            assert!(max_rel(&g, &fd) < 1e-6, "{hidden:?}");
        }
    }

    #[test]
    fn uniform_logits_give_log_k_loss() {
        let data = make_synthetic_dataset(5, 5, 4, 1.0, 0).unwrap();
        let m = SoftmaxModel::new(Architecture { input_dim: 5, num_classes: 5, hidden: None }).unwrap();
        let (loss, _) = m.evaluate(&ModelState::zeros(m.dim()), &data);
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert_eq!(m.arch.param_count(), 30);
        let h = Architecture { input_dim: 5, num_classes: 5, hidden: Some(2) };
        assert_eq!(h.param_count(), 12 + 15);
    }
}
