//! Network assembly: rollout + backbone -> conv/pool stack + dense head.

use super::layers::{relu_backward, relu_forward, Conv2d, Dense, MaxPool2};
use super::EvalError;
use crate::scalar::Scalar;
use crate::space::{Backbone, Rollout};
use ndarray::{Array1, Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
struct ConvBlock<F> {
    conv: Conv2d<F>,
    pool: Option<MaxPool2>,
    relu_mask: Option<Array4<bool>>,
}

#[derive(Debug, Clone)]
struct DenseBlock<F> {
    dense: Dense<F>,
    /// All but the final layer apply a rectifier.
    relu: bool,
    relu_mask: Option<Array2<bool>>,
}

/// A rollout instantiated as a trainable network.
#[derive(Debug, Clone)]
pub struct Network<F> {
    blocks: Vec<ConvBlock<F>>,
    dense: Vec<DenseBlock<F>>,
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
}

fn he_normal<F: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<F> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            F::from_f64(z * std)
        })
        .collect()
}

/// Deterministic architecture and initialization: weights are zero-mean
/// normal scaled by fan-in, drawn from a stream derived from `seed`.
pub fn build_network<F: Scalar>(
    rollout: &Rollout,
    backbone: &Backbone,
    seed: u64,
) -> Result<Network<F>, EvalError> {
    if rollout.layers.len() != backbone.num_conv_layers {
        return Err(EvalError::LayerCountMismatch {
            expected: backbone.num_conv_layers,
            got: rollout.layers.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(super::derive_seed(seed, "init"));
    let (mut h, mut w, mut c) = backbone.input_shape;
    let mut blocks = Vec::with_capacity(backbone.num_conv_layers);
    for (i, pick) in rollout.layers.iter().enumerate() {
        let k = pick.kernel;
        let fan_in = k * k * c;
        let weight = Array4::from_shape_vec(
            (pick.channels, c, k, k),
            he_normal::<F>(&mut rng, fan_in, pick.channels * c * k * k),
        )
        .expect("shape matches draw count");
        let bias = Array1::zeros(pick.channels);
        let pool = if backbone.pool_after.contains(&i) {
            h /= 2;
            w /= 2;
            if h == 0 || w == 0 {
                return Err(EvalError::SpatialCollapse { layer: i });
            }
            Some(MaxPool2::default())
        } else {
            None
        };
        c = pick.channels;
        blocks.push(ConvBlock {
            conv: Conv2d::new(weight, bias),
            pool,
            relu_mask: None,
        });
    }
    let mut dense = Vec::with_capacity(backbone.num_fc_layers);
    let mut in_features = h * w * c;
    for li in 0..backbone.num_fc_layers {
        let last = li + 1 == backbone.num_fc_layers;
        let out_features = if last { backbone.num_classes } else { backbone.fc_hidden_size };
        let weight = Array2::from_shape_vec(
            (in_features, out_features),
            he_normal::<F>(&mut rng, in_features, in_features * out_features),
        )
        .expect("shape matches draw count");
        let bias = Array1::zeros(out_features);
        dense.push(DenseBlock {
            dense: Dense::new(weight, bias),
            relu: !last,
            relu_mask: None,
        });
        in_features = out_features;
    }
    Ok(Network {
        blocks,
        dense,
        input_shape: backbone.input_shape,
        num_classes: backbone.num_classes,
    })
}

/// Trainable parameter count of the network a rollout would build, without
/// building it.
pub fn parameter_count(rollout: &Rollout, backbone: &Backbone) -> Result<usize, EvalError> {
    if rollout.layers.len() != backbone.num_conv_layers {
        return Err(EvalError::LayerCountMismatch {
            expected: backbone.num_conv_layers,
            got: rollout.layers.len(),
        });
    }
    let (mut h, mut w, mut c) = backbone.input_shape;
    let mut count = 0usize;
    for (i, pick) in rollout.layers.iter().enumerate() {
        count += pick.kernel * pick.kernel * c * pick.channels + pick.channels;
        c = pick.channels;
        if backbone.pool_after.contains(&i) {
            h /= 2;
            w /= 2;
            if h == 0 || w == 0 {
                return Err(EvalError::SpatialCollapse { layer: i });
            }
        }
    }
    let mut in_features = h * w * c;
    for li in 0..backbone.num_fc_layers {
        let last = li + 1 == backbone.num_fc_layers;
        let out = if last { backbone.num_classes } else { backbone.fc_hidden_size };
        count += in_features * out + out;
        in_features = out;
    }
    Ok(count)
}

impl<F: Scalar> Network<F> {
    /// Logits for a batch. `train` keeps the caches backward needs.
    pub fn forward(&mut self, x: &Array4<F>, train: bool) -> Array2<F> {
        let mut cur = x.clone();
        for block in &mut self.blocks {
            let out = block.conv.forward(&cur, train);
            let (act, mask) = relu_forward(&out);
            if train {
                block.relu_mask = Some(mask);
            }
            cur = match &mut block.pool {
                Some(pool) => pool.forward(&act, train),
                None => act,
            };
        }
        let (b, c, h, w) = cur.dim();
        let mut flat = cur
            .into_shape_with_order((b, c * h * w))
            .expect("activations are contiguous");
        for (i, block) in self.dense.iter_mut().enumerate() {
            let mut out = block.dense.forward(&flat, train);
            if block.relu {
                let (act, mask) = relu_forward(&out);
                if train {
                    block.relu_mask = Some(mask);
                }
                out = act;
            }
            let _ = i;
            flat = out;
        }
        flat
    }

    /// Backpropagates a logits gradient, filling every layer's weight grads.
    pub fn backward(&mut self, grad_logits: &Array2<F>) {
        let mut grad = grad_logits.clone();
        for block in self.dense.iter_mut().rev() {
            if block.relu {
                let mask = block.relu_mask.take().expect("backward without forward");
                grad = relu_backward(&grad, &mask);
            }
            grad = block.dense.backward(&grad);
        }
        let last_conv_dim = self.conv_output_dim(grad.dim().0);
        let mut grad4 = grad
            .into_shape_with_order(last_conv_dim)
            .expect("gradient is contiguous");
        for block in self.blocks.iter_mut().rev() {
            if let Some(pool) = &mut block.pool {
                grad4 = pool.backward(&grad4);
            }
            let mask = block.relu_mask.take().expect("backward without forward");
            grad4 = relu_backward(&grad4, &mask);
            grad4 = block.conv.backward(&grad4);
        }
    }

    fn conv_output_dim(&self, batch: usize) -> (usize, usize, usize, usize) {
        let (mut h, mut w, _) = self.input_shape;
        let mut c = self.input_shape.2;
        for block in &self.blocks {
            c = block.conv.out_channels();
            if block.pool.is_some() {
                h /= 2;
                w /= 2;
            }
        }
        (batch, c, h, w)
    }

    pub fn sgd_step(&mut self, lr: F) {
        for block in &mut self.blocks {
            block.conv.sgd_step(lr);
        }
        for block in &mut self.dense {
            block.dense.sgd_step(lr);
        }
    }

    /// Draws fresh multiplicative `1 + eps` factors for every weight tensor
    /// (biases are digital and stay clean).
    pub fn set_noise(&mut self, sigma: f64, rng: &mut ChaCha8Rng) {
        for block in &mut self.blocks {
            let f = Array4::from_shape_vec(
                block.conv.weight.raw_dim(),
                noise_factors::<F>(rng, sigma, block.conv.weight.len()),
            )
            .expect("shape matches draw count");
            block.conv.set_noise(f);
        }
        for block in &mut self.dense {
            let f = Array2::from_shape_vec(
                block.dense.weight.raw_dim(),
                noise_factors::<F>(rng, sigma, block.dense.weight.len()),
            )
            .expect("shape matches draw count");
            block.dense.set_noise(f);
        }
    }

    pub fn clear_noise(&mut self) {
        for block in &mut self.blocks {
            block.conv.clear_noise();
        }
        for block in &mut self.dense {
            block.dense.clear_noise();
        }
    }

    pub fn param_count(&self) -> usize {
        let conv: usize = self
            .blocks
            .iter()
            .map(|b| b.conv.weight.len() + b.conv.bias.len())
            .sum();
        let dense: usize = self
            .dense
            .iter()
            .map(|b| b.dense.weight.len() + b.dense.bias.len())
            .sum();
        conv + dense
    }

    /// All parameters flattened in a fixed order (per layer: weights then
    /// bias; conv stack first, then the dense head).
    pub fn flat_params(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for block in &self.blocks {
            out.extend(block.conv.weight.iter().cloned());
            out.extend(block.conv.bias.iter().cloned());
        }
        for block in &self.dense {
            out.extend(block.dense.weight.iter().cloned());
            out.extend(block.dense.bias.iter().cloned());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[F]) {
        assert_eq!(params.len(), self.param_count(), "parameter count mismatch");
        let mut it = params.iter().cloned();
        for block in &mut self.blocks {
            for v in block.conv.weight.iter_mut() {
                *v = it.next().expect("length checked");
            }
            for v in block.conv.bias.iter_mut() {
                *v = it.next().expect("length checked");
            }
        }
        for block in &mut self.dense {
            for v in block.dense.weight.iter_mut() {
                *v = it.next().expect("length checked");
            }
            for v in block.dense.bias.iter_mut() {
                *v = it.next().expect("length checked");
            }
        }
    }

    /// Flattened gradients in the same order as [`Network::flat_params`].
    pub fn flat_grads(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for block in &self.blocks {
            out.extend(block.conv.grad_weight.iter().cloned());
            out.extend(block.conv.grad_bias.iter().cloned());
        }
        for block in &self.dense {
            out.extend(block.dense.grad_weight.iter().cloned());
            out.extend(block.dense.grad_bias.iter().cloned());
        }
        out
    }

    /// Classification accuracy on a dataset, evaluated in batches.
    pub fn accuracy(&mut self, data: &super::Dataset<F>) -> f64 {
        let n = data.len();
        if n == 0 {
            return 0.0;
        }
        let batch = 64;
        let mut correct = 0usize;
        let mut start = 0;
        while start < n {
            let end = (start + batch).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let (images, labels) = data.batch(&idx);
            let logits = self.forward(&images, false);
            for (row, &label) in logits.rows().into_iter().zip(&labels) {
                let mut best = 0usize;
                let mut best_v = row[0];
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > best_v {
                        best_v = v;
                        best = j;
                    }
                }
                if best == label {
                    correct += 1;
                }
            }
            start = end;
        }
        correct as f64 / n as f64
    }
}

fn noise_factors<F: Scalar>(rng: &mut ChaCha8Rng, sigma: f64, n: usize) -> Vec<F> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            F::from_f64(1.0 + sigma * z)
        })
        .collect()
}
