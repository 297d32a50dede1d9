//! Noise-injection training: every training forward pass perturbs weights as
//! `w * (1 + eps)` with fresh iid draws per mini-batch, gradients are taken
//! with respect to the perturbed forward, and updates land on the clean
//! weights. With `sigma = 0` the perturbation machinery is skipped entirely
//! and the loop is plain mini-batch SGD.

use super::layers::softmax_cross_entropy;
use super::{derive_seed, Dataset, EvalError, Network, NoiseModel};
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean clean loss over the training set before the first update.
    pub initial_loss: f64,
    /// Mean clean loss over the training set after the last update.
    pub final_loss: f64,
    /// Mean perturbed mini-batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

fn mean_clean_loss<F: Scalar>(net: &mut Network<F>, data: &Dataset<F>, batch: usize) -> f64 {
    let n = data.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (images, labels) = data.batch(&idx);
        let logits = net.forward(&images, false);
        let (loss, _) = softmax_cross_entropy(&logits, &labels);
        total += loss.into_f64() * (end - start) as f64;
        start = end;
    }
    total / n as f64
}

/// Trains the network and returns it with a loss report. Fully deterministic
/// given the seed: batch shuffling and noise draws use independent streams
/// derived from it, so `sigma = 0` reproduces vanilla SGD exactly.
pub fn train_noise_injection<F: Scalar>(
    mut net: Network<F>,
    data: &Dataset<F>,
    noise: &NoiseModel,
    opts: &TrainOptions,
    seed: u64,
) -> Result<(Network<F>, TrainReport), EvalError> {
    if opts.epochs == 0 {
        return Err(EvalError::NoEpochs);
    }
    if data.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if !(noise.sigma >= 0.0) {
        return Err(EvalError::InvalidNoise { sigma: noise.sigma });
    }
    let lr = F::from_f64(opts.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle"));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "noise"));
    let initial_loss = mean_clean_loss(&mut net, data, opts.batch_size);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        indices.shuffle(&mut shuffle_rng);
        let mut epoch_total = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in indices.chunks(opts.batch_size).enumerate() {
            let (images, labels) = data.batch(chunk);
            if noise.sigma > 0.0 {
                net.set_noise(noise.sigma, &mut noise_rng);
            }
            let logits = net.forward(&images, true);
            let (loss, grad) = softmax_cross_entropy(&logits, &labels);
            let loss = loss.into_f64();
            if !loss.is_finite() {
                return Err(EvalError::Diverged {
                    epoch,
                    batch: bi,
                    loss,
                });
            }
            net.backward(&grad);
            net.clear_noise();
            net.sgd_step(lr);
            epoch_total += loss;
            batches += 1;
        }
        epoch_losses.push(epoch_total / batches as f64);
    }
    let final_loss = mean_clean_loss(&mut net, data, opts.batch_size);
    Ok((
        net,
        TrainReport {
            initial_loss,
            final_loss,
            epoch_losses,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, synthetic_pair, SyntheticSpec};
    use crate::space::{HardwarePick, LayerPick, Rollout};
    use crate::space::{Backbone, DesignSpace, HardwareChoice, LayerChoice};
    use std::collections::BTreeSet;

    fn small_setup() -> (DesignSpace, Rollout, Dataset<f64>, Dataset<f64>) {
        let space = DesignSpace {
            layers: vec![
                LayerChoice { channel_options: vec![8], kernel_options: vec![3] },
                LayerChoice { channel_options: vec![16], kernel_options: vec![3] },
            ],
            hardware: HardwareChoice {
                crossbar_sizes: vec![64],
                adc_resolutions: vec![4],
                device_precisions: vec![1],
                area_budget: 1e12,
            },
            backbone: Backbone {
                num_conv_layers: 2,
                num_fc_layers: 2,
                fc_hidden_size: 24,
                input_shape: (8, 8, 3),
                num_classes: 3,
                pool_after: BTreeSet::from([0, 1]),
            },
        };
        let rollout = Rollout {
            layers: vec![
                LayerPick { channels: 8, kernel: 3 },
                LayerPick { channels: 16, kernel: 3 },
            ],
            hardware: HardwarePick { crossbar_size: 64, adc_resolution: 4, device_precision: 1 },
        };
        let (train, test) = synthetic_pair(&SyntheticSpec {
            image_size: 8,
            channels: 3,
            num_classes: 3,
            train_per_class: 20,
            test_per_class: 20,
            pixel_noise: 0.1,
            seed: 3,
        });
        (space, rollout, train, test)
    }

    #[test]
    fn zero_epochs_is_rejected() {
        let (space, rollout, train, _) = small_setup();
        let net = build_network::<f64>(&rollout, &space.backbone, 0).unwrap();
        let opts = TrainOptions { epochs: 0, ..Default::default() };
        assert!(matches!(
            train_noise_injection(net, &train, &NoiseModel::NONE, &opts, 0),
            Err(EvalError::NoEpochs)
        ));
    }

    #[test]
    fn loss_decreases_on_synthetic_task_with_noise() {
        let (space, rollout, train, _) = small_setup();
        let net = build_network::<f64>(&rollout, &space.backbone, 1).unwrap();
        let noise = NoiseModel::new(0.1).unwrap();
        let opts = TrainOptions { epochs: 20, learning_rate: 0.05, batch_size: 32 };
        let (_, report) = train_noise_injection(net, &train, &noise, &opts, 1).unwrap();
        assert!(
            report.final_loss < report.initial_loss,
            "loss did not decrease: {} -> {}",
            report.initial_loss,
            report.final_loss
        );
    }

    #[test]
    fn sigma_zero_matches_plain_sgd_oracle() {
        // An independent plain-SGD loop (no noise machinery at all) must
        // produce bit-identical weights to sigma = 0 noise-injection.
        let (space, rollout, train, _) = small_setup();
        let opts = TrainOptions { epochs: 2, learning_rate: 0.05, batch_size: 16 };
        let seed = 9;

        let net = build_network::<f64>(&rollout, &space.backbone, seed).unwrap();
        let (trained, _) =
            train_noise_injection(net, &train, &NoiseModel::NONE, &opts, seed).unwrap();

        let mut oracle = build_network::<f64>(&rollout, &space.backbone, seed).unwrap();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle"));
        let mut indices: Vec<usize> = (0..train.len()).collect();
        for _ in 0..opts.epochs {
            indices.shuffle(&mut shuffle_rng);
            for chunk in indices.chunks(opts.batch_size) {
                let (images, labels) = train.batch(chunk);
                let logits = oracle.forward(&images, true);
                let (_, grad) = softmax_cross_entropy(&logits, &labels);
                oracle.backward(&grad);
                oracle.sgd_step(0.05);
            }
        }
        assert_eq!(trained.flat_params(), oracle.flat_params());
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let (space, rollout, train, _) = small_setup();
        let noise = NoiseModel::new(0.1).unwrap();
        let opts = TrainOptions { epochs: 3, learning_rate: 0.05, batch_size: 16 };
        let a = train_noise_injection(
            build_network::<f64>(&rollout, &space.backbone, 4).unwrap(),
            &train,
            &noise,
            &opts,
            4,
        )
        .unwrap();
        let b = train_noise_injection(
            build_network::<f64>(&rollout, &space.backbone, 4).unwrap(),
            &train,
            &noise,
            &opts,
            4,
        )
        .unwrap();
        assert_eq!(a.0.flat_params(), b.0.flat_params());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn divergence_is_reported_not_clamped() {
        let (space, rollout, train, _) = small_setup();
        let net = build_network::<f64>(&rollout, &space.backbone, 1).unwrap();
        let opts = TrainOptions { epochs: 50, learning_rate: 1e4, batch_size: 16 };
        match train_noise_injection(net, &train, &NoiseModel::NONE, &opts, 1) {
            Err(EvalError::Diverged { .. }) => {}
            Ok((_, report)) => {
                // A huge learning rate must not silently produce a finite loss
                // smaller than where it started.
                assert!(report.final_loss.is_finite());
                assert!(report.final_loss >= report.initial_loss);
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
