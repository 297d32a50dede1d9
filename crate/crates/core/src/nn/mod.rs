//! Desk-scale CNN evaluator: builds a network from a rollout, trains it with
//! noise injection, and measures Monte Carlo accuracy under multiplicative
//! weight perturbation.

mod dataset;
mod layers;
mod network;
mod train;

pub use dataset::{load_cifar10_batch, synthetic_pair, Dataset, DatasetError, SyntheticSpec};
pub use layers::softmax_cross_entropy;
pub use network::{build_network, parameter_count, Network};
pub use train::{train_noise_injection, TrainOptions, TrainReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Multiplicative Gaussian weight noise: every weight is perturbed as
/// `w * (1 + eps)` with `eps ~ Normal(0, sigma^2)`, drawn independently per
/// weight per draw (device variations are uncorrelated across NVM cells).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel { sigma: 0.0 };

    pub fn new(sigma: f64) -> Result<Self, EvalError> {
        if !(sigma >= 0.0) {
            return Err(EvalError::InvalidNoise { sigma });
        }
        Ok(NoiseModel { sigma })
    }
}

/// Accuracy measurement under device variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub clean_accuracy: f64,
    pub mc_mean_accuracy: f64,
    pub mc_std: f64,
    pub num_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("noise sigma must be >= 0, got {sigma}")]
    InvalidNoise { sigma: f64 },
    #[error("training requires at least one epoch")]
    NoEpochs,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need at least one Monte Carlo sample")]
    NoSamples,
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("pooling collapses the spatial size to zero at conv layer {layer}")]
    SpatialCollapse { layer: usize },
    #[error("rollout has {got} layers, backbone expects {expected}")]
    LayerCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Derives an independent named RNG stream from a base seed, so that e.g.
/// batch shuffling and noise draws never share state.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(tag.as_bytes());
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest is at least 8 bytes"))
}

/// Monte Carlo accuracy under the noise model: each sample draws one iid
/// perturbation of all weights and evaluates test accuracy. Deterministic
/// given the seed. With `sigma = 0` every sample equals the clean evaluation,
/// so the mean is the clean accuracy and the std is exactly zero.
pub fn mc_accuracy<F: crate::Scalar>(
    net: &mut Network<F>,
    data: &Dataset<F>,
    noise: &NoiseModel,
    num_samples: usize,
    seed: u64,
) -> Result<EvalResult, EvalError> {
    use rand::SeedableRng;
    if data.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if num_samples == 0 {
        return Err(EvalError::NoSamples);
    }
    let clean_accuracy = net.accuracy(data);
    if noise.sigma == 0.0 {
        return Ok(EvalResult {
            clean_accuracy,
            mc_mean_accuracy: clean_accuracy,
            mc_std: 0.0,
            num_samples,
            seed,
        });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, "mc-noise"));
    let mut accs = Vec::with_capacity(num_samples);
    for _ in 0..num_samples {
        net.set_noise(noise.sigma, &mut rng);
        accs.push(net.accuracy(data));
    }
    net.clear_noise();
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    Ok(EvalResult {
        clean_accuracy,
        mc_mean_accuracy: mean,
        mc_std: var.sqrt(),
        num_samples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{default_space, example_rollout};

    fn tiny_data() -> (Dataset<f64>, Dataset<f64>) {
        synthetic_pair(&SyntheticSpec {
            image_size: 8,
            channels: 3,
            num_classes: 3,
            train_per_class: 8,
            test_per_class: 100,
            pixel_noise: 0.15,
            seed: 11,
        })
    }

    fn tiny_net() -> Network<f64> {
        let mut space = default_space(1e12);
        space.backbone.num_conv_layers = 2;
        space.layers.truncate(2);
        space.backbone.pool_after = std::collections::BTreeSet::from([0, 1]);
        space.backbone.input_shape = (8, 8, 3);
        space.backbone.num_classes = 3;
        space.backbone.fc_hidden_size = 16;
        let rollout = crate::space::Rollout {
            layers: vec![
                crate::space::LayerPick { channels: 16, kernel: 3 },
                crate::space::LayerPick { channels: 16, kernel: 3 },
            ],
            hardware: space.default_hardware(),
        };
        build_network(&rollout, &space.backbone, 3).unwrap()
    }

    #[test]
    fn mc_with_zero_sigma_is_exactly_clean() {
        let (_, test) = tiny_data();
        let mut net = tiny_net();
        let r = mc_accuracy(&mut net, &test, &NoiseModel::NONE, 7, 5).unwrap();
        assert_eq!(r.mc_mean_accuracy, r.clean_accuracy);
        assert_eq!(r.mc_std, 0.0);
    }

    #[test]
    fn mc_single_sample_has_zero_std() {
        let (_, test) = tiny_data();
        let mut net = tiny_net();
        let noise = NoiseModel::new(0.2).unwrap();
        let r = mc_accuracy(&mut net, &test, &noise, 1, 5).unwrap();
        assert_eq!(r.mc_std, 0.0);
        assert_eq!(r.num_samples, 1);
    }

    #[test]
    fn mc_is_deterministic_given_seed() {
        let (_, test) = tiny_data();
        let mut net = tiny_net();
        let noise = NoiseModel::new(0.1).unwrap();
        let a = mc_accuracy(&mut net, &test, &noise, 5, 9).unwrap();
        let b = mc_accuracy(&mut net, &test, &noise, 5, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn untrained_balanced_accuracy_is_near_chance() {
        let (_, test) = tiny_data();
        let mut net = tiny_net();
        let r = mc_accuracy(&mut net, &test, &NoiseModel::NONE, 1, 5).unwrap();
        // Binomial 3-sigma band around 1/3 on 300 samples.
        let n = test.len() as f64;
        let band = 3.0 * ((1.0 / 3.0) * (2.0 / 3.0) / n).sqrt();
        assert!(
            (r.clean_accuracy - 1.0 / 3.0).abs() <= band,
            "accuracy {} outside chance band {}",
            r.clean_accuracy,
            band
        );
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut net = tiny_net();
        let empty = Dataset::<f64>::empty(3, (3, 8, 8));
        assert!(matches!(
            mc_accuracy(&mut net, &empty, &NoiseModel::NONE, 1, 0),
            Err(EvalError::EmptyDataset)
        ));
    }

    #[test]
    fn derive_seed_separates_streams() {
        assert_ne!(derive_seed(7, "shuffle"), derive_seed(7, "noise"));
        assert_ne!(derive_seed(7, "noise"), derive_seed(8, "noise"));
        assert_eq!(derive_seed(7, "noise"), derive_seed(7, "noise"));
    }

    #[test]
    fn example_rollout_parameter_count_matches_hand_arithmetic() {
        let space = default_space(1e12);
        let p = parameter_count(&example_rollout(), &space.backbone).unwrap();
        // conv: 3*3*cin*cout + cout, fc: in*out + out
        let conv: usize = [(3, 32), (32, 32), (32, 64), (64, 64), (64, 128), (128, 128)]
            .iter()
            .map(|&(ci, co)| 9 * ci * co + co)
            .sum();
        let fc = 2048 * 1024 + 1024 + 1024 * 10 + 10;
        assert_eq!(p, conv + fc);
    }
}
