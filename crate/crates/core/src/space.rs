//! Searchable design space: per-layer DNN choices plus crossbar hardware
//! hyperparameters, candidate validation, and exhaustive enumeration for
//! oracle-scale spaces.

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// Cap on exhaustive enumeration unless the caller overrides it.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Options for one convolution-layer slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerChoice {
    /// Output-channel counts, strictly increasing.
    pub channel_options: Vec<usize>,
    /// Square kernel edge lengths, strictly increasing, all odd so that
    /// same-padding convolution stays shape-preserving.
    pub kernel_options: Vec<usize>,
}

/// Options for the hardware slot plus the area budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareChoice {
    /// Crossbar array sizes (rows = cols).
    pub crossbar_sizes: Vec<usize>,
    /// ADC resolutions in bits.
    pub adc_resolutions: Vec<u32>,
    /// NVM cell precisions in bits per cell.
    pub device_precisions: Vec<u32>,
    /// Chip area budget in um^2. Designs above it score -1.
    pub area_budget: f64,
}

/// Fixed network skeleton the rollout fills in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Backbone {
    pub num_conv_layers: usize,
    pub num_fc_layers: usize,
    pub fc_hidden_size: usize,
    /// (height, width, channels)
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
    /// 0-indexed conv layers followed by a 2x2 max pool.
    pub pool_after: BTreeSet<usize>,
}

impl Backbone {
    /// Spatial size (height, width) after all pooling.
    pub fn final_spatial(&self) -> (usize, usize) {
        let (mut h, mut w, _) = self.input_shape;
        for i in 0..self.num_conv_layers {
            if self.pool_after.contains(&i) {
                h /= 2;
                w /= 2;
            }
        }
        (h, w)
    }
}

/// One selected (out_channels, kernel) pair. Serializes as `[channels, kernel]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct LayerPick {
    pub channels: usize,
    pub kernel: usize,
}

impl From<(usize, usize)> for LayerPick {
    fn from((channels, kernel): (usize, usize)) -> Self {
        Self { channels, kernel }
    }
}

impl From<LayerPick> for (usize, usize) {
    fn from(p: LayerPick) -> Self {
        (p.channels, p.kernel)
    }
}

/// Selected hardware hyperparameters. Serializes as
/// `[crossbar_size, adc_resolution, device_precision]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, u32, u32)", into = "(usize, u32, u32)")]
pub struct HardwarePick {
    pub crossbar_size: usize,
    pub adc_resolution: u32,
    pub device_precision: u32,
}

impl From<(usize, u32, u32)> for HardwarePick {
    fn from((crossbar_size, adc_resolution, device_precision): (usize, u32, u32)) -> Self {
        Self {
            crossbar_size,
            adc_resolution,
            device_precision,
        }
    }
}

impl From<HardwarePick> for (usize, u32, u32) {
    fn from(p: HardwarePick) -> Self {
        (p.crossbar_size, p.adc_resolution, p.device_precision)
    }
}

/// One design candidate: per-layer picks plus hardware hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rollout {
    pub layers: Vec<LayerPick>,
    pub hardware: HardwarePick,
}

impl Rollout {
    /// Canonical bracket form, e.g.
    /// `[[32,3],[32,3],[64,3],[64,3],[128,3],[128,3],[128,6,2]]`.
    /// This is the wire format used in prompts and LLM responses.
    pub fn to_bracket_string(&self) -> String {
        let mut s = String::from("[");
        for (i, p) in self.layers.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&format!("[{},{}]", p.channels, p.kernel));
        }
        if !self.layers.is_empty() {
            s.push(',');
        }
        s.push_str(&format!(
            "[{},{},{}]",
            self.hardware.crossbar_size, self.hardware.adc_resolution, self.hardware.device_precision
        ));
        s.push(']');
        s
    }
}

impl fmt::Display for Rollout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_bracket_string())
    }
}

/// The full searchable space: one [`LayerChoice`] per conv layer, the hardware
/// options, and the fixed backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub layers: Vec<LayerChoice>,
    pub hardware: HardwareChoice,
    pub backbone: Backbone,
}

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("space is malformed: {0}")]
    Malformed(String),
    #[error("space has {size} rollouts, over the enumeration cap {cap}")]
    CapExceeded { size: u128, cap: u128 },
}

/// One reason a rollout is not a member of the space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    LayerCountMismatch {
        expected: usize,
        got: usize,
    },
    ChannelsNotInOptions {
        layer: usize,
        value: usize,
        allowed: Vec<usize>,
    },
    KernelNotInOptions {
        layer: usize,
        value: usize,
        allowed: Vec<usize>,
    },
    KernelNotOdd {
        layer: usize,
        value: usize,
    },
    CrossbarNotInOptions {
        value: usize,
        allowed: Vec<usize>,
    },
    AdcNotInOptions {
        value: u32,
        allowed: Vec<u32>,
    },
    PrecisionNotInOptions {
        value: u32,
        allowed: Vec<u32>,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LayerCountMismatch { expected, got } => {
                write!(f, "rollout has {got} layer pairs, backbone expects {expected}")
            }
            Violation::ChannelsNotInOptions { layer, value, allowed } => {
                write!(f, "layer {layer}: channels {value} not in {allowed:?}")
            }
            Violation::KernelNotInOptions { layer, value, allowed } => {
                write!(f, "layer {layer}: kernel {value} not in {allowed:?}")
            }
            Violation::KernelNotOdd { layer, value } => {
                write!(f, "layer {layer}: kernel {value} is not odd")
            }
            Violation::CrossbarNotInOptions { value, allowed } => {
                write!(f, "crossbar size {value} not in {allowed:?}")
            }
            Violation::AdcNotInOptions { value, allowed } => {
                write!(f, "adc resolution {value} not in {allowed:?}")
            }
            Violation::PrecisionNotInOptions { value, allowed } => {
                write!(f, "device precision {value} not in {allowed:?}")
            }
        }
    }
}

/// Advisory flags for design choices the optimizer should usually avoid.
/// Never blocks evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LintFlag {
    /// Layer shrinks its channel count below its input channels.
    ChannelShrink {
        layer: usize,
        in_channels: usize,
        out_channels: usize,
    },
    /// Layer grows its channel count by more than 4x.
    ChannelGrowthOver4x {
        layer: usize,
        in_channels: usize,
        out_channels: usize,
    },
    /// Adjacent layers jump between the extreme kernel sizes (1 <-> 7).
    DegenerateKernelPair {
        layer: usize,
        prev_kernel: usize,
        kernel: usize,
    },
    /// The optimizer response omitted the hardware triple and the space
    /// default was substituted.
    HardwareDefaulted,
}

fn check_options_usize(name: &str, opts: &[usize]) -> Result<(), SpaceError> {
    if opts.is_empty() {
        return Err(SpaceError::Malformed(format!("{name} options empty")));
    }
    if opts.iter().any(|&v| v < 1) {
        return Err(SpaceError::Malformed(format!("{name} options must be >= 1")));
    }
    if opts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SpaceError::Malformed(format!(
            "{name} options must be strictly increasing"
        )));
    }
    Ok(())
}

fn check_options_u32(name: &str, opts: &[u32]) -> Result<(), SpaceError> {
    if opts.is_empty() {
        return Err(SpaceError::Malformed(format!("{name} options empty")));
    }
    if opts.iter().any(|&v| v < 1) {
        return Err(SpaceError::Malformed(format!("{name} options must be >= 1")));
    }
    if opts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SpaceError::Malformed(format!(
            "{name} options must be strictly increasing"
        )));
    }
    Ok(())
}

impl DesignSpace {
    /// Checks the structural invariants: non-empty strictly increasing option
    /// lists, odd kernels, one layer slot per backbone conv layer, and a
    /// backbone whose spatial size survives all pooling.
    pub fn check(&self) -> Result<(), SpaceError> {
        if self.layers.len() != self.backbone.num_conv_layers {
            return Err(SpaceError::Malformed(format!(
                "{} layer slots for a {}-conv backbone",
                self.layers.len(),
                self.backbone.num_conv_layers
            )));
        }
        for (i, lc) in self.layers.iter().enumerate() {
            check_options_usize(&format!("layer {i} channel"), &lc.channel_options)?;
            check_options_usize(&format!("layer {i} kernel"), &lc.kernel_options)?;
            if lc.kernel_options.iter().any(|&k| k % 2 == 0) {
                return Err(SpaceError::Malformed(format!(
                    "layer {i} kernel options must be odd"
                )));
            }
        }
        check_options_usize("crossbar size", &self.hardware.crossbar_sizes)?;
        check_options_u32("adc resolution", &self.hardware.adc_resolutions)?;
        check_options_u32("device precision", &self.hardware.device_precisions)?;
        if !(self.hardware.area_budget > 0.0) {
            return Err(SpaceError::Malformed("area budget must be > 0".into()));
        }
        if self.backbone.num_conv_layers == 0 || self.backbone.num_fc_layers == 0 {
            return Err(SpaceError::Malformed(
                "backbone needs at least one conv and one fc layer".into(),
            ));
        }
        if self.backbone.fc_hidden_size == 0 || self.backbone.num_classes == 0 {
            return Err(SpaceError::Malformed(
                "fc hidden size and class count must be positive".into(),
            ));
        }
        let (h, w, c) = self.backbone.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(SpaceError::Malformed("input shape must be positive".into()));
        }
        if self.backbone.pool_after.iter().any(|&i| i >= self.backbone.num_conv_layers) {
            return Err(SpaceError::Malformed("pool_after index out of range".into()));
        }
        let (fh, fw) = self.backbone.final_spatial();
        if fh == 0 || fw == 0 {
            return Err(SpaceError::Malformed(
                "pooling collapses the spatial size to zero".into(),
            ));
        }
        Ok(())
    }

    /// Number of rollouts in the space.
    pub fn size(&self) -> u128 {
        let mut n: u128 = 1;
        for lc in &self.layers {
            n = n
                .saturating_mul(lc.channel_options.len() as u128)
                .saturating_mul(lc.kernel_options.len() as u128);
        }
        n.saturating_mul(self.hardware.crossbar_sizes.len() as u128)
            .saturating_mul(self.hardware.adc_resolutions.len() as u128)
            .saturating_mul(self.hardware.device_precisions.len() as u128)
    }

    /// Membership check. `Ok(())` iff every entry is drawn from its option
    /// list and the layer count matches the backbone; otherwise the full list
    /// of violations.
    pub fn validate(&self, rollout: &Rollout) -> Result<(), Vec<Violation>> {
        let mut violations = Vec::new();
        if rollout.layers.len() != self.layers.len() {
            violations.push(Violation::LayerCountMismatch {
                expected: self.layers.len(),
                got: rollout.layers.len(),
            });
        }
        for (i, (pick, choice)) in rollout.layers.iter().zip(&self.layers).enumerate() {
            if !choice.channel_options.contains(&pick.channels) {
                violations.push(Violation::ChannelsNotInOptions {
                    layer: i,
                    value: pick.channels,
                    allowed: choice.channel_options.clone(),
                });
            }
            if pick.kernel % 2 == 0 {
                violations.push(Violation::KernelNotOdd {
                    layer: i,
                    value: pick.kernel,
                });
            } else if !choice.kernel_options.contains(&pick.kernel) {
                violations.push(Violation::KernelNotInOptions {
                    layer: i,
                    value: pick.kernel,
                    allowed: choice.kernel_options.clone(),
                });
            }
        }
        let hw = &rollout.hardware;
        if !self.hardware.crossbar_sizes.contains(&hw.crossbar_size) {
            violations.push(Violation::CrossbarNotInOptions {
                value: hw.crossbar_size,
                allowed: self.hardware.crossbar_sizes.clone(),
            });
        }
        if !self.hardware.adc_resolutions.contains(&hw.adc_resolution) {
            violations.push(Violation::AdcNotInOptions {
                value: hw.adc_resolution,
                allowed: self.hardware.adc_resolutions.clone(),
            });
        }
        if !self.hardware.device_precisions.contains(&hw.device_precision) {
            violations.push(Violation::PrecisionNotInOptions {
                value: hw.device_precision,
                allowed: self.hardware.device_precisions.clone(),
            });
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// The rollout made of the first entry of every option list. Used as the
    /// substitute when an optimizer response omits the hardware triple.
    pub fn first_rollout(&self) -> Rollout {
        Rollout {
            layers: self
                .layers
                .iter()
                .map(|lc| LayerPick {
                    channels: lc.channel_options[0],
                    kernel: lc.kernel_options[0],
                })
                .collect(),
            hardware: self.default_hardware(),
        }
    }

    /// First option of each hardware list.
    pub fn default_hardware(&self) -> HardwarePick {
        HardwarePick {
            crossbar_size: self.hardware.crossbar_sizes[0],
            adc_resolution: self.hardware.adc_resolutions[0],
            device_precision: self.hardware.device_precisions[0],
        }
    }

    /// Yields every rollout exactly once, in lexicographic order of option
    /// indices (layer 0 channel index most significant, device precision
    /// least). Errors if the space size exceeds `cap`.
    pub fn enumerate(
        &self,
        cap: u128,
    ) -> Result<impl Iterator<Item = Rollout> + '_, SpaceError> {
        self.check()?;
        let size = self.size();
        if size > cap {
            return Err(SpaceError::CapExceeded { size, cap });
        }
        let mut dims: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len() * 2 + 3);
        for lc in &self.layers {
            dims.push((0..lc.channel_options.len()).collect());
            dims.push((0..lc.kernel_options.len()).collect());
        }
        dims.push((0..self.hardware.crossbar_sizes.len()).collect());
        dims.push((0..self.hardware.adc_resolutions.len()).collect());
        dims.push((0..self.hardware.device_precisions.len()).collect());

        let iter = dims
            .into_iter()
            .multi_cartesian_product()
            .map(move |idx| self.rollout_from_indices(&idx));
        Ok(iter)
    }

    fn rollout_from_indices(&self, idx: &[usize]) -> Rollout {
        let n = self.layers.len();
        let layers = (0..n)
            .map(|i| LayerPick {
                channels: self.layers[i].channel_options[idx[2 * i]],
                kernel: self.layers[i].kernel_options[idx[2 * i + 1]],
            })
            .collect();
        Rollout {
            layers,
            hardware: HardwarePick {
                crossbar_size: self.hardware.crossbar_sizes[idx[2 * n]],
                adc_resolution: self.hardware.adc_resolutions[idx[2 * n + 1]],
                device_precision: self.hardware.device_precisions[idx[2 * n + 2]],
            },
        }
    }

    /// Advisory lints: (a) a layer shrinking channels below its input,
    /// (b) channel growth beyond 4x, (c) adjacent-layer kernel jumps between
    /// the extremes (1 <-> 7). Input channels chain from the backbone input.
    pub fn heuristic_lints(&self, rollout: &Rollout) -> Vec<LintFlag> {
        let mut flags = Vec::new();
        let mut in_channels = self.backbone.input_shape.2;
        let mut prev_kernel: Option<usize> = None;
        for (i, pick) in rollout.layers.iter().enumerate() {
            if pick.channels < in_channels {
                flags.push(LintFlag::ChannelShrink {
                    layer: i,
                    in_channels,
                    out_channels: pick.channels,
                });
            }
            if pick.channels > 4 * in_channels {
                flags.push(LintFlag::ChannelGrowthOver4x {
                    layer: i,
                    in_channels,
                    out_channels: pick.channels,
                });
            }
            if let Some(pk) = prev_kernel {
                if pk.abs_diff(pick.kernel) >= 6 {
                    flags.push(LintFlag::DegenerateKernelPair {
                        layer: i,
                        prev_kernel: pk,
                        kernel: pick.kernel,
                    });
                }
            }
            in_channels = pick.channels;
            prev_kernel = Some(pick.kernel);
        }
        flags
    }
}

/// The six-conv backbone used throughout the experiments: 32x32x3 input,
/// channel options {16,32,64,128} and kernel options {1,3,5,7} per layer,
/// 2x2 pooling after conv layers 2/4/6, two fully connected layers with a
/// 1024-wide hidden, and the NACIM-style hardware options.
pub fn default_space(area_budget: f64) -> DesignSpace {
    let layer = LayerChoice {
        channel_options: vec![16, 32, 64, 128],
        kernel_options: vec![1, 3, 5, 7],
    };
    DesignSpace {
        layers: vec![layer; 6],
        hardware: HardwareChoice {
            crossbar_sizes: vec![64, 128, 256],
            adc_resolutions: vec![4, 6, 8],
            device_precisions: vec![1, 2, 4],
            area_budget,
        },
        backbone: Backbone {
            num_conv_layers: 6,
            num_fc_layers: 2,
            fc_hidden_size: 1024,
            input_shape: (32, 32, 3),
            num_classes: 10,
            pool_after: BTreeSet::from([1, 3, 5]),
        },
    }
}

/// The paper's example rollout `[[32,3],[32,3],[64,3],[64,3],[128,3],[128,3]]`
/// with mid-range hardware, used in tests and docs.
pub fn example_rollout() -> Rollout {
    Rollout {
        layers: vec![
            LayerPick { channels: 32, kernel: 3 },
            LayerPick { channels: 32, kernel: 3 },
            LayerPick { channels: 64, kernel: 3 },
            LayerPick { channels: 64, kernel: 3 },
            LayerPick { channels: 128, kernel: 3 },
            LayerPick { channels: 128, kernel: 3 },
        ],
        hardware: HardwarePick {
            crossbar_size: 128,
            adc_resolution: 6,
            device_precision: 2,
        },
    }
}
