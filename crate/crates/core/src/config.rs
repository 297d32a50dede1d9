//! Declarative run configuration: one TOML file describes the design space,
//! backbone, cost constants, evaluator, reward, and optimizer for a run.
//! The LLM credential is the only thing that never lives in the file; it is
//! read from the environment variable named by `llm.credential_env`.

use crate::cost::{cost_rollout, UnitCosts, DEFAULT_WEIGHT_BITS};
use crate::nn::SyntheticSpec;
use crate::search::{RewardKind, RewardSpec};
use crate::space::{Backbone, DesignSpace, HardwareChoice, LayerChoice, Rollout};
use crate::surrogate::SurrogateCoefficients;
use crate::Real;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot render config: {0}")]
    Render(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    /// Channel options shared by every conv layer slot.
    pub channel_options: Vec<usize>,
    /// Kernel options shared by every conv layer slot (odd values).
    pub kernel_options: Vec<usize>,
    pub crossbar_sizes: Vec<usize>,
    pub adc_resolutions: Vec<u32>,
    pub device_precisions: Vec<u32>,
    /// um^2. Omit to use 1.2x the area of the largest rollout on a 128-sized
    /// crossbar at the finest device precision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_budget_um2: Option<f64>,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            channel_options: vec![16, 32, 64, 128],
            kernel_options: vec![1, 3, 5, 7],
            crossbar_sizes: vec![64, 128, 256],
            adc_resolutions: vec![4, 6, 8],
            device_precisions: vec![1, 2, 4],
            area_budget_um2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub num_conv_layers: usize,
    pub num_fc_layers: usize,
    pub fc_hidden_size: usize,
    /// [height, width, channels]
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    /// 0-indexed conv layers followed by a 2x2 max pool.
    pub pool_after: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            num_conv_layers: 6,
            num_fc_layers: 2,
            fc_hidden_size: 1024,
            input_shape: [32, 32, 3],
            num_classes: 10,
            pool_after: vec![1, 3, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub read_energy_per_cell_pj: f64,
    pub adc_energy_per_conversion_pj: f64,
    pub cycle_time_ns: f64,
    pub cell_area_um2: f64,
    pub adc_area_um2: f64,
    pub weight_bits: u32,
}

impl Default for CostConfig {
    fn default() -> Self {
        let u = UnitCosts::<Real>::default();
        CostConfig {
            read_energy_per_cell_pj: u.read_energy_per_cell,
            adc_energy_per_conversion_pj: u.adc_energy_per_conversion,
            cycle_time_ns: u.cycle_time,
            cell_area_um2: u.cell_area,
            adc_area_um2: u.adc_area,
            weight_bits: DEFAULT_WEIGHT_BITS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Relative std of the multiplicative weight perturbation. A stand-in
    /// value; the papers this models defer the magnitude to device data.
    pub sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { sigma: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub mc_samples: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 32,
            mc_samples: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetConfig {
    /// Procedurally generated shapes/textures task.
    Synthetic {
        image_size: usize,
        num_classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        pixel_noise: f64,
        seed: u64,
    },
    /// Subset of a CIFAR-10 binary batch file.
    Cifar10Subset {
        path: PathBuf,
        max_train: usize,
        max_test: usize,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            image_size: 12,
            num_classes: 4,
            train_per_class: 64,
            test_per_class: 64,
            pixel_noise: 0.25,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    LlmFull,
    LlmNaive,
    Random,
    Evolutionary,
    HeuristicOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvaluatorKind {
    Trained,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub optimizer: OptimizerKind,
    pub evaluator: EvaluatorKind,
    pub episodes: usize,
    pub seed: u64,
    pub history_cap: usize,
    /// Tournament size of the evolutionary baseline.
    pub tournament: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            optimizer: OptimizerKind::Random,
            evaluator: EvaluatorKind::Surrogate,
            episodes: 20,
            seed: 42,
            history_cap: crate::prompt::DEFAULT_HISTORY_CAP,
            tournament: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    /// Chat-completions URL, or the literal `mock` for the deterministic
    /// offline backend.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
    /// Environment variable holding the bearer credential. Never stored in
    /// config, history, or transcripts.
    pub credential_env: String,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "mock".into(),
            model: "gpt-4".into(),
            temperature: 0.0,
            max_tokens: 512,
            max_retries: 3,
            credential_env: "CIMNAS_API_KEY".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub struct RewardConfig {
    /// `accuracy_energy`, `accuracy_latency`, or `custom`.
    pub kind: String,
    pub energy_norm_pj: f64,
    pub fps_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_weight: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            kind: "accuracy_energy".into(),
            energy_norm_pj: 8e7,
            fps_norm: 1600.0,
            energy_weight: None,
            latency_weight: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Defaults to `<directory>/transcript.jsonl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: PathBuf::from("runs/out"),
            transcript: None,
        }
    }
}

/// The whole run configuration. Every section has defaults, so a minimal
/// config file can be empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub space: SpaceConfig,
    pub backbone: BackboneConfig,
    pub cost: CostConfig,
    pub noise: NoiseConfig,
    pub training: TrainingConfig,
    pub dataset: DatasetConfig,
    pub reward: RewardConfig,
    pub search: SearchConfig,
    pub llm: LlmConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        let config: RunConfig = toml::from_str(text)?;
        config.check()?;
        Ok(config)
    }

    /// Renders the full configuration; `load(render(c)) == c`.
    pub fn render(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.search.episodes == 0 {
            return Err(ConfigError::Invalid("search.episodes must be >= 1".into()));
        }
        if !(self.noise.sigma >= 0.0) {
            return Err(ConfigError::Invalid("noise.sigma must be >= 0".into()));
        }
        self.reward_spec()?;
        self.design_space()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn backbone(&self) -> Backbone {
        let [h, w, c] = self.backbone.input_shape;
        Backbone {
            num_conv_layers: self.backbone.num_conv_layers,
            num_fc_layers: self.backbone.num_fc_layers,
            fc_hidden_size: self.backbone.fc_hidden_size,
            input_shape: (h, w, c),
            num_classes: self.backbone.num_classes,
            pool_after: BTreeSet::from_iter(self.backbone.pool_after.iter().copied()),
        }
    }

    pub fn unit_costs(&self) -> UnitCosts<Real> {
        UnitCosts {
            read_energy_per_cell: self.cost.read_energy_per_cell_pj,
            adc_energy_per_conversion: self.cost.adc_energy_per_conversion_pj,
            cycle_time: self.cost.cycle_time_ns,
            cell_area: self.cost.cell_area_um2,
            adc_area: self.cost.adc_area_um2,
        }
    }

    /// The space with the area budget resolved (explicit value, or 1.2x the
    /// area of the all-max rollout on a 128-sized crossbar at the finest
    /// device precision, so that invalid designs are reachable but rare).
    pub fn design_space(&self) -> Result<DesignSpace, crate::space::SpaceError> {
        let backbone = self.backbone();
        let layer = LayerChoice {
            channel_options: self.space.channel_options.clone(),
            kernel_options: self.space.kernel_options.clone(),
        };
        let mut space = DesignSpace {
            layers: vec![layer; backbone.num_conv_layers],
            hardware: HardwareChoice {
                crossbar_sizes: self.space.crossbar_sizes.clone(),
                adc_resolutions: self.space.adc_resolutions.clone(),
                device_precisions: self.space.device_precisions.clone(),
                area_budget: 1.0,
            },
            backbone,
        };
        space.hardware.area_budget = match self.space.area_budget_um2 {
            Some(v) => v,
            None => default_area_budget(&space, self.cost.weight_bits, self.unit_costs()),
        };
        space.check()?;
        Ok(space)
    }

    pub fn reward_spec(&self) -> Result<RewardSpec, ConfigError> {
        let kind = match self.reward.kind.as_str() {
            "accuracy_energy" => RewardKind::AccuracyEnergy,
            "accuracy_latency" => RewardKind::AccuracyLatency,
            "custom" => RewardKind::Custom {
                energy_weight: self.reward.energy_weight.unwrap_or(1.0),
                latency_weight: self.reward.latency_weight.unwrap_or(0.0),
            },
            other => {
                return Err(ConfigError::Invalid(format!(
                    "reward.kind `{other}` (expected accuracy_energy, accuracy_latency, or custom)"
                )))
            }
        };
        if !(self.reward.energy_norm_pj > 0.0) || !(self.reward.fps_norm > 0.0) {
            return Err(ConfigError::Invalid("reward norms must be > 0".into()));
        }
        Ok(RewardSpec {
            kind,
            energy_norm_pj: self.reward.energy_norm_pj,
            fps_norm: self.reward.fps_norm,
        })
    }

    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match &self.dataset {
            DatasetConfig::Synthetic {
                image_size,
                num_classes,
                train_per_class,
                test_per_class,
                pixel_noise,
                seed,
            } => Some(SyntheticSpec {
                image_size: *image_size,
                channels: self.backbone.input_shape[2],
                num_classes: *num_classes,
                train_per_class: *train_per_class,
                test_per_class: *test_per_class,
                pixel_noise: *pixel_noise,
                seed: *seed,
            }),
            _ => None,
        }
    }

    pub fn surrogate_coefficients(&self) -> SurrogateCoefficients {
        SurrogateCoefficients::default()
    }

    pub fn transcript_path(&self) -> PathBuf {
        self.output
            .transcript
            .clone()
            .unwrap_or_else(|| self.output.directory.join("transcript.jsonl"))
    }
}

/// 1.2x the area of the all-max rollout mapped on a 128-sized crossbar (or
/// the closest available size) at the finest device precision and the
/// largest ADC. Makes the -1 path reachable without dominating the space.
pub fn default_area_budget(space: &DesignSpace, weight_bits: u32, unit_costs: UnitCosts<Real>) -> f64 {
    let crossbar = space
        .hardware
        .crossbar_sizes
        .iter()
        .copied()
        .min_by_key(|&r| r.abs_diff(128))
        .unwrap_or(128);
    let max_rollout = Rollout {
        layers: space
            .layers
            .iter()
            .map(|lc| crate::space::LayerPick {
                channels: *lc.channel_options.last().expect("non-empty options"),
                kernel: *lc.kernel_options.last().expect("non-empty options"),
            })
            .collect(),
        hardware: crate::space::HardwarePick {
            crossbar_size: crossbar,
            adc_resolution: *space.hardware.adc_resolutions.last().expect("non-empty"),
            device_precision: *space.hardware.device_precisions.first().expect("non-empty"),
        },
    };
    match cost_rollout(&max_rollout, &space.backbone, weight_bits, unit_costs, f64::INFINITY) {
        Ok(report) => report.area * 1.2,
        Err(_) => 1e12,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_pass_validation() {
        let config = RunConfig::default();
        config.check().unwrap();
        let space = config.design_space().unwrap();
        assert_eq!(space.layers.len(), 6);
        assert!(space.hardware.area_budget > 0.0);
    }

    #[test]
    fn render_load_round_trip() {
        let config = RunConfig::default();
        let text = config.render().unwrap();
        let loaded = RunConfig::from_toml(&text).unwrap();
        assert_eq!(loaded, config);
    }

    #[test]
    fn round_trip_preserves_non_defaults() {
        let mut config = RunConfig::default();
        config.search.optimizer = OptimizerKind::LlmFull;
        config.search.episodes = 7;
        config.space.area_budget_um2 = Some(3.5e8);
        config.reward.kind = "accuracy_latency".into();
        config.dataset = DatasetConfig::Cifar10Subset {
            path: PathBuf::from("/data/batch_1.bin"),
            max_train: 500,
            max_test: 200,
        };
        let text = config.render().unwrap();
        let loaded = RunConfig::from_toml(&text).unwrap();
        assert_eq!(loaded, config);
    }

    #[test]
    fn empty_file_is_the_default_config() {
        let loaded = RunConfig::from_toml("").unwrap();
        assert_eq!(loaded, RunConfig::default());
    }

    #[test]
    fn zero_episodes_is_invalid() {
        let mut config = RunConfig::default();
        config.search.episodes = 0;
        assert!(matches!(config.check(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[search]\nepisodes = 5\nunknown_knob = 3\n");
        assert!(err.is_err());
    }

    #[test]
    fn bad_reward_kind_is_rejected() {
        let mut config = RunConfig::default();
        config.reward.kind = "speed".into();
        assert!(config.check().is_err());
    }

    #[test]
    fn default_budget_admits_default_rollouts_but_not_everything() {
        let config = RunConfig::default();
        let space = config.design_space().unwrap();
        // The paper example fits comfortably.
        let report = cost_rollout(
            &crate::space::example_rollout(),
            &space.backbone,
            config.cost.weight_bits,
            config.unit_costs(),
            space.hardware.area_budget,
        )
        .unwrap();
        assert!(report.valid);
        // The all-max rollout at the smallest crossbar with 8 cells/weight
        // exceeds it (more tiles than the 128-crossbar reference mapping).
        let mut big = crate::space::example_rollout();
        for p in &mut big.layers {
            p.channels = 128;
            p.kernel = 7;
        }
        big.hardware.crossbar_size = 64;
        big.hardware.device_precision = 1;
        let report = cost_rollout(
            &big,
            &space.backbone,
            config.cost.weight_bits,
            config.unit_costs(),
            space.hardware.area_budget,
        )
        .unwrap();
        assert!(!report.valid, "expected the giant design to blow the budget");
    }

    #[test]
    fn credential_never_appears_in_render() {
        let config = RunConfig::default();
        let text = config.render().unwrap();
        assert!(text.contains("credential_env"));
        assert!(!text.to_lowercase().contains("api_key =") || text.contains("CIMNAS_API_KEY"));
    }
}
