//! Cold-start benchmark: how many episodes an optimizer needs to reach
//! within a fraction of the exhaustive optimum on a fully enumerable
//! surrogate space. Compares the heuristic-informed proposer against uniform
//! random sampling over many seeds; the informed arm reaching the target in a
//! fifth of the episodes is the mechanism behind the headline speedup of
//! knowledge-driven search.

use super::optimizer::{HeuristicOracleProposer, Proposer, RandomProposer};
use super::{EvalRecord, Evaluator, RewardSpec, SearchError, SearchSetup, SurrogateEvaluator};
use crate::cost::{cost, network_shapes, HardwareConfig, UnitCosts};
use crate::space::{Backbone, DesignSpace, HardwareChoice, LayerChoice, Rollout};
use crate::surrogate::SurrogateCoefficients;
use serde::Serialize;
use std::collections::BTreeSet;
use std::collections::HashMap;

/// Bench parameters. `within_fraction` is relative to |optimum|.
#[derive(Debug, Clone, Copy)]
pub struct ColdstartConfig {
    pub seeds: u64,
    pub max_episodes: usize,
    pub within_fraction: f64,
}

impl Default for ColdstartConfig {
    fn default() -> Self {
        ColdstartConfig {
            seeds: 20,
            max_episodes: 2000,
            within_fraction: 0.02,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ColdstartResult {
    pub space_size: u128,
    pub optimum_reward: f64,
    pub threshold: f64,
    /// Designs at or above the threshold.
    pub target_count: usize,
    pub heuristic_episodes: Vec<usize>,
    pub random_episodes: Vec<usize>,
    pub heuristic_median: f64,
    pub random_median: f64,
    /// `heuristic_median <= random_median / 5`
    pub passes_5x: bool,
}

/// The enumerable space the shipped benchmark runs on: 4 conv layers over a
/// 16x16x4 input, 3 channel x 2 kernel options per layer, two crossbar
/// sizes; 2592 designs in total. Input channels are wide enough that
/// lint-free rollouts exist from layer 0.
pub fn default_bench_space() -> DesignSpace {
    let layer = LayerChoice {
        channel_options: vec![16, 32, 64],
        kernel_options: vec![3, 5],
    };
    DesignSpace {
        layers: vec![layer; 4],
        hardware: HardwareChoice {
            crossbar_sizes: vec![64, 128],
            adc_resolutions: vec![6],
            device_precisions: vec![2],
            area_budget: 1e12,
        },
        backbone: Backbone {
            num_conv_layers: 4,
            num_fc_layers: 2,
            fc_hidden_size: 64,
            input_shape: (16, 16, 4),
            num_classes: 10,
            pool_after: BTreeSet::from([1, 3]),
        },
    }
}

/// Reward and noise settings paired with [`default_bench_space`].
pub fn default_bench_setup() -> (SearchSetup, f64, SurrogateCoefficients) {
    let space = default_bench_space();
    let setup = SearchSetup {
        space,
        reward: RewardSpec {
            energy_norm_pj: 2.0e7,
            ..RewardSpec::default()
        },
        episodes: 1,
        weight_bits: 8,
        unit_costs: UnitCosts::default(),
    };
    (setup, 0.2, SurrogateCoefficients::default())
}

fn median(sorted: &mut [usize]) -> f64 {
    sorted.sort_unstable();
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

fn evaluate(
    setup: &SearchSetup,
    evaluator: &mut SurrogateEvaluator,
    cache: &mut HashMap<Rollout, f64>,
    rollout: &Rollout,
) -> Result<f64, SearchError> {
    if let Some(&r) = cache.get(rollout) {
        return Ok(r);
    }
    let accuracy = evaluator.accuracy(rollout)?;
    let hw = HardwareConfig::new(
        rollout.hardware,
        setup.weight_bits,
        setup.unit_costs,
        setup.space.hardware.area_budget,
    );
    let report = cost(&network_shapes(rollout, &setup.space.backbone)?, &hw)?;
    let reward = setup.reward.score(accuracy, &report)?;
    cache.insert(rollout.clone(), reward);
    Ok(reward)
}

/// Exhaustive optimum of the surrogate space: `(best reward, count at or
/// above threshold, threshold)`.
pub fn exhaustive_optimum(
    setup: &SearchSetup,
    sigma: f64,
    coefficients: SurrogateCoefficients,
    within_fraction: f64,
) -> Result<(f64, usize, f64), SearchError> {
    let mut evaluator = SurrogateEvaluator {
        backbone: setup.space.backbone.clone(),
        sigma,
        coefficients,
    };
    let mut cache = HashMap::new();
    let mut rewards = Vec::new();
    for rollout in setup.space.enumerate(crate::space::DEFAULT_ENUMERATION_CAP)? {
        rewards.push(evaluate(setup, &mut evaluator, &mut cache, &rollout)?);
    }
    let best = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = best - within_fraction * best.abs();
    let count = rewards.iter().filter(|&&r| r >= threshold).count();
    Ok((best, count, threshold))
}

/// Episodes (proposals evaluated, duplicates included) until the first reward
/// at or above the threshold; `max_episodes` when censored.
fn episodes_to_threshold(
    proposer: &mut dyn Proposer,
    setup: &SearchSetup,
    evaluator: &mut SurrogateEvaluator,
    threshold: f64,
    max_episodes: usize,
) -> Result<usize, SearchError> {
    let mut history: Vec<EvalRecord> = Vec::new();
    let mut cache = HashMap::new();
    for episode in 0..max_episodes {
        let proposal = proposer.propose(&history, &setup.space)?;
        let reward = evaluate(setup, evaluator, &mut cache, &proposal.rollout)?;
        if reward >= threshold {
            return Ok(episode + 1);
        }
        history.push(EvalRecord {
            episode,
            rollout: proposal.rollout,
            accuracy: 0.0,
            cost: crate::cost::CostReport::empty(true),
            reward,
            optimizer_tag: proposer.tag(),
            fallback: false,
            attempts: proposal.attempts,
            lints: vec![],
        });
    }
    Ok(max_episodes)
}

/// Runs both arms over `cfg.seeds` seeds and reports the medians.
pub fn coldstart_bench(
    setup: &SearchSetup,
    sigma: f64,
    coefficients: SurrogateCoefficients,
    cfg: &ColdstartConfig,
) -> Result<ColdstartResult, SearchError> {
    let (optimum, target_count, threshold) =
        exhaustive_optimum(setup, sigma, coefficients, cfg.within_fraction)?;
    let mut heuristic_episodes = Vec::new();
    let mut random_episodes = Vec::new();
    for seed in 0..cfg.seeds {
        let mut evaluator = SurrogateEvaluator {
            backbone: setup.space.backbone.clone(),
            sigma,
            coefficients,
        };
        let mut heuristic = HeuristicOracleProposer::new(seed);
        heuristic_episodes.push(episodes_to_threshold(
            &mut heuristic,
            setup,
            &mut evaluator,
            threshold,
            cfg.max_episodes,
        )?);
        let mut random = RandomProposer::new(seed);
        random_episodes.push(episodes_to_threshold(
            &mut random,
            setup,
            &mut evaluator,
            threshold,
            cfg.max_episodes,
        )?);
    }
    let heuristic_median = median(&mut heuristic_episodes.clone());
    let random_median = median(&mut random_episodes.clone());
    Ok(ColdstartResult {
        space_size: setup.space.size(),
        optimum_reward: optimum,
        threshold,
        target_count,
        heuristic_episodes,
        random_episodes,
        heuristic_median,
        random_median,
        passes_5x: heuristic_median <= random_median / 5.0,
    })
}
