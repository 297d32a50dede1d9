//! Builds search components from a [`RunConfig`] and drives the runs,
//! writing `history.jsonl`, `summary.json`, `pareto.json`, and `curve.json`
//! into the output directory (plus `transcript.jsonl` for live LLM runs).

use anyhow::{bail, Context};
use cimnas::config::{DatasetConfig, EvaluatorKind, OptimizerKind, RunConfig};
use cimnas::llm::{HttpBackend, LlmBackend, LlmClient, ReplayBackend, ScriptedBackend};
use cimnas::nn::{derive_seed, load_cifar10_batch, synthetic_pair, NoiseModel, TrainOptions};
use cimnas::prompt::parse_response;
use cimnas::search::coldstart::{coldstart_bench as run_bench, ColdstartConfig};
use cimnas::search::{
    best_so_far, load_history, pareto_front, run_search, EvalRecord, EvolutionaryProposer,
    Evaluator, HeuristicOracleProposer, HistoryWriter, LlmProposer, Proposer, RandomProposer,
    SearchSetup, SurrogateEvaluator, TrainedEvaluator,
};
use cimnas::space::DesignSpace;
use serde_json::json;
use std::path::{Path, PathBuf};

struct OutPaths {
    dir: PathBuf,
    history: PathBuf,
    summary: PathBuf,
    pareto: PathBuf,
    curve: PathBuf,
}

impl OutPaths {
    fn new(config: &RunConfig) -> std::io::Result<Self> {
        let dir = config.output.directory.clone();
        std::fs::create_dir_all(&dir)?;
        Ok(OutPaths {
            history: dir.join("history.jsonl"),
            summary: dir.join("summary.json"),
            pareto: dir.join("pareto.json"),
            curve: dir.join("curve.json"),
            dir,
        })
    }
}

fn setup_from(config: &RunConfig) -> anyhow::Result<SearchSetup> {
    Ok(SearchSetup {
        space: config.design_space()?,
        reward: config.reward_spec()?,
        episodes: config.search.episodes,
        weight_bits: config.cost.weight_bits,
        unit_costs: config.unit_costs(),
    })
}

fn build_evaluator(config: &RunConfig) -> anyhow::Result<Box<dyn Evaluator>> {
    match config.search.evaluator {
        EvaluatorKind::Surrogate => Ok(Box::new(SurrogateEvaluator {
            backbone: config.backbone(),
            sigma: config.noise.sigma,
            coefficients: config.surrogate_coefficients(),
        })),
        EvaluatorKind::Trained => {
            let (train_set, test_set) = match &config.dataset {
                DatasetConfig::Synthetic { .. } => {
                    let spec = config.synthetic_spec().expect("synthetic dataset");
                    synthetic_pair(&spec)
                }
                DatasetConfig::Cifar10Subset {
                    path,
                    max_train,
                    max_test,
                } => {
                    let full = load_cifar10_batch(path, max_train + max_test)
                        .with_context(|| format!("loading {}", path.display()))?;
                    split_dataset(full, *max_train)
                }
            };
            Ok(Box::new(TrainedEvaluator {
                backbone: config.backbone(),
                train_set,
                test_set,
                noise: NoiseModel { sigma: config.noise.sigma },
                train_options: TrainOptions {
                    epochs: config.training.epochs,
                    learning_rate: config.training.learning_rate,
                    batch_size: config.training.batch_size,
                },
                mc_samples: config.training.mc_samples,
                seed: derive_seed(config.search.seed, "evaluator"),
            }))
        }
    }
}

fn split_dataset(
    full: cimnas::nn::Dataset<cimnas::Real>,
    max_train: usize,
) -> (cimnas::nn::Dataset<cimnas::Real>, cimnas::nn::Dataset<cimnas::Real>) {
    let n = full.len();
    let cut = max_train.min(n);
    let train_idx: Vec<usize> = (0..cut).collect();
    let test_idx: Vec<usize> = (cut..n).collect();
    let (train_images, train_labels) = full.batch(&train_idx);
    let (test_images, test_labels) = full.batch(&test_idx);
    (
        cimnas::nn::Dataset {
            images: train_images,
            labels: train_labels,
            num_classes: full.num_classes,
        },
        cimnas::nn::Dataset {
            images: test_images,
            labels: test_labels,
            num_classes: full.num_classes,
        },
    )
}

fn build_llm_client(
    config: &RunConfig,
    space: &DesignSpace,
    replay: Option<&Path>,
    persist: bool,
) -> anyhow::Result<LlmClient> {
    let backend: Box<dyn LlmBackend> = match replay {
        Some(path) => Box::new(
            ReplayBackend::from_file(path)
                .with_context(|| format!("loading transcript {}", path.display()))?,
        ),
        None if config.llm.endpoint == "mock" => Box::new(ScriptedBackend::new(
            space.clone(),
            derive_seed(config.search.seed, "scripted-llm"),
        )),
        None => {
            let credential = std::env::var(&config.llm.credential_env).ok();
            Box::new(HttpBackend::new(
                config.llm.endpoint.clone(),
                credential,
                config.llm.max_retries,
            ))
        }
    };
    let client = LlmClient::new(backend);
    if persist && replay.is_none() {
        Ok(client.with_persistence(config.transcript_path())?)
    } else {
        Ok(client)
    }
}

fn build_proposer(
    config: &RunConfig,
    setup: &SearchSetup,
    replay: Option<&Path>,
) -> anyhow::Result<Box<dyn Proposer>> {
    let seed = config.search.seed;
    Ok(match config.search.optimizer {
        OptimizerKind::Random => Box::new(RandomProposer::new(seed)),
        OptimizerKind::Evolutionary => {
            Box::new(EvolutionaryProposer::new(seed, config.search.tournament))
        }
        OptimizerKind::HeuristicOracle => Box::new(HeuristicOracleProposer::new(seed)),
        OptimizerKind::LlmFull | OptimizerKind::LlmNaive => {
            let naive = config.search.optimizer == OptimizerKind::LlmNaive;
            let client = build_llm_client(config, &setup.space, replay, true)?;
            let mut proposer = LlmProposer::new(
                client,
                config.llm.model.clone(),
                naive,
                setup.reward,
                config.search.history_cap,
                seed,
            );
            proposer.temperature = config.llm.temperature;
            proposer.max_tokens = config.llm.max_tokens;
            Box::new(proposer)
        }
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)
}

fn write_reports(
    config: &RunConfig,
    setup: &SearchSetup,
    paths: &OutPaths,
    history: &[EvalRecord],
    best: Option<usize>,
    evaluator_label: &str,
    optimizer_tag: &str,
) -> anyhow::Result<()> {
    let front = pareto_front(history, &setup.reward);
    let curve = best_so_far(history);
    write_json(
        &paths.pareto,
        &json!({
            "schema": "cimnas.pareto.v1",
            "cost_metric": match setup.reward.kind {
                cimnas::search::RewardKind::AccuracyLatency => "latency_ns",
                _ => "energy_pj",
            },
            "indices": front,
            "front": front.iter().map(|&i| &history[i]).collect::<Vec<_>>(),
        }),
    )?;
    write_json(
        &paths.curve,
        &json!({
            "schema": "cimnas.curve.v1",
            "best_so_far": curve,
        }),
    )?;
    write_json(
        &paths.summary,
        &json!({
            "schema": "cimnas.summary.v1",
            "optimizer": optimizer_tag,
            "evaluator": evaluator_label,
            "episodes": history.len(),
            "seed": config.search.seed,
            "best_episode": best,
            "best": best.map(|i| &history[i]),
            "pareto_size": front.len(),
        }),
    )?;
    Ok(())
}

/// `search` and `replay`: run the episode loop, persisting the history after
/// every episode.
pub fn search(config: &RunConfig, replay: Option<PathBuf>, resume: bool) -> anyhow::Result<()> {
    let setup = setup_from(config)?;
    let paths = OutPaths::new(config)?;
    let mut evaluator = build_evaluator(config)?;
    let mut proposer = build_proposer(config, &setup, replay.as_deref())?;
    let (mut writer, existing) = if resume {
        HistoryWriter::resume(&paths.history)?
    } else {
        (HistoryWriter::create(&paths.history)?, Vec::new())
    };
    if existing.len() >= setup.episodes {
        bail!(
            "history already has {} episodes (requested {})",
            existing.len(),
            setup.episodes
        );
    }
    let optimizer_tag = proposer.tag();
    let outcome = run_search(
        &setup,
        proposer.as_mut(),
        evaluator.as_mut(),
        existing,
        |record| writer.append(record),
    )?;
    write_reports(
        config,
        &setup,
        &paths,
        &outcome.history,
        outcome.best,
        evaluator.label(),
        &optimizer_tag,
    )?;
    if let Some(best) = outcome.best {
        let rec = &outcome.history[best];
        println!(
            "best reward {:.4} at episode {} ({})",
            rec.reward,
            rec.episode,
            rec.rollout.to_bracket_string()
        );
    }
    println!("outputs in {}", paths.dir.display());
    Ok(())
}

/// `pareto`: front of an existing history file.
pub fn pareto(config: &RunConfig, history_path: &Path) -> anyhow::Result<()> {
    let setup = setup_from(config)?;
    let paths = OutPaths::new(config)?;
    let history = load_history(history_path)
        .with_context(|| format!("loading {}", history_path.display()))?;
    if history.is_empty() {
        bail!("history {} has no records", history_path.display());
    }
    let front = pareto_front(&history, &setup.reward);
    write_json(
        &paths.pareto,
        &json!({
            "schema": "cimnas.pareto.v1",
            "cost_metric": match setup.reward.kind {
                cimnas::search::RewardKind::AccuracyLatency => "latency_ns",
                _ => "energy_pj",
            },
            "indices": front,
            "front": front.iter().map(|&i| &history[i]).collect::<Vec<_>>(),
        }),
    )?;
    println!(
        "pareto front: {} of {} records -> {}",
        front.len(),
        history.len(),
        paths.pareto.display()
    );
    Ok(())
}

/// `evaluate`: score one rollout for debugging.
pub fn evaluate(config: &RunConfig, rollout_text: &str) -> anyhow::Result<()> {
    let setup = setup_from(config)?;
    let parsed = parse_response(rollout_text, &setup.space)
        .map_err(|e| anyhow::anyhow!("cannot parse rollout: {e}"))?;
    let mut evaluator = build_evaluator(config)?;
    let accuracy = evaluator.accuracy(&parsed.rollout)?;
    let hw = cimnas::cost::HardwareConfig::new(
        parsed.rollout.hardware,
        setup.weight_bits,
        setup.unit_costs,
        setup.space.hardware.area_budget,
    );
    let shapes = cimnas::cost::network_shapes(&parsed.rollout, &setup.space.backbone)?;
    let report = cimnas::cost::cost(&shapes, &hw)?;
    let reward = setup.reward.score(accuracy, &report)?;
    let lints = setup.space.heuristic_lints(&parsed.rollout);
    let out = json!({
        "rollout": parsed.rollout,
        "hardware_defaulted": parsed.hardware_defaulted,
        "evaluator": evaluator.label(),
        "accuracy": accuracy,
        "energy_pj": report.energy,
        "latency_ns": report.latency,
        "area_um2": report.area,
        "valid": report.valid,
        "reward": reward,
        "lints": lints,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

/// `enumerate`: exhaustive surrogate evaluation; the ground-truth table.
pub fn enumerate(config: &RunConfig, cap: u128) -> anyhow::Result<()> {
    let setup = setup_from(config)?;
    let paths = OutPaths::new(config)?;
    let mut evaluator = SurrogateEvaluator {
        backbone: config.backbone(),
        sigma: config.noise.sigma,
        coefficients: config.surrogate_coefficients(),
    };
    let table_path = paths.dir.join("table.jsonl");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&table_path)?);
    use std::io::Write;
    let mut best: Option<(f64, cimnas::space::Rollout)> = None;
    let mut count = 0usize;
    for rollout in setup.space.enumerate(cap)? {
        let accuracy = evaluator.accuracy(&rollout)?;
        let hw = cimnas::cost::HardwareConfig::new(
            rollout.hardware,
            setup.weight_bits,
            setup.unit_costs,
            setup.space.hardware.area_budget,
        );
        let report = cimnas::cost::cost(
            &cimnas::cost::network_shapes(&rollout, &setup.space.backbone)?,
            &hw,
        )?;
        let reward = setup.reward.score(accuracy, &report)?;
        writeln!(
            out,
            "{}",
            serde_json::to_string(&json!({
                "rollout": rollout,
                "accuracy": accuracy,
                "energy_pj": report.energy,
                "latency_ns": report.latency,
                "area_um2": report.area,
                "valid": report.valid,
                "reward": reward,
            }))?
        )?;
        if best.as_ref().map(|(r, _)| reward > *r).unwrap_or(true) {
            best = Some((reward, rollout));
        }
        count += 1;
    }
    out.flush()?;
    let (best_reward, best_rollout) = best.expect("space is non-empty");
    write_json(
        &paths.dir.join("optimum.json"),
        &json!({
            "schema": "cimnas.optimum.v1",
            "designs": count,
            "best_reward": best_reward,
            "best_rollout": best_rollout,
        }),
    )?;
    println!(
        "{count} designs -> {}; optimum reward {best_reward:.4} at {}",
        table_path.display(),
        best_rollout.to_bracket_string()
    );
    Ok(())
}

/// `coldstart-bench`: heuristic-oracle vs random episodes-to-optimum.
pub fn coldstart_bench(
    config: &RunConfig,
    seeds: u64,
    max_episodes: usize,
    within: f64,
) -> anyhow::Result<()> {
    let setup = setup_from(config)?;
    let paths = OutPaths::new(config)?;
    let result = run_bench(
        &setup,
        config.noise.sigma,
        config.surrogate_coefficients(),
        &ColdstartConfig {
            seeds,
            max_episodes,
            within_fraction: within,
        },
    )?;
    write_json(
        &paths.dir.join("coldstart.json"),
        &serde_json::to_value(&result)?,
    )?;
    println!(
        "episodes to within {:.1}% of optimum over {} seeds: heuristic-oracle median {}, random median {} ({}x)",
        within * 100.0,
        seeds,
        result.heuristic_median,
        result.random_median,
        (result.random_median / result.heuristic_median).round()
    );
    println!(
        "speedup >= 5x: {}",
        if result.passes_5x { "yes" } else { "no" }
    );
    Ok(())
}
