//! The co-design episode loop: propose, generate, evaluate accuracy and cost,
//! score, record. Plus the reward functions, evaluators, and history
//! persistence. Optimizers live in [`optimizer`], Pareto analysis in
//! [`pareto`].

pub mod coldstart;
pub mod optimizer;
pub mod pareto;

pub use optimizer::{
    EvolutionaryProposer, HeuristicOracleProposer, LlmProposer, Proposal, Proposer, RandomProposer,
};
pub use pareto::{pareto_front, pareto_front_indices};

use crate::cost::{cost, network_shapes, CostError, CostReport, HardwareConfig, UnitCosts};
use crate::llm::LlmError;
use crate::nn::{
    build_network, mc_accuracy, train_noise_injection, Dataset, EvalError, NoiseModel,
    TrainOptions,
};
use crate::scalar::Scalar;
use crate::space::{DesignSpace, LintFlag, Rollout, SpaceError, Violation};
use crate::surrogate::{surrogate_accuracy_with, SurrogateCoefficients};
use crate::Real;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// Score assigned to any design whose hardware is invalid.
pub const INVALID_SCORE: f64 = -1.0;

/// Accuracy-energy reward: `accuracy - sqrt(energy / energy_norm)`.
pub fn reward_ae<F: Scalar>(accuracy: F, energy_pj: F, energy_norm_pj: F) -> F {
    accuracy - (energy_pj / energy_norm_pj).sqrt()
}

/// Accuracy-latency reward: `accuracy + fps / fps_norm`, where latency is
/// given in ns and FPS is `1 / latency_seconds`.
pub fn reward_al<F: Scalar>(accuracy: F, latency_ns: F, fps_norm: F) -> Result<F, SearchError> {
    if latency_ns <= F::zero() {
        return Err(SearchError::NonpositiveLatency);
    }
    let fps = F::from_f64(1e9) / latency_ns;
    Ok(accuracy + fps / fps_norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RewardKind {
    AccuracyEnergy,
    AccuracyLatency,
    /// Weighted combination: `accuracy - energy_weight * sqrt(E/E_norm)
    /// + latency_weight * fps/fps_norm`.
    Custom {
        energy_weight: f64,
        latency_weight: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    #[serde(flatten)]
    pub kind: RewardKind,
    /// pJ of the reference design (normalizes the energy radical).
    pub energy_norm_pj: f64,
    /// FPS of the reference design (normalizes the throughput bonus).
    pub fps_norm: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            kind: RewardKind::AccuracyEnergy,
            energy_norm_pj: 8e7,
            fps_norm: 1600.0,
        }
    }
}

impl RewardSpec {
    /// -1 exactly for invalid hardware, otherwise the configured reward.
    pub fn score(&self, accuracy: f64, cost: &CostReport<Real>) -> Result<f64, SearchError> {
        if !cost.valid {
            return Ok(INVALID_SCORE);
        }
        match self.kind {
            RewardKind::AccuracyEnergy => Ok(reward_ae(accuracy, cost.energy, self.energy_norm_pj)),
            RewardKind::AccuracyLatency => reward_al(accuracy, cost.latency, self.fps_norm),
            RewardKind::Custom {
                energy_weight,
                latency_weight,
            } => {
                let mut r = accuracy - energy_weight * (cost.energy / self.energy_norm_pj).sqrt();
                if latency_weight != 0.0 {
                    if cost.latency <= 0.0 {
                        return Err(SearchError::NonpositiveLatency);
                    }
                    r += latency_weight * (1e9 / cost.latency) / self.fps_norm;
                }
                Ok(r)
            }
        }
    }

    /// The cost axis paired with accuracy for Pareto analysis.
    pub fn cost_metric(&self, cost: &CostReport<Real>) -> f64 {
        match self.kind {
            RewardKind::AccuracyEnergy => cost.energy,
            RewardKind::AccuracyLatency => cost.latency,
            RewardKind::Custom { .. } => cost.energy,
        }
    }

    /// Normalized performance passed back to the optimizer: raw reward
    /// clipped to [-1, 2], with -1 reserved for invalid designs.
    pub fn normalize(&self, reward: f64) -> f64 {
        reward.clamp(-1.0, 2.0)
    }
}

/// One episode's outcome, as persisted to the history file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub episode: usize,
    pub rollout: Rollout,
    pub accuracy: f64,
    pub cost: CostReport<Real>,
    pub reward: f64,
    pub optimizer_tag: String,
    /// True when the episode fell back to a random rollout after repeated
    /// unusable optimizer responses.
    pub fallback: bool,
    /// Optimizer calls consumed by this episode (re-prompts included).
    pub attempts: u32,
    pub lints: Vec<LintFlag>,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search needs at least one episode")]
    NoEpisodes,
    #[error("latency must be positive")]
    NonpositiveLatency,
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("optimizer proposed a rollout outside the space: {0:?}")]
    InvalidProposal(Vec<Violation>),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("history io: {0}")]
    HistoryIo(#[from] std::io::Error),
    #[error("history file: {0}")]
    History(String),
}

/// Accuracy source for the loop: trained networks or the analytic surrogate.
pub trait Evaluator {
    fn accuracy(&mut self, rollout: &Rollout) -> Result<f64, SearchError>;
    fn label(&self) -> &'static str;
}

/// Analytic proxy evaluator; microseconds per rollout.
pub struct SurrogateEvaluator {
    pub backbone: crate::space::Backbone,
    pub sigma: f64,
    pub coefficients: SurrogateCoefficients,
}

impl Evaluator for SurrogateEvaluator {
    fn accuracy(&mut self, rollout: &Rollout) -> Result<f64, SearchError> {
        Ok(surrogate_accuracy_with(
            rollout,
            &self.backbone,
            self.sigma,
            &self.coefficients,
        ))
    }

    fn label(&self) -> &'static str {
        "surrogate"
    }
}

/// Trains a network per rollout with noise injection and reports the Monte
/// Carlo mean accuracy under device variation. A rollout always maps to the
/// same accuracy for a given evaluator seed, independent of episode order.
pub struct TrainedEvaluator {
    pub backbone: crate::space::Backbone,
    pub train_set: Dataset<Real>,
    pub test_set: Dataset<Real>,
    pub noise: NoiseModel,
    pub train_options: TrainOptions,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Evaluator for TrainedEvaluator {
    fn accuracy(&mut self, rollout: &Rollout) -> Result<f64, SearchError> {
        let tag = rollout.to_bracket_string();
        let net_seed = crate::nn::derive_seed(self.seed, &tag);
        let net = build_network::<Real>(rollout, &self.backbone, net_seed)?;
        let (mut trained, _) =
            train_noise_injection(net, &self.train_set, &self.noise, &self.train_options, net_seed)?;
        let result = mc_accuracy(
            &mut trained,
            &self.test_set,
            &self.noise,
            self.mc_samples,
            net_seed,
        )?;
        Ok(result.mc_mean_accuracy)
    }

    fn label(&self) -> &'static str {
        "trained"
    }
}

/// Everything the loop needs besides the optimizer and evaluator.
#[derive(Debug, Clone)]
pub struct SearchSetup {
    pub space: DesignSpace,
    pub reward: RewardSpec,
    pub episodes: usize,
    pub weight_bits: u32,
    pub unit_costs: UnitCosts<Real>,
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub history: Vec<EvalRecord>,
    /// Index of the argmax-reward record, earliest episode on ties.
    pub best: Option<usize>,
}

/// Index of the argmax-reward record, earliest on ties.
pub fn best_index(history: &[EvalRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, rec) in history.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if rec.reward > history[b].reward => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Running maximum of the reward, one entry per episode.
pub fn best_so_far(history: &[EvalRecord]) -> Vec<f64> {
    let mut out = Vec::with_capacity(history.len());
    let mut best = f64::NEG_INFINITY;
    for rec in history {
        best = best.max(rec.reward);
        out.push(best);
    }
    out
}

/// Runs episodes `resume.len()..episodes`, invoking `on_record` after each
/// one so the history is persisted incrementally. Evaluations are cached per
/// rollout; a re-proposed design reuses its prior accuracy and cost.
pub fn run_search(
    setup: &SearchSetup,
    proposer: &mut dyn Proposer,
    evaluator: &mut dyn Evaluator,
    resume: Vec<EvalRecord>,
    mut on_record: impl FnMut(&EvalRecord) -> std::io::Result<()>,
) -> Result<SearchOutcome, SearchError> {
    if setup.episodes == 0 {
        return Err(SearchError::NoEpisodes);
    }
    setup.space.check()?;
    let mut cache: HashMap<Rollout, (f64, CostReport<Real>)> = HashMap::new();
    let mut history = resume;
    for rec in &history {
        cache.insert(rec.rollout.clone(), (rec.accuracy, rec.cost.clone()));
    }
    for episode in history.len()..setup.episodes {
        let proposal = proposer.propose(&history, &setup.space)?;
        setup
            .space
            .validate(&proposal.rollout)
            .map_err(SearchError::InvalidProposal)?;
        let (accuracy, cost_report) = match cache.get(&proposal.rollout) {
            Some((a, c)) => (*a, c.clone()),
            None => {
                let accuracy = evaluator.accuracy(&proposal.rollout)?;
                let hw = HardwareConfig::new(
                    proposal.rollout.hardware,
                    setup.weight_bits,
                    setup.unit_costs,
                    setup.space.hardware.area_budget,
                );
                let shapes = network_shapes(&proposal.rollout, &setup.space.backbone)?;
                let report = cost(&shapes, &hw)?;
                cache.insert(proposal.rollout.clone(), (accuracy, report.clone()));
                (accuracy, report)
            }
        };
        let reward = setup.reward.score(accuracy, &cost_report)?;
        let mut lints = setup.space.heuristic_lints(&proposal.rollout);
        if proposal.hardware_defaulted {
            lints.push(LintFlag::HardwareDefaulted);
        }
        let record = EvalRecord {
            episode,
            rollout: proposal.rollout,
            accuracy,
            cost: cost_report,
            reward,
            optimizer_tag: proposer.tag(),
            fallback: proposal.fallback,
            attempts: proposal.attempts,
            lints,
        };
        on_record(&record)?;
        history.push(record);
    }
    let best = best_index(&history);
    Ok(SearchOutcome { history, best })
}

pub const HISTORY_SCHEMA: &str = "cimnas.history.v1";

#[derive(Debug, Serialize, Deserialize)]
struct HistoryHeader {
    schema: String,
}

/// Append-only JSONL history writer; one record per line behind a schema
/// header, flushed after every record so crashes lose at most the episode in
/// flight.
pub struct HistoryWriter {
    out: std::io::BufWriter<std::fs::File>,
}

impl HistoryWriter {
    /// Creates (or truncates) the file and writes the header line.
    pub fn create(path: &Path) -> Result<Self, SearchError> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            out,
            "{}",
            serde_json::to_string(&HistoryHeader { schema: HISTORY_SCHEMA.into() })
                .expect("header serializes")
        )?;
        out.flush()?;
        Ok(HistoryWriter { out })
    }

    /// Opens an existing history for appending (validating the header), or
    /// creates it. Returns the records already present alongside the writer,
    /// which is how a crashed run resumes.
    pub fn resume(path: &Path) -> Result<(Self, Vec<EvalRecord>), SearchError> {
        if !path.exists() {
            return Ok((Self::create(path)?, Vec::new()));
        }
        let existing = load_history(path)?;
        let file = std::fs::OpenOptions::new().append(true).open(path)?;
        Ok((
            HistoryWriter {
                out: std::io::BufWriter::new(file),
            },
            existing,
        ))
    }

    pub fn append(&mut self, record: &EvalRecord) -> std::io::Result<()> {
        writeln!(
            self.out,
            "{}",
            serde_json::to_string(record).expect("record serializes")
        )?;
        self.out.flush()
    }
}

/// Loads a history file, validating the schema header.
pub fn load_history(path: &Path) -> Result<Vec<EvalRecord>, SearchError> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(line) => line?,
        None => return Ok(Vec::new()),
    };
    let header: HistoryHeader = serde_json::from_str(&header_line)
        .map_err(|_| SearchError::History(format!("bad header line: {header_line}")))?;
    if header.schema != HISTORY_SCHEMA {
        return Err(SearchError::History(format!(
            "schema {} not supported (expected {HISTORY_SCHEMA})",
            header.schema
        )));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = serde_json::from_str(&line)
            .map_err(|e| SearchError::History(format!("line {}: {e}", i + 2)))?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::default_space;
    use approx::assert_relative_eq;

    #[test]
    fn reward_ae_anchors() {
        assert_relative_eq!(reward_ae(0.8, 8e7, 8e7), -0.2, epsilon = 1e-12);
        assert_relative_eq!(reward_ae(0.7, 0.0, 8e7), 0.7, epsilon = 1e-12);
        assert_relative_eq!(reward_ae(0.9, 2e7, 8e7), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn reward_al_anchors() {
        assert_relative_eq!(reward_al(0.8, 625_000.0, 1600.0).unwrap(), 1.8, epsilon = 1e-12);
        assert_relative_eq!(reward_al(0.8, 1.25e6, 1600.0).unwrap(), 1.3, epsilon = 1e-12);
        assert!(matches!(
            reward_al(0.8, 0.0, 1600.0),
            Err(SearchError::NonpositiveLatency)
        ));
    }

    #[test]
    fn reward_monotonicity() {
        // Strictly decreasing in energy, increasing in accuracy.
        assert!(reward_ae(0.8, 1e7, 8e7) > reward_ae(0.8, 2e7, 8e7));
        assert!(reward_ae(0.9, 1e7, 8e7) > reward_ae(0.8, 1e7, 8e7));
        // Strictly decreasing in latency, increasing in accuracy.
        assert!(reward_al(0.8, 1e5, 1600.0).unwrap() > reward_al(0.8, 2e5, 1600.0).unwrap());
        assert!(reward_al(0.9, 1e5, 1600.0).unwrap() > reward_al(0.8, 1e5, 1600.0).unwrap());
    }

    #[test]
    fn score_is_minus_one_iff_invalid() {
        let spec = RewardSpec::default();
        let mut report = CostReport::<f64>::empty(true);
        report.energy = 1e7;
        report.latency = 1e5;
        assert_ne!(spec.score(0.9, &report).unwrap(), INVALID_SCORE);
        report.valid = false;
        assert_eq!(spec.score(0.9, &report).unwrap(), INVALID_SCORE);
    }

    #[test]
    fn custom_kind_reduces_to_the_pure_kinds() {
        let mut report = CostReport::<f64>::empty(true);
        report.energy = 2e7;
        report.latency = 625_000.0;
        let base = RewardSpec::default();
        let ae = RewardSpec {
            kind: RewardKind::Custom { energy_weight: 1.0, latency_weight: 0.0 },
            ..base
        };
        let al = RewardSpec {
            kind: RewardKind::Custom { energy_weight: 0.0, latency_weight: 1.0 },
            ..base
        };
        assert_relative_eq!(
            ae.score(0.9, &report).unwrap(),
            reward_ae(0.9, 2e7, 8e7),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            al.score(0.9, &report).unwrap(),
            reward_al(0.9, 625_000.0, 1600.0).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn normalize_clips_to_band() {
        let spec = RewardSpec::default();
        assert_eq!(spec.normalize(5.0), 2.0);
        assert_eq!(spec.normalize(-3.0), -1.0);
        assert_eq!(spec.normalize(0.25), 0.25);
    }

    #[test]
    fn history_writer_round_trip_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.jsonl");
        let space = default_space(1e12);
        let rec = EvalRecord {
            episode: 0,
            rollout: crate::space::example_rollout(),
            accuracy: 0.5,
            cost: crate::cost::cost_rollout(
                &crate::space::example_rollout(),
                &space.backbone,
                8,
                UnitCosts::default(),
                1e12,
            )
            .unwrap(),
            reward: 0.25,
            optimizer_tag: "test".into(),
            fallback: false,
            attempts: 1,
            lints: vec![],
        };
        {
            let mut w = HistoryWriter::create(&path).unwrap();
            w.append(&rec).unwrap();
        }
        let loaded = load_history(&path).unwrap();
        assert_eq!(loaded, vec![rec.clone()]);
        // Resume sees the record and appends after it.
        let (mut w, existing) = HistoryWriter::resume(&path).unwrap();
        assert_eq!(existing.len(), 1);
        let mut rec2 = rec;
        rec2.episode = 1;
        w.append(&rec2).unwrap();
        drop(w);
        assert_eq!(load_history(&path).unwrap().len(), 2);
    }
}
