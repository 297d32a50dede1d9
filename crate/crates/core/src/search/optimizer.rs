//! Design proposers: the LLM optimizer (full and naive prompts) and the
//! offline baselines it is compared against.

use super::{EvalRecord, RewardSpec, SearchError};
use crate::llm::{LlmClient, LlmRequest};
use crate::prompt::{build_naive_prompt, build_prompt, parse_response, PromptContext, PromptPair};
use crate::space::{DesignSpace, HardwarePick, LayerPick, Rollout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// A validated design proposal plus provenance for the record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub rollout: Rollout,
    pub fallback: bool,
    pub attempts: u32,
    pub hardware_defaulted: bool,
}

impl Proposal {
    fn clean(rollout: Rollout) -> Self {
        Proposal {
            rollout,
            fallback: false,
            attempts: 1,
            hardware_defaulted: false,
        }
    }
}

/// Proposes the next design from the history so far. Implementations must
/// return rollouts that validate against the space, and must be deterministic
/// given their seed and the history.
pub trait Proposer {
    fn tag(&self) -> String;
    fn propose(
        &mut self,
        history: &[EvalRecord],
        space: &DesignSpace,
    ) -> Result<Proposal, SearchError>;
}

fn uniform_rollout(space: &DesignSpace, rng: &mut ChaCha8Rng) -> Rollout {
    let layers = space
        .layers
        .iter()
        .map(|lc| LayerPick {
            channels: lc.channel_options[rng.random_range(0..lc.channel_options.len())],
            kernel: lc.kernel_options[rng.random_range(0..lc.kernel_options.len())],
        })
        .collect();
    let hw = &space.hardware;
    Rollout {
        layers,
        hardware: HardwarePick {
            crossbar_size: hw.crossbar_sizes[rng.random_range(0..hw.crossbar_sizes.len())],
            adc_resolution: hw.adc_resolutions[rng.random_range(0..hw.adc_resolutions.len())],
            device_precision: hw.device_precisions[rng.random_range(0..hw.device_precisions.len())],
        },
    }
}

/// Uniform sampling over the option lists; the cold-start control arm.
pub struct RandomProposer {
    rng: ChaCha8Rng,
}

impl RandomProposer {
    pub fn new(seed: u64) -> Self {
        RandomProposer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Proposer for RandomProposer {
    fn tag(&self) -> String {
        "random".into()
    }

    fn propose(
        &mut self,
        _history: &[EvalRecord],
        space: &DesignSpace,
    ) -> Result<Proposal, SearchError> {
        Ok(Proposal::clean(uniform_rollout(space, &mut self.rng)))
    }
}

/// Tournament selection over the history, then a single-slot uniform
/// mutation. Falls back to uniform sampling while the history is empty.
pub struct EvolutionaryProposer {
    rng: ChaCha8Rng,
    pub tournament: usize,
}

impl EvolutionaryProposer {
    pub fn new(seed: u64, tournament: usize) -> Self {
        EvolutionaryProposer {
            rng: ChaCha8Rng::seed_from_u64(seed),
            tournament: tournament.max(1),
        }
    }

    fn mutate(&mut self, parent: &Rollout, space: &DesignSpace) -> Rollout {
        let mut child = parent.clone();
        let n = space.layers.len();
        let slot = self.rng.random_range(0..(2 * n + 3));
        if slot < 2 * n {
            let layer = slot / 2;
            let lc = &space.layers[layer];
            if slot % 2 == 0 {
                child.layers[layer].channels =
                    lc.channel_options[self.rng.random_range(0..lc.channel_options.len())];
            } else {
                child.layers[layer].kernel =
                    lc.kernel_options[self.rng.random_range(0..lc.kernel_options.len())];
            }
        } else {
            let hw = &space.hardware;
            match slot - 2 * n {
                0 => {
                    child.hardware.crossbar_size =
                        hw.crossbar_sizes[self.rng.random_range(0..hw.crossbar_sizes.len())]
                }
                1 => {
                    child.hardware.adc_resolution =
                        hw.adc_resolutions[self.rng.random_range(0..hw.adc_resolutions.len())]
                }
                _ => {
                    child.hardware.device_precision =
                        hw.device_precisions[self.rng.random_range(0..hw.device_precisions.len())]
                }
            }
        }
        child
    }
}

impl Proposer for EvolutionaryProposer {
    fn tag(&self) -> String {
        "evolutionary".into()
    }

    fn propose(
        &mut self,
        history: &[EvalRecord],
        space: &DesignSpace,
    ) -> Result<Proposal, SearchError> {
        if history.is_empty() {
            return Ok(Proposal::clean(uniform_rollout(space, &mut self.rng)));
        }
        let mut best: Option<&EvalRecord> = None;
        for _ in 0..self.tournament {
            let pick = &history[self.rng.random_range(0..history.len())];
            best = match best {
                Some(b) if b.reward >= pick.reward => Some(b),
                _ => Some(pick),
            };
        }
        let parent = best.expect("history nonempty").rollout.clone();
        Ok(Proposal::clean(self.mutate(&parent, space)))
    }
}

/// Samples only lint-free rollouts (monotone channels, at most 4x growth, no
/// extreme kernel jumps) and hill-climbs single slots around the incumbent.
/// This encodes the domain heuristics an informed optimizer starts from,
/// enabling the offline cold-start experiment.
pub struct HeuristicOracleProposer {
    rng: ChaCha8Rng,
}

impl HeuristicOracleProposer {
    pub fn new(seed: u64) -> Self {
        HeuristicOracleProposer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Constructs a lint-free rollout layer by layer. When an option list
    /// makes some lint unavoidable (e.g. every channel option is more than 4x
    /// the input channels), the constraint degrades gracefully rather than
    /// looping forever.
    fn sample_lint_free(&mut self, space: &DesignSpace) -> Rollout {
        let mut in_channels = space.backbone.input_shape.2;
        let mut prev_kernel: Option<usize> = None;
        let mut layers = Vec::with_capacity(space.layers.len());
        for lc in &space.layers {
            let preferred: Vec<usize> = lc
                .channel_options
                .iter()
                .copied()
                .filter(|&c| c >= in_channels && c <= 4 * in_channels)
                .collect();
            let no_shrink: Vec<usize> = lc
                .channel_options
                .iter()
                .copied()
                .filter(|&c| c >= in_channels)
                .collect();
            let channel_pool = if !preferred.is_empty() {
                preferred
            } else if !no_shrink.is_empty() {
                no_shrink
            } else {
                lc.channel_options.clone()
            };
            let kernel_pool: Vec<usize> = match prev_kernel {
                Some(pk) => {
                    let ok: Vec<usize> = lc
                        .kernel_options
                        .iter()
                        .copied()
                        .filter(|&k| pk.abs_diff(k) < 6)
                        .collect();
                    if ok.is_empty() {
                        lc.kernel_options.clone()
                    } else {
                        ok
                    }
                }
                None => lc.kernel_options.clone(),
            };
            let channels = channel_pool[self.rng.random_range(0..channel_pool.len())];
            let kernel = kernel_pool[self.rng.random_range(0..kernel_pool.len())];
            layers.push(LayerPick { channels, kernel });
            in_channels = channels;
            prev_kernel = Some(kernel);
        }
        let hw = &space.hardware;
        Rollout {
            layers,
            hardware: HardwarePick {
                crossbar_size: hw.crossbar_sizes[self.rng.random_range(0..hw.crossbar_sizes.len())],
                adc_resolution: hw.adc_resolutions[self.rng.random_range(0..hw.adc_resolutions.len())],
                device_precision: hw.device_precisions
                    [self.rng.random_range(0..hw.device_precisions.len())],
            },
        }
    }

    /// All single-slot mutations of `base` that stay in the space and keep an
    /// empty lint list, in a fixed slot/value order.
    fn lint_free_neighbors(base: &Rollout, space: &DesignSpace) -> Vec<Rollout> {
        let mut out = Vec::new();
        let mut push = |candidate: Rollout| {
            if candidate != *base
                && space.validate(&candidate).is_ok()
                && space.heuristic_lints(&candidate).is_empty()
            {
                out.push(candidate);
            }
        };
        for (i, lc) in space.layers.iter().enumerate() {
            for &c in &lc.channel_options {
                let mut cand = base.clone();
                cand.layers[i].channels = c;
                push(cand);
            }
            for &k in &lc.kernel_options {
                let mut cand = base.clone();
                cand.layers[i].kernel = k;
                push(cand);
            }
        }
        for &r in &space.hardware.crossbar_sizes {
            let mut cand = base.clone();
            cand.hardware.crossbar_size = r;
            push(cand);
        }
        for &a in &space.hardware.adc_resolutions {
            let mut cand = base.clone();
            cand.hardware.adc_resolution = a;
            push(cand);
        }
        for &p in &space.hardware.device_precisions {
            let mut cand = base.clone();
            cand.hardware.device_precision = p;
            push(cand);
        }
        out
    }
}

impl Proposer for HeuristicOracleProposer {
    fn tag(&self) -> String {
        "heuristic-oracle".into()
    }

    fn propose(
        &mut self,
        history: &[EvalRecord],
        space: &DesignSpace,
    ) -> Result<Proposal, SearchError> {
        if history.is_empty() {
            return Ok(Proposal::clean(self.sample_lint_free(space)));
        }
        let best = history
            .iter()
            .max_by(|a, b| a.reward.partial_cmp(&b.reward).unwrap_or(std::cmp::Ordering::Equal))
            .expect("history nonempty");
        let seen: HashSet<&Rollout> = history.iter().map(|r| &r.rollout).collect();
        let unvisited: Vec<Rollout> = Self::lint_free_neighbors(&best.rollout, space)
            .into_iter()
            .filter(|r| !seen.contains(r))
            .collect();
        if !unvisited.is_empty() {
            let pick = unvisited[self.rng.random_range(0..unvisited.len())].clone();
            return Ok(Proposal::clean(pick));
        }
        // Neighborhood exhausted: restart from a fresh lint-free sample.
        for _ in 0..64 {
            let candidate = self.sample_lint_free(space);
            if !seen.contains(&candidate) {
                return Ok(Proposal::clean(candidate));
            }
        }
        Ok(Proposal::clean(self.sample_lint_free(space)))
    }
}

/// The LLM optimizer: renders the prompt from the search history, asks the
/// client, parses the reply. An unusable reply triggers one re-prompt with an
/// appended correction sentence; after `max_attempts` consecutive failures
/// the episode falls back to a uniformly random valid rollout and records the
/// fallback.
pub struct LlmProposer {
    pub client: LlmClient,
    pub naive: bool,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub history_cap: usize,
    pub max_attempts: u32,
    pub reward: RewardSpec,
    fallback_rng: ChaCha8Rng,
}

impl LlmProposer {
    pub fn new(
        client: LlmClient,
        model_id: impl Into<String>,
        naive: bool,
        reward: RewardSpec,
        history_cap: usize,
        seed: u64,
    ) -> Self {
        LlmProposer {
            client,
            naive,
            model_id: model_id.into(),
            temperature: 0.0,
            max_tokens: 512,
            history_cap,
            max_attempts: 3,
            reward,
            fallback_rng: ChaCha8Rng::seed_from_u64(crate::nn::derive_seed(seed, "llm-fallback")),
        }
    }

    pub fn into_client(self) -> LlmClient {
        self.client
    }

    fn render(&self, history: &[EvalRecord], space: &DesignSpace) -> PromptPair {
        let mut ctx = PromptContext::new(space, self.history_cap);
        for rec in history {
            ctx.push(rec.rollout.clone(), self.reward.normalize(rec.reward));
        }
        if self.naive {
            build_naive_prompt(&ctx)
        } else {
            build_prompt(&ctx)
        }
    }

    fn correction(&self, reason: &str) -> String {
        let noun = if self.naive { "selection list" } else { "rollout list" };
        format!(
            "Your previous response could not be used ({reason}). \
Please respond with only the {noun} in the required format."
        )
    }
}

impl Proposer for LlmProposer {
    fn tag(&self) -> String {
        if self.naive {
            "llm-naive".into()
        } else {
            "llm-full".into()
        }
    }

    fn propose(
        &mut self,
        history: &[EvalRecord],
        space: &DesignSpace,
    ) -> Result<Proposal, SearchError> {
        let pair = self.render(history, space);
        let mut user_text = pair.user_text.clone();
        for attempt in 1..=self.max_attempts {
            let mut req = LlmRequest::chat(self.model_id.clone(), pair.system_text.clone(), user_text.clone());
            req.temperature = self.temperature;
            req.max_tokens = self.max_tokens;
            let text = self.client.complete(&req)?;
            match parse_response(&text, space) {
                Ok(parsed) => {
                    return Ok(Proposal {
                        rollout: parsed.rollout,
                        fallback: false,
                        attempts: attempt,
                        hardware_defaulted: parsed.hardware_defaulted,
                    })
                }
                Err(e) => {
                    user_text = format!("{}\n\n{}", pair.user_text, self.correction(&e.to_string()));
                }
            }
        }
        Ok(Proposal {
            rollout: uniform_rollout(space, &mut self.fallback_rng),
            fallback: true,
            attempts: self.max_attempts,
            hardware_defaulted: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{LlmBackend, LlmError, ScriptedBackend};
    use crate::space::{default_space, LayerChoice};
    use std::collections::BTreeSet;

    fn record(rollout: Rollout, episode: usize, reward: f64) -> EvalRecord {
        EvalRecord {
            episode,
            rollout,
            accuracy: 0.5,
            cost: crate::cost::CostReport::empty(true),
            reward,
            optimizer_tag: "test".into(),
            fallback: false,
            attempts: 1,
            lints: vec![],
        }
    }

    /// A space where lint-free rollouts exist from layer 0 (4 input channels).
    fn lintable_space() -> DesignSpace {
        let mut space = default_space(1e12);
        space.backbone.input_shape = (16, 16, 4);
        space.backbone.num_conv_layers = 4;
        space.layers = vec![
            LayerChoice { channel_options: vec![16, 32, 64], kernel_options: vec![3, 5] };
            4
        ];
        space.backbone.pool_after = BTreeSet::from([1, 3]);
        space
    }

    #[test]
    fn random_over_singleton_space_yields_the_unique_rollout() {
        let mut space = default_space(1e12);
        for lc in &mut space.layers {
            lc.channel_options = vec![32];
            lc.kernel_options = vec![3];
        }
        space.hardware.crossbar_sizes = vec![128];
        space.hardware.adc_resolutions = vec![6];
        space.hardware.device_precisions = vec![2];
        let unique: Vec<_> = space.enumerate(10).unwrap().collect();
        assert_eq!(unique.len(), 1);
        let mut p = RandomProposer::new(0);
        for _ in 0..5 {
            assert_eq!(p.propose(&[], &space).unwrap().rollout, unique[0]);
        }
    }

    #[test]
    fn random_proposals_always_validate() {
        let space = default_space(1e12);
        let mut p = RandomProposer::new(123);
        for _ in 0..200 {
            let prop = p.propose(&[], &space).unwrap();
            assert_eq!(space.validate(&prop.rollout), Ok(()));
        }
    }

    #[test]
    fn evolutionary_cold_start_falls_back_to_random() {
        let space = default_space(1e12);
        let mut p = EvolutionaryProposer::new(5, 5);
        let prop = p.propose(&[], &space).unwrap();
        assert_eq!(space.validate(&prop.rollout), Ok(()));
    }

    #[test]
    fn evolutionary_mutates_exactly_one_slot() {
        let space = default_space(1e12);
        let parent = crate::space::example_rollout();
        let history = vec![record(parent.clone(), 0, 1.0)];
        let mut p = EvolutionaryProposer::new(9, 3);
        for _ in 0..50 {
            let child = p.propose(&history, &space).unwrap().rollout;
            let mut diffs = 0;
            for (a, b) in parent.layers.iter().zip(&child.layers) {
                if a.channels != b.channels {
                    diffs += 1;
                }
                if a.kernel != b.kernel {
                    diffs += 1;
                }
            }
            if parent.hardware.crossbar_size != child.hardware.crossbar_size {
                diffs += 1;
            }
            if parent.hardware.adc_resolution != child.hardware.adc_resolution {
                diffs += 1;
            }
            if parent.hardware.device_precision != child.hardware.device_precision {
                diffs += 1;
            }
            assert!(diffs <= 1, "more than one slot changed");
        }
    }

    #[test]
    fn heuristic_oracle_proposals_have_empty_lint_lists() {
        let space = lintable_space();
        let mut p = HeuristicOracleProposer::new(17);
        let mut history = Vec::new();
        for episode in 0..1000 {
            let prop = p.propose(&history, &space).unwrap();
            assert_eq!(space.validate(&prop.rollout), Ok(()));
            assert!(
                space.heuristic_lints(&prop.rollout).is_empty(),
                "lint flags on {:?}",
                prop.rollout
            );
            // Pretend reward favors channel mass so hill-climbing moves.
            let reward = prop.rollout.layers.iter().map(|l| l.channels).sum::<usize>() as f64;
            history.push(record(prop.rollout, episode, reward));
        }
    }

    #[test]
    fn proposers_are_deterministic_given_seed_and_history() {
        let space = lintable_space();
        let history = vec![record(space.first_rollout(), 0, 0.1)];
        let a: Vec<_> = {
            let mut p = HeuristicOracleProposer::new(3);
            (0..10).map(|_| p.propose(&history, &space).unwrap().rollout).collect()
        };
        let b: Vec<_> = {
            let mut p = HeuristicOracleProposer::new(3);
            (0..10).map(|_| p.propose(&history, &space).unwrap().rollout).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn llm_proposer_parses_scripted_responses() {
        let space = default_space(1e12);
        let client = LlmClient::new(Box::new(ScriptedBackend::new(space.clone(), 21)));
        let mut p = LlmProposer::new(client, "scripted", false, RewardSpec::default(), 50, 21);
        let prop = p.propose(&[], &space).unwrap();
        assert!(!prop.fallback);
        assert_eq!(prop.attempts, 1);
        assert_eq!(space.validate(&prop.rollout), Ok(()));
    }

    #[test]
    fn llm_proposer_reprompts_then_falls_back() {
        struct AlwaysProse;
        impl LlmBackend for AlwaysProse {
            fn complete(&mut self, _req: &LlmRequest) -> Result<String, LlmError> {
                Ok("I cannot comply".to_string())
            }
            fn label(&self) -> &'static str {
                "prose"
            }
        }
        let space = default_space(1e12);
        let client = LlmClient::new(Box::new(AlwaysProse));
        let mut p = LlmProposer::new(client, "prose", false, RewardSpec::default(), 50, 4);
        let prop = p.propose(&[], &space).unwrap();
        assert!(prop.fallback);
        assert_eq!(prop.attempts, 3);
        assert_eq!(space.validate(&prop.rollout), Ok(()));
        // Three calls were recorded: original and two corrections.
        assert_eq!(p.client.transcript().entries.len(), 3);
    }

    #[test]
    fn llm_reprompt_appends_correction_once_per_attempt() {
        struct FailThenOk {
            calls: usize,
            space: DesignSpace,
        }
        impl LlmBackend for FailThenOk {
            fn complete(&mut self, req: &LlmRequest) -> Result<String, LlmError> {
                self.calls += 1;
                if self.calls == 1 {
                    Ok("no list here".into())
                } else {
                    assert!(req.messages.last().unwrap().content.contains("could not be used"));
                    Ok(self.space.first_rollout().to_bracket_string())
                }
            }
            fn label(&self) -> &'static str {
                "fail-then-ok"
            }
        }
        let space = default_space(1e12);
        let client = LlmClient::new(Box::new(FailThenOk { calls: 0, space: space.clone() }));
        let mut p = LlmProposer::new(client, "x", false, RewardSpec::default(), 50, 0);
        let prop = p.propose(&[], &space).unwrap();
        assert!(!prop.fallback);
        assert_eq!(prop.attempts, 2);
    }
}
