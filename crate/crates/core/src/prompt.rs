//! Prompt builder and response parser for the LLM optimizer.
//!
//! Two prompt families share the same history block byte for byte: the full
//! co-design prompt (expert role, backbone and hardware framing) and the
//! naive ablation prompt, which keeps only the abstract
//! pick-numbers-to-maximize-a-score task.

use crate::space::{Backbone, DesignSpace, HardwarePick, LayerPick, Rollout, Violation};
use std::fmt;
use thiserror::Error;

/// Fixed expert-role sentence of the full prompt.
pub const SYSTEM_PROMPT: &str = "You are an expert in the field of neural architecture search.";
/// Role sentence of the naive ablation prompt; deliberately content-free.
pub const NAIVE_SYSTEM_PROMPT: &str = "You are a helpful assistant.";
/// Header of the history block, shared verbatim by both prompt families.
pub const HISTORY_HEADER: &str =
    "Here are some experimental results that you can use as a reference:";
/// Entries kept in the history block before the oldest are dropped.
pub const DEFAULT_HISTORY_CAP: usize = 50;

/// Inputs to prompt construction. `explored` and `performance` stay aligned;
/// performance entries are normalized rewards with -1 marking invalid
/// hardware.
#[derive(Debug, Clone)]
pub struct PromptContext {
    explored: Vec<Rollout>,
    performance: Vec<f64>,
    pub backbone_text: String,
    pub choices_text: String,
    pub naive_choices_text: String,
    pub num_layers: usize,
    pub history_cap: usize,
}

/// A system/user message pair ready to send.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    pub system_text: String,
    pub user_text: String,
}

impl PromptContext {
    pub fn new(space: &DesignSpace, history_cap: usize) -> Self {
        PromptContext {
            explored: Vec::new(),
            performance: Vec::new(),
            backbone_text: render_backbone(&space.backbone),
            choices_text: render_choices(space),
            naive_choices_text: render_naive_choices(space),
            num_layers: space.layers.len(),
            history_cap: history_cap.max(1),
        }
    }

    /// Appends one explored design with its normalized performance.
    pub fn push(&mut self, rollout: Rollout, performance: f64) {
        self.explored.push(rollout);
        self.performance.push(performance);
    }

    pub fn len(&self) -> usize {
        self.explored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.explored.is_empty()
    }

    /// The history block: one `(rollout, performance)` pair per line with
    /// performance to 4 decimal places, `[]` when nothing was explored, and a
    /// note when older entries fall off the cap.
    pub fn render_history(&self) -> String {
        if self.explored.is_empty() {
            return "[]".to_string();
        }
        let total = self.explored.len();
        let shown = total.min(self.history_cap);
        let mut out = String::new();
        if shown < total {
            out.push_str(&format!(
                "(showing the most recent {shown} of {total} results; older ones omitted)\n"
            ));
        }
        for i in (total - shown)..total {
            out.push_str(&format!(
                "({}, {:.4})",
                self.explored[i].to_bracket_string(),
                self.performance[i]
            ));
            if i + 1 < total {
                out.push('\n');
            }
        }
        out
    }
}

fn render_backbone(b: &Backbone) -> String {
    let pools: Vec<String> = b.pool_after.iter().map(|i| (i + 1).to_string()).collect();
    let (h, w, c) = b.input_shape;
    format!(
        "A convolutional neural network with {} convolution layers followed by {} fully connected layers. \
The input is {h}x{w} with {c} channels. Convolutions use stride 1 and same padding. \
A 2x2 max pooling layer follows convolution layers {}. \
The hidden size between the fully connected layers is {}, and the final layer has {} outputs.",
        b.num_conv_layers,
        b.num_fc_layers,
        pools.join(", "),
        b.fc_hidden_size,
        b.num_classes
    )
}

fn fmt_list<T: fmt::Display>(values: &[T]) -> String {
    let inner: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    format!("[{}]", inner.join(", "))
}

fn render_choices(space: &DesignSpace) -> String {
    let mut out = String::new();
    for (i, lc) in space.layers.iter().enumerate() {
        out.push_str(&format!(
            "index {i}: output channels from {}, kernel size from {}\n",
            fmt_list(&lc.channel_options),
            fmt_list(&lc.kernel_options)
        ));
    }
    out.push_str(&format!(
        "index {} (hardware): crossbar size from {}, adc resolution (bits) from {}, device precision (bits per cell) from {}",
        space.layers.len(),
        fmt_list(&space.hardware.crossbar_sizes),
        fmt_list(&space.hardware.adc_resolutions),
        fmt_list(&space.hardware.device_precisions)
    ));
    out
}

fn render_naive_choices(space: &DesignSpace) -> String {
    let mut out = String::new();
    for (i, lc) in space.layers.iter().enumerate() {
        out.push_str(&format!(
            "slot {i}: first number from {}, second number from {}\n",
            fmt_list(&lc.channel_options),
            fmt_list(&lc.kernel_options)
        ));
    }
    out.push_str(&format!(
        "slot {}: first number from {}, second number from {}, third number from {}",
        space.layers.len(),
        fmt_list(&space.hardware.crossbar_sizes),
        fmt_list(&space.hardware.adc_resolutions),
        fmt_list(&space.hardware.device_precisions)
    ));
    out
}

/// Builds the full co-design prompt. Deterministic: the same context renders
/// byte-identical text.
pub fn build_prompt(ctx: &PromptContext) -> PromptPair {
    let user_text = format!(
        "Your task is to assist me in selecting the best rollout numbers for a given model architecture. \
The model will be trained and tested on CIFAR10, and your objective will be to maximize the model's performance on CIFAR10.\n\
The model architecture will be defined as the following.\n\
{model}\n\
\n\
For the 'rollout' variable to design the model, the available number for each index would be:\n\
{choices}\n\
\n\
Your objective is to define the optimal number of rollouts for each layer based on the given options above to maximize the model's performance on CIFAR10.\n\
\n\
The model's performance is a combination of hardware performance and model accuracy. \
If the hardware is invalid (e.g., too large in area), the performance I give you will be -1. \
After you give me a rollout list, I will give you the model's performance I calculated.\n\
\n\
Your response should be the rollout list consisting of {n} number pairs(e.g. [[32,3],[32,3],[64,3],[64,3],[128,3],[128,3]]), \
followed by one hardware triple [crossbar_size,adc_resolution,device_precision] appended to the list(e.g. [[32,3],[32,3],[64,3],[64,3],[128,3],[128,3],[128,6,2]]).\n\
\n\
{history_header}\n\
{history}\n\
\n\
Please suggest a rollout list that can improve the model's performance on CIFAR10 beyond the experimental results provided above.\n\
Please do not include anything else other than the rollout list in your response.",
        model = ctx.backbone_text,
        choices = ctx.choices_text,
        n = ctx.num_layers,
        history_header = HISTORY_HEADER,
        history = ctx.render_history(),
    );
    PromptPair {
        system_text: SYSTEM_PROMPT.to_string(),
        user_text,
    }
}

/// Builds the ablation prompt: same structure and history, all co-design
/// framing removed.
pub fn build_naive_prompt(ctx: &PromptContext) -> PromptPair {
    let user_text = format!(
        "Your task is to assist me in selecting the best numbers for a list of slots. \
Your objective is to maximize the score of the selection.\n\
\n\
For each slot, the available numbers would be:\n\
{choices}\n\
\n\
Your objective is to pick the optimal numbers for each slot based on the given options above to maximize the score.\n\
\n\
If the selection is invalid, the score I give you will be -1. \
After you give me a selection list, I will give you the score I calculated.\n\
\n\
Your response should be the selection list consisting of {n} number pairs(e.g. [[32,3],[32,3],[64,3],[64,3],[128,3],[128,3]]), \
followed by one number triple appended to the list(e.g. [[32,3],[32,3],[64,3],[64,3],[128,3],[128,3],[128,6,2]]).\n\
\n\
{history_header}\n\
{history}\n\
\n\
Please suggest a selection list that can improve the score beyond the experimental results provided above.\n\
Please do not include anything else other than the selection list in your response.",
        choices = ctx.naive_choices_text,
        n = ctx.num_layers,
        history_header = HISTORY_HEADER,
        history = ctx.render_history(),
    );
    PromptPair {
        system_text: NAIVE_SYSTEM_PROMPT.to_string(),
        user_text,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("no bracketed list of number pairs found")]
    NoList,
    #[error("malformed list `{snippet}`: {reason}")]
    Malformed { snippet: String, reason: String },
    #[error("list `{snippet}` is not in the design space: {}", render_violations(.violations))]
    Validation {
        snippet: String,
        violations: Vec<Violation>,
    },
}

fn render_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// A successfully parsed response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub rollout: Rollout,
    /// True when the response omitted the trailing hardware triple and the
    /// space default was substituted.
    pub hardware_defaulted: bool,
}

/// Extracts the first bracketed list of number lists from `text`, tolerating
/// surrounding prose and code fences, and validates it against the space.
/// Never panics on arbitrary input.
pub fn parse_response(text: &str, space: &DesignSpace) -> Result<ParsedResponse, ParseError> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            if let Some((lists, end)) = scan_list_of_lists(bytes, i) {
                let snippet = String::from_utf8_lossy(&bytes[i..end]).into_owned();
                return interpret(lists, snippet, space);
            }
        }
        i += 1;
    }
    Err(ParseError::NoList)
}

/// Parses `[[a,b],[c,d],...]` starting at `start`. Returns the inner integer
/// lists and the byte offset one past the closing bracket, or `None` if the
/// text at `start` is not such a list.
fn scan_list_of_lists(bytes: &[u8], start: usize) -> Option<(Vec<Vec<u64>>, usize)> {
    let mut i = start + 1;
    let mut lists = Vec::new();
    skip_ws(bytes, &mut i);
    loop {
        if *bytes.get(i)? != b'[' {
            return None;
        }
        i += 1;
        let mut inner = Vec::new();
        loop {
            skip_ws(bytes, &mut i);
            let v = scan_integer(bytes, &mut i)?;
            inner.push(v);
            skip_ws(bytes, &mut i);
            match bytes.get(i)? {
                b',' => i += 1,
                b']' => {
                    i += 1;
                    break;
                }
                _ => return None,
            }
        }
        lists.push(inner);
        skip_ws(bytes, &mut i);
        match bytes.get(i)? {
            b',' => {
                i += 1;
                skip_ws(bytes, &mut i);
            }
            b']' => return Some((lists, i + 1)),
            _ => return None,
        }
    }
}

fn skip_ws(bytes: &[u8], i: &mut usize) {
    while *i < bytes.len() && bytes[*i].is_ascii_whitespace() {
        *i += 1;
    }
}

fn scan_integer(bytes: &[u8], i: &mut usize) -> Option<u64> {
    let mut v: u64 = 0;
    let mut any = false;
    while let Some(&b) = bytes.get(*i) {
        if b.is_ascii_digit() {
            v = v.checked_mul(10)?.checked_add(u64::from(b - b'0'))?;
            any = true;
            *i += 1;
        } else {
            break;
        }
    }
    any.then_some(v)
}

fn interpret(
    lists: Vec<Vec<u64>>,
    snippet: String,
    space: &DesignSpace,
) -> Result<ParsedResponse, ParseError> {
    for (idx, inner) in lists.iter().enumerate() {
        let last = idx + 1 == lists.len();
        let ok = inner.len() == 2 || (last && inner.len() == 3);
        if !ok {
            return Err(ParseError::Malformed {
                snippet,
                reason: format!("entry {idx} has {} numbers, expected 2", inner.len()),
            });
        }
    }
    let (pairs, hardware, hardware_defaulted) = match lists.last() {
        Some(last) if last.len() == 3 => {
            let hw = HardwarePick {
                crossbar_size: last[0] as usize,
                adc_resolution: clamp_u32(last[1]),
                device_precision: clamp_u32(last[2]),
            };
            (&lists[..lists.len() - 1], hw, false)
        }
        Some(_) => (&lists[..], space.default_hardware(), true),
        None => {
            return Err(ParseError::Malformed {
                snippet,
                reason: "empty list".to_string(),
            })
        }
    };
    let rollout = Rollout {
        layers: pairs
            .iter()
            .map(|p| LayerPick {
                channels: p[0] as usize,
                kernel: p[1] as usize,
            })
            .collect(),
        hardware,
    };
    match space.validate(&rollout) {
        Ok(()) => Ok(ParsedResponse {
            rollout,
            hardware_defaulted,
        }),
        Err(violations) => Err(ParseError::Validation {
            snippet,
            violations,
        }),
    }
}

fn clamp_u32(v: u64) -> u32 {
    v.min(u64::from(u32::MAX)) as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{default_space, example_rollout, DEFAULT_ENUMERATION_CAP};

    #[test]
    fn parses_the_paper_example_with_hardware_triple() {
        let space = default_space(1e12);
        let text = "[[32,3],[32,3],[64,3],[64,3],[128,3],[128,3],[128,6,2]]";
        let parsed = parse_response(text, &space).unwrap();
        assert_eq!(parsed.rollout, example_rollout());
        assert!(!parsed.hardware_defaulted);
    }

    #[test]
    fn missing_hardware_triple_defaults_and_flags() {
        let space = default_space(1e12);
        let text = "[[32,3],[32,3],[64,3],[64,3],[128,3],[128,3]]";
        let parsed = parse_response(text, &space).unwrap();
        assert!(parsed.hardware_defaulted);
        assert_eq!(parsed.rollout.hardware, space.default_hardware());
    }

    #[test]
    fn extracts_from_surrounding_prose_and_fences() {
        let space = default_space(1e12);
        let text = "Sure! My suggestion:\n```\n[[16,3],[16,3],[32,3],[32,3],[64,3],[64,3],[64,4,1]]\n```\nGood luck!";
        let parsed = parse_response(text, &space).unwrap();
        assert_eq!(parsed.rollout.layers[0].channels, 16);
        assert_eq!(parsed.rollout.hardware.crossbar_size, 64);
    }

    #[test]
    fn refusal_is_no_list() {
        let space = default_space(1e12);
        assert_eq!(parse_response("I cannot comply", &space), Err(ParseError::NoList));
    }

    #[test]
    fn wrong_arity_entry_is_malformed_with_snippet() {
        let space = default_space(1e12);
        let text = "[[32,3],[32,3,3,3],[64,3]]";
        match parse_response(text, &space) {
            Err(ParseError::Malformed { snippet, .. }) => {
                assert!(snippet.contains("[32,3,3,3]"));
            }
            other => panic!("expected malformed, got {other:?}"),
        }
    }

    #[test]
    fn out_of_space_rollout_is_validation_error() {
        let space = default_space(1e12);
        let text = "[[32,4],[32,3],[64,3],[64,3],[128,3],[128,3],[128,6,2]]";
        match parse_response(text, &space) {
            Err(ParseError::Validation { violations, .. }) => {
                assert!(violations
                    .iter()
                    .any(|v| matches!(v, Violation::KernelNotOdd { layer: 0, value: 4 })));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_over_an_enumerated_space() {
        let mut space = default_space(1e12);
        space.backbone.num_conv_layers = 4;
        space.layers.truncate(4);
        space.backbone.pool_after = std::collections::BTreeSet::from([1, 3]);
        for lc in &mut space.layers {
            lc.channel_options = vec![16, 32];
            lc.kernel_options = vec![3, 5];
        }
        space.hardware.crossbar_sizes = vec![64, 128];
        space.hardware.adc_resolutions = vec![4];
        space.hardware.device_precisions = vec![1, 2];
        for rollout in space.enumerate(DEFAULT_ENUMERATION_CAP).unwrap() {
            let text = rollout.to_bracket_string();
            let parsed = parse_response(&text, &space).unwrap();
            assert_eq!(parsed.rollout, rollout);
            assert!(!parsed.hardware_defaulted);
        }
    }

    #[test]
    fn prompts_are_deterministic() {
        let space = default_space(1e12);
        let mut ctx = PromptContext::new(&space, DEFAULT_HISTORY_CAP);
        ctx.push(example_rollout(), 0.5123);
        assert_eq!(build_prompt(&ctx), build_prompt(&ctx));
        assert_eq!(build_naive_prompt(&ctx), build_naive_prompt(&ctx));
    }

    #[test]
    fn empty_history_renders_header_and_empty_list() {
        let space = default_space(1e12);
        let ctx = PromptContext::new(&space, DEFAULT_HISTORY_CAP);
        let pair = build_prompt(&ctx);
        assert!(pair.user_text.contains(&format!("{HISTORY_HEADER}\n[]\n")));
        assert_eq!(pair.system_text, SYSTEM_PROMPT);
    }

    #[test]
    fn history_entry_appears_verbatim_at_four_decimals() {
        let space = default_space(1e12);
        let mut ctx = PromptContext::new(&space, DEFAULT_HISTORY_CAP);
        ctx.push(example_rollout(), 0.5123);
        let pair = build_prompt(&ctx);
        assert!(pair
            .user_text
            .contains("([[32,3],[32,3],[64,3],[64,3],[128,3],[128,3],[128,6,2]], 0.5123)"));
    }

    #[test]
    fn history_grows_linearly_and_preserves_order() {
        let space = default_space(1e12);
        let mut ctx = PromptContext::new(&space, DEFAULT_HISTORY_CAP);
        ctx.push(example_rollout(), 0.0);
        let mut last_len = build_prompt(&ctx).user_text.len();
        let mut deltas = Vec::new();
        for i in 1..10 {
            ctx.push(example_rollout(), i as f64 / 100.0);
            let len = build_prompt(&ctx).user_text.len();
            deltas.push(len - last_len);
            last_len = len;
        }
        // Same-size entries, same per-entry growth.
        assert!(deltas.windows(2).all(|w| w[0] == w[1]));
        // Order preserved: performances appear in insertion order.
        let text = build_prompt(&ctx).user_text;
        let p0 = text.find("0.0000").unwrap();
        let p9 = text.find("0.0900").unwrap();
        assert!(p0 < p9);
    }

    #[test]
    fn history_cap_drops_oldest_with_note() {
        let space = default_space(1e12);
        let mut ctx = PromptContext::new(&space, 3);
        for i in 0..5 {
            ctx.push(example_rollout(), i as f64);
        }
        let history = ctx.render_history();
        assert!(history.starts_with("(showing the most recent 3 of 5 results"));
        assert!(!history.contains("0.0000"));
        assert!(history.contains("4.0000"));
    }

    #[test]
    fn naive_prompt_has_no_codesign_framing_but_identical_history() {
        let space = default_space(1e12);
        let mut ctx = PromptContext::new(&space, DEFAULT_HISTORY_CAP);
        ctx.push(example_rollout(), -0.25);
        let full = build_prompt(&ctx);
        let naive = build_naive_prompt(&ctx);
        let lowered = format!(
            "{}\n{}",
            naive.system_text.to_lowercase(),
            naive.user_text.to_lowercase()
        );
        for term in [
            "accelerator",
            "cifar",
            "neural",
            "model",
            "architecture",
            "hardware",
            "kernel",
            "channel",
            "crossbar",
            "adc",
            "chip",
            "area",
            "energy",
            "latency",
            "co-design",
            "rollout",
            "convolution",
        ] {
            assert!(!lowered.contains(term), "naive prompt leaks `{term}`");
        }
        let history = ctx.render_history();
        assert!(full.user_text.contains(&history));
        assert!(naive.user_text.contains(&history));
    }

    #[test]
    fn parser_never_panics_on_arbitrary_bytes() {
        use rand::{Rng, SeedableRng};
        let space = default_space(1e12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..2000 {
            let len = rng.random_range(0..200);
            let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            let text = String::from_utf8_lossy(&bytes).into_owned();
            let _ = parse_response(&text, &space);
        }
        // Pathological nesting and digits.
        for text in ["[[[[[[[[", "[1", "[[1,", "[[]]", "[[99999999999999999999,3]]", "[,]"] {
            let _ = parse_response(text, &space);
        }
    }
}
