//! LLM-guided co-design of small CNNs and compute-in-memory crossbar accelerators.
//!
//! The crate wires together five pieces:
//!
//! * [`space`] — the searchable design space (per-layer channel/kernel options
//!   plus crossbar hardware hyperparameters) with validation and exhaustive
//!   enumeration for small spaces.
//! * [`prompt`] / [`llm`] — the prompt builder and a chat-completion client
//!   with transcript record/replay so every search is reproducible offline.
//! * [`cost`] — an analytic crossbar cost model mapping layers onto NVM tiles
//!   and reporting energy, latency, area, and per-layer utilization.
//! * [`nn`] — a small from-scratch CNN evaluator with noise-injection training
//!   and Monte Carlo accuracy under multiplicative weight perturbation.
//! * [`search`] — the episode loop, reward functions, baseline optimizers, and
//!   Pareto analysis, with a crash-resumable JSONL history.
//!
//! Numeric kernels are generic over the scalar type via [`Scalar`]; the search
//! pipeline itself runs at [`Real`] precision.

pub mod config;
pub mod cost;
pub mod llm;
pub mod nn;
pub mod prompt;
pub mod scalar;
pub mod search;
pub mod space;
pub mod surrogate;

pub use scalar::Scalar;

/// Precision used by the search pipeline and all serialized artifacts.
pub type Real = f64;

/// Crossbar cost report at pipeline precision.
pub type CostReport = cost::CostReport<Real>;
/// Hardware configuration at pipeline precision.
pub type HardwareConfig = cost::HardwareConfig<Real>;
/// Network at pipeline precision.
pub type Network = nn::Network<Real>;
