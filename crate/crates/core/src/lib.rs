//! Pair-compatibility simulation engine.
//!
//! The pipeline turns structured profiles into persona narratives, lets
//! persona-conditioned agents interact inside a text world engine, extracts
//! observer ratings from the transcripts, learns a linear reward combiner
//! from labeled outcomes, and computes stable matchings over the predicted
//! rewards. A synthetic tabular-policy harness measures how prediction error
//! and matching agreement degrade as policies drift from ground truth.
//!
//! Module map:
//!
//! - [`dataio`] — dataset loaders and the on-disk artifact store
//! - [`gateway`] — chat-completion access with retries, caching, record/replay
//! - [`templates`] — versioned prompt templates
//! - [`persona`] — profile-to-narrative generation
//! - [`policy`] — policy abstraction: LLM-backed agents and synthetic tabular policies
//! - [`world`] — the dual-capacity simulation engine (agents + environment narrator)
//! - [`observer`] — rating extraction from trajectories
//! - [`reward`] — linear reward combiner and the two baselines
//! - [`matching`] — preference orders, Gale-Shapley, stability verification
//! - [`convergence`] — synthetic ground-truth sweeps over (epsilon, delta)
//! - [`eval`] — classification metrics and the two experiment pipelines

pub mod convergence;
pub mod dataio;
pub mod eval;
pub mod fixtures;
pub mod gateway;
pub mod matching;
pub mod observer;
pub mod persona;
pub mod policy;
pub mod reward;
pub mod templates;
pub mod world;
