//! Policy abstraction with two implementations: persona-conditioned LLM
//! agents (the simulation path) and enumerable tabular policies over a
//! small synthetic MDP (the validation path).
//!
//! The synthetic side gives the convergence harness full control: rewards
//! are nonzero only at a sparse critical subset of states, base policies
//! decide deterministically at those states, and [`perturb`] moves a policy
//! away from its base by an exact sup-norm distance. [`expected_reward`]
//! enumerates every joint-action path and is the brute-force oracle the
//! sampling route ([`rollout`]) is checked against.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError, Message};

pub type StateId = usize;

/// Path-count budget for exact enumeration.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

const ROW_SUM_TOLERANCE: f64 = 1e-9;
const ENTROPY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("epsilon {0} outside [0,1]")]
    EpsilonOutOfRange(f64),
    #[error("invalid distribution at state {state}: {detail}")]
    InvalidDistribution { state: usize, detail: String },
    #[error("critical state {state} has entropy {entropy:.9} above bound {bound:.9}")]
    EntropyViolation { state: usize, entropy: f64, bound: f64 },
    #[error("no policy row for state {0}")]
    MissingPolicyRow(usize),
    #[error("enumeration cap of {cap} paths exceeded; use Monte Carlo rollouts instead")]
    EnumerationCapExceeded { cap: u64 },
    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),
}

/// Shannon entropy of a probability row, in nats, with 0·ln 0 = 0.
pub fn shannon_entropy(row: &[f64]) -> f64 {
    row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Two-agent MDP with deterministic transitions and sparse rewards.
///
/// Both agents share the state space; a step takes the joint action
/// `(a1, a2)` to `transition[s][a1][a2]` and earns `reward[s][a1][a2]`,
/// which is zero whenever `s` is not critical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticMdp {
    n_states: usize,
    n_actions: usize,
    critical_states: BTreeSet<StateId>,
    transition: Vec<Vec<Vec<StateId>>>,
    reward: Vec<Vec<Vec<f64>>>,
    horizon: usize,
    start_state: StateId,
}

impl SyntheticMdp {
    pub fn new(
        critical_states: BTreeSet<StateId>,
        transition: Vec<Vec<Vec<StateId>>>,
        reward: Vec<Vec<Vec<f64>>>,
        horizon: usize,
        start_state: StateId,
    ) -> Result<SyntheticMdp, PolicyError> {
        let n_states = transition.len();
        if n_states == 0 || horizon == 0 {
            return Err(PolicyError::InfeasibleConfig("need at least one state and one step".into()));
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(PolicyError::InfeasibleConfig("need at least one action".into()));
        }
        if start_state >= n_states {
            return Err(PolicyError::InfeasibleConfig(format!(
                "start state {start_state} outside 0..{n_states}"
            )));
        }
        if critical_states.iter().any(|&s| s >= n_states) {
            return Err(PolicyError::InfeasibleConfig("critical state outside state space".into()));
        }
        if critical_states.len() >= n_states {
            return Err(PolicyError::InfeasibleConfig(
                "critical set must be a strict subset of the states".into(),
            ));
        }
        if reward.len() != n_states {
            return Err(PolicyError::InfeasibleConfig("reward table shape mismatch".into()));
        }
        for (s, (t_rows, r_rows)) in transition.iter().zip(&reward).enumerate() {
            if t_rows.len() != n_actions || r_rows.len() != n_actions {
                return Err(PolicyError::InfeasibleConfig(format!("state {s}: table shape mismatch")));
            }
            for (t_row, r_row) in t_rows.iter().zip(r_rows) {
                if t_row.len() != n_actions || r_row.len() != n_actions {
                    return Err(PolicyError::InfeasibleConfig(format!(
                        "state {s}: table shape mismatch"
                    )));
                }
                if t_row.iter().any(|&next| next >= n_states) {
                    return Err(PolicyError::InfeasibleConfig(format!(
                        "state {s}: transition target outside state space"
                    )));
                }
                if !critical_states.contains(&s) && r_row.iter().any(|&r| r != 0.0) {
                    return Err(PolicyError::InfeasibleConfig(format!(
                        "state {s} is not critical but has nonzero reward"
                    )));
                }
            }
        }
        Ok(SyntheticMdp {
            n_states,
            n_actions,
            critical_states,
            transition,
            reward,
            horizon,
            start_state,
        })
    }

    /// Seeded random instance: uniform transition targets, critical-state
    /// rewards drawn uniformly from [-1, 1].
    pub fn generate(
        n_states: usize,
        n_critical: usize,
        n_actions: usize,
        horizon: usize,
        seed: u64,
    ) -> Result<SyntheticMdp, PolicyError> {
        if n_critical >= n_states {
            return Err(PolicyError::InfeasibleConfig(format!(
                "need |critical| < |states|, got {n_critical} >= {n_states}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ids: Vec<StateId> = (0..n_states).collect();
        for i in (1..ids.len()).rev() {
            let j = rng.gen_range(0..=i);
            ids.swap(i, j);
        }
        let critical_states: BTreeSet<StateId> = ids.into_iter().take(n_critical).collect();
        let mut transition = vec![vec![vec![0usize; n_actions]; n_actions]; n_states];
        let mut reward = vec![vec![vec![0.0f64; n_actions]; n_actions]; n_states];
        for s in 0..n_states {
            for a1 in 0..n_actions {
                for a2 in 0..n_actions {
                    transition[s][a1][a2] = rng.gen_range(0..n_states);
                    if critical_states.contains(&s) {
                        reward[s][a1][a2] = rng.gen_range(-1.0..1.0);
                    }
                }
            }
        }
        SyntheticMdp::new(critical_states, transition, reward, horizon, 0)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn start_state(&self) -> StateId {
        self.start_state
    }
    pub fn critical_states(&self) -> &BTreeSet<StateId> {
        &self.critical_states
    }
    pub fn next_state(&self, s: StateId, a1: usize, a2: usize) -> StateId {
        self.transition[s][a1][a2]
    }
    pub fn reward(&self, s: StateId, a1: usize, a2: usize) -> f64 {
        self.reward[s][a1][a2]
    }
}

/// Anything that yields an action distribution per state.
pub trait DecisionPolicy {
    fn action_probs(&self, state: StateId) -> Option<&[f64]>;
}

/// Explicit per-state action distributions with a certified entropy bound
/// at critical states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularPolicy {
    rows: Vec<Vec<f64>>,
    entropy_bound: f64,
}

impl TabularPolicy {
    /// Validates that every row is a distribution (sum within 1e-9 of 1,
    /// no negative entries) and that every critical-state row has Shannon
    /// entropy at most `entropy_bound`. Violations are rejected here, so a
    /// constructed policy carries its certificate.
    pub fn new(
        rows: Vec<Vec<f64>>,
        entropy_bound: f64,
        critical_states: &BTreeSet<StateId>,
    ) -> Result<TabularPolicy, PolicyError> {
        if entropy_bound < 0.0 {
            return Err(PolicyError::InfeasibleConfig("entropy bound must be >= 0".into()));
        }
        for (s, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(PolicyError::InvalidDistribution {
                    state: s,
                    detail: "empty action row".into(),
                });
            }
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(PolicyError::InvalidDistribution {
                    state: s,
                    detail: "negative or non-finite probability".into(),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(PolicyError::InvalidDistribution {
                    state: s,
                    detail: format!("row sums to {sum}"),
                });
            }
            if critical_states.contains(&s) {
                let entropy = shannon_entropy(row);
                if entropy > entropy_bound + ENTROPY_TOLERANCE {
                    return Err(PolicyError::EntropyViolation {
                        state: s,
                        entropy,
                        bound: entropy_bound,
                    });
                }
            }
        }
        Ok(TabularPolicy { rows, entropy_bound })
    }

    /// Seeded random policy: deterministic (one-hot) rows at critical
    /// states, normalized uniform draws elsewhere. Entropy bound 0.
    pub fn random(
        n_states: usize,
        n_actions: usize,
        critical_states: &BTreeSet<StateId>,
        seed: u64,
    ) -> TabularPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n_states);
        for s in 0..n_states {
            if critical_states.contains(&s) {
                let mut row = vec![0.0; n_actions];
                row[rng.gen_range(0..n_actions)] = 1.0;
                rows.push(row);
            } else {
                let raw: Vec<f64> = (0..n_actions).map(|_| rng.gen_range(0.05..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                rows.push(raw.into_iter().map(|v| v / sum).collect());
            }
        }
        TabularPolicy::new(rows, 0.0, critical_states).expect("constructed rows are valid")
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn entropy_bound(&self) -> f64 {
        self.entropy_bound
    }
}

impl DecisionPolicy for TabularPolicy {
    fn action_probs(&self, state: StateId) -> Option<&[f64]> {
        self.rows.get(state).map(Vec::as_slice)
    }
}

/// A policy at a certified sup-norm distance from its base.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbedPolicy {
    base: TabularPolicy,
    rows: Vec<Vec<f64>>,
    epsilon: f64,
}

impl PerturbedPolicy {
    pub fn base(&self) -> &TabularPolicy {
        &self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Measured max |perturbed(a|s) - base(a|s)| over all states/actions.
    pub fn sup_distance(&self) -> f64 {
        self.rows
            .iter()
            .zip(self.base.rows())
            .flat_map(|(q, p)| q.iter().zip(p).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }
}

impl DecisionPolicy for PerturbedPolicy {
    fn action_probs(&self, state: StateId) -> Option<&[f64]> {
        self.rows.get(state).map(Vec::as_slice)
    }
}

/// Moves each row of `base` by seed-drawn noise, then rescales toward the
/// base so the sup-norm distance never exceeds `epsilon`. The constraint
/// holds by construction, not approximately: noise is added, clipped to
/// [0, 1], renormalized, and the step back toward the base is a convex
/// combination, so rows stay valid distributions.
pub fn perturb(
    base: &TabularPolicy,
    epsilon: f64,
    rng_seed: u64,
) -> Result<PerturbedPolicy, PolicyError> {
    if !(0.0..=1.0).contains(&epsilon) || !epsilon.is_finite() {
        return Err(PolicyError::EpsilonOutOfRange(epsilon));
    }
    if epsilon == 0.0 {
        return Ok(PerturbedPolicy { base: base.clone(), rows: base.rows().to_vec(), epsilon });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut rows = Vec::with_capacity(base.rows().len());
    for p in base.rows() {
        let k = p.len();
        let mut q: Vec<f64> = p
            .iter()
            .map(|&pi| (pi + rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0))
            .collect();
        let sum: f64 = q.iter().sum();
        if sum <= f64::EPSILON {
            q = vec![1.0 / k as f64; k];
        } else {
            for v in &mut q {
                *v /= sum;
            }
        }
        let d = q.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let mut row: Vec<f64> = if d > epsilon {
            let t = epsilon / d;
            p.iter().zip(&q).map(|(&pi, &qi)| pi + t * (qi - pi)).collect()
        } else {
            q
        };
        // Guard against the rescale overshooting by a rounding step.
        let measured = row.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if measured > epsilon {
            let shrink = epsilon / measured * (1.0 - 1e-12);
            row = p.iter().zip(&row).map(|(&pi, &ri)| pi + shrink * (ri - pi)).collect();
        }
        rows.push(row);
    }
    Ok(PerturbedPolicy { base: base.clone(), rows, epsilon })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutStep {
    pub state: StateId,
    pub action_1: usize,
    pub action_2: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    pub total_reward: f64,
}

fn policy_row<'a>(
    policy: &'a dyn DecisionPolicy,
    state: StateId,
    n_actions: usize,
) -> Result<&'a [f64], PolicyError> {
    let row = policy.action_probs(state).ok_or(PolicyError::MissingPolicyRow(state))?;
    if row.len() != n_actions {
        return Err(PolicyError::InvalidDistribution {
            state,
            detail: format!("row has {} actions, MDP has {n_actions}", row.len()),
        });
    }
    Ok(row)
}

fn sample_action(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (a, &p) in row.iter().enumerate() {
        cumulative += p;
        if draw < cumulative {
            return a;
        }
    }
    row.len() - 1
}

/// One seeded episode under the joint policies.
pub fn rollout(
    mdp: &SyntheticMdp,
    pi_1: &dyn DecisionPolicy,
    pi_2: &dyn DecisionPolicy,
    rng_seed: u64,
) -> Result<Rollout, PolicyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut state = mdp.start_state();
    let mut steps = Vec::with_capacity(mdp.horizon());
    let mut total_reward = 0.0;
    for _ in 0..mdp.horizon() {
        let a1 = sample_action(policy_row(pi_1, state, mdp.n_actions())?, &mut rng);
        let a2 = sample_action(policy_row(pi_2, state, mdp.n_actions())?, &mut rng);
        let reward = mdp.reward(state, a1, a2);
        steps.push(RolloutStep { state, action_1: a1, action_2: a2, reward });
        total_reward += reward;
        state = mdp.next_state(state, a1, a2);
    }
    Ok(Rollout { steps, total_reward })
}

/// Exact expected return by full path enumeration with probability weights.
///
/// This is the brute-force oracle the convergence harness uses as ground
/// truth R*. Zero-probability branches are pruned; the number of surviving
/// leaf paths is charged against `cap`.
pub fn expected_reward_with_cap(
    mdp: &SyntheticMdp,
    pi_1: &dyn DecisionPolicy,
    pi_2: &dyn DecisionPolicy,
    cap: u64,
) -> Result<f64, PolicyError> {
    fn dfs(
        mdp: &SyntheticMdp,
        pi_1: &dyn DecisionPolicy,
        pi_2: &dyn DecisionPolicy,
        state: StateId,
        step: usize,
        path_prob: f64,
        reward_so_far: f64,
        paths: &mut u64,
        cap: u64,
        total: &mut f64,
    ) -> Result<(), PolicyError> {
        if step == mdp.horizon() {
            *paths += 1;
            if *paths > cap {
                return Err(PolicyError::EnumerationCapExceeded { cap });
            }
            *total += path_prob * reward_so_far;
            return Ok(());
        }
        let row1 = policy_row(pi_1, state, mdp.n_actions())?;
        let row2 = policy_row(pi_2, state, mdp.n_actions())?;
        for (a1, &p1) in row1.iter().enumerate() {
            if p1 == 0.0 {
                continue;
            }
            for (a2, &p2) in row2.iter().enumerate() {
                if p2 == 0.0 {
                    continue;
                }
                dfs(
                    mdp,
                    pi_1,
                    pi_2,
                    mdp.next_state(state, a1, a2),
                    step + 1,
                    path_prob * p1 * p2,
                    reward_so_far + mdp.reward(state, a1, a2),
                    paths,
                    cap,
                    total,
                )?;
            }
        }
        Ok(())
    }

    let mut total = 0.0;
    let mut paths = 0u64;
    dfs(mdp, pi_1, pi_2, mdp.start_state(), 0, 1.0, 0.0, &mut paths, cap, &mut total)?;
    Ok(total)
}

pub fn expected_reward(
    mdp: &SyntheticMdp,
    pi_1: &dyn DecisionPolicy,
    pi_2: &dyn DecisionPolicy,
) -> Result<f64, PolicyError> {
    expected_reward_with_cap(mdp, pi_1, pi_2, DEFAULT_ENUMERATION_CAP)
}

/// Persona-conditioned agent: state is the visible dialogue context, the
/// action is the next raw utterance. Prompt assembly lives here; parsing
/// and retry policy belong to the world engine.
#[derive(Debug, Clone)]
pub struct LlmAgentPolicy {
    pub subject_id: String,
    pub system_prompt: String,
    pub model_name: String,
    pub temperature: f64,
    pub seed: Option<i64>,
    pub max_tokens: u32,
}

impl LlmAgentPolicy {
    /// Sends `system prompt + context` through the gateway and returns the
    /// raw model output.
    pub fn act(&self, gateway: &Gateway, context: &[Message]) -> Result<String, GatewayError> {
        let mut messages = Vec::with_capacity(context.len() + 1);
        messages.push(Message::system(&self.system_prompt));
        messages.extend_from_slice(context);
        let request = ChatRequest::new(
            &self.model_name,
            messages,
            self.temperature,
            self.seed,
            self.max_tokens,
        )?;
        Ok(gateway.complete(&request)?.text)
    }
}

#[cfg(test)]
mod tests;
