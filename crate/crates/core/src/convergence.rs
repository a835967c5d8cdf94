//! Synthetic-ground-truth harness for the convergence guarantee: build a
//! sparse-reward MDP with per-individual base policies, sweep the policy
//! approximation error epsilon and the critical-state entropy delta, and
//! measure how prediction error and matching agreement degrade.
//!
//! Ground truth manufactures what the real pipeline never has: the true
//! policies. Base policies decide deterministically at critical states
//! (entropy 0); the delta knob widens exactly those rows to a target
//! entropy, and the epsilon knob moves every row by a certified sup-norm
//! distance. R* comes from exact path enumeration, M* from deferred
//! acceptance over R*.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{ArtifactStore, DataIoError};
use crate::matching::{
    gale_shapley, matching_agreement, preferences_from_rewards, Matching, MatchingError,
    ProposingSide, RewardMatrix,
};
use crate::policy::{
    expected_reward_with_cap, perturb, shannon_entropy, DecisionPolicy, PolicyError, SyntheticMdp,
    TabularPolicy, DEFAULT_ENUMERATION_CAP,
};

#[derive(Debug, Error)]
pub enum ConvergenceError {
    #[error("infeasible config: {0}")]
    InfeasibleConfig(String),
    #[error("need at least {needed} epsilon points with delta fixed, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("cannot widen a row with entropy {current:.6} down to target {target:.6}")]
    InfeasibleWiden { current: f64, target: f64 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Store(#[from] DataIoError),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MdpSpec {
    pub n_states: usize,
    pub n_critical: usize,
    pub n_actions: usize,
    pub horizon: usize,
}

impl Default for MdpSpec {
    fn default() -> Self {
        MdpSpec { n_states: 10, n_critical: 3, n_actions: 2, horizon: 6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Ascending policy-error grid, in [0, 1].
    pub epsilon_grid: Vec<f64>,
    /// Ascending critical-state entropy grid, in nats.
    pub delta_grid: Vec<f64>,
    /// Individuals per side.
    pub population_size: usize,
    pub seeds: Vec<u64>,
    pub mdp: MdpSpec,
    pub enumeration_cap: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            epsilon_grid: vec![0.0, 0.05, 0.1, 0.2, 0.4],
            delta_grid: vec![0.0, 0.1, 0.3],
            population_size: 6,
            seeds: (0..20).collect(),
            mdp: MdpSpec::default(),
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ConvergenceError> {
        let sorted = |g: &[f64]| g.windows(2).all(|w| w[0] < w[1]);
        if self.epsilon_grid.is_empty() || self.delta_grid.is_empty() {
            return Err(ConvergenceError::InfeasibleConfig("grids must be nonempty".into()));
        }
        if !sorted(&self.epsilon_grid) || !sorted(&self.delta_grid) {
            return Err(ConvergenceError::InfeasibleConfig("grids must be strictly ascending".into()));
        }
        if self.epsilon_grid.iter().any(|&e| !(0.0..=1.0).contains(&e)) {
            return Err(ConvergenceError::InfeasibleConfig("epsilon outside [0,1]".into()));
        }
        let max_entropy = (self.mdp.n_actions as f64).ln();
        if self.delta_grid.iter().any(|&d| d < 0.0 || d > max_entropy) {
            return Err(ConvergenceError::InfeasibleConfig(format!(
                "delta outside [0, ln {} = {max_entropy:.4}]",
                self.mdp.n_actions
            )));
        }
        if self.population_size < 2 {
            return Err(ConvergenceError::InfeasibleConfig("population_size must be >= 2".into()));
        }
        if self.mdp.n_critical >= self.mdp.n_states {
            return Err(ConvergenceError::InfeasibleConfig(
                "critical set must be a strict subset of the states".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(ConvergenceError::InfeasibleConfig("need at least one seed".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Independent RNG stream per (seed, purpose, indices...).
fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243F6A8885A308D3, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// The manufactured truth one sweep seed is measured against.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub mdp: SyntheticMdp,
    pub side_a: Vec<TabularPolicy>,
    pub side_b: Vec<TabularPolicy>,
    pub rewards: RewardMatrix,
    pub optimal: Matching,
}

/// R(i, j) = exact expected return of the joint policies, for every pair.
pub fn reward_matrix_from_policies(
    mdp: &SyntheticMdp,
    side_a: &[TabularPolicy],
    side_b: &[TabularPolicy],
    cap: u64,
) -> Result<RewardMatrix, ConvergenceError> {
    let values = side_a
        .iter()
        .map(|a| {
            side_b
                .iter()
                .map(|b| expected_reward_with_cap(mdp, a, b, cap))
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ids = |prefix: &str| {
        (0..side_a.len().max(side_b.len()))
            .map(|i| format!("{prefix}{i:03}"))
            .take(if prefix == "a" { side_a.len() } else { side_b.len() })
            .collect::<Vec<_>>()
    };
    Ok(RewardMatrix::new(ids("a"), ids("b"), values)?)
}

/// Builds the MDP, one base policy per individual (deterministic at
/// critical states), the true reward matrix R*, and the optimal stable
/// matching M*.
pub fn build_ground_truth(
    config: &SweepConfig,
    seed: u64,
) -> Result<GroundTruth, ConvergenceError> {
    config.validate()?;
    let spec = config.mdp;
    let mdp = SyntheticMdp::generate(
        spec.n_states,
        spec.n_critical,
        spec.n_actions,
        spec.horizon,
        derive_seed(&[seed, 1]),
    )?;
    let make_side = |side: u64| -> Vec<TabularPolicy> {
        (0..config.population_size)
            .map(|k| {
                TabularPolicy::random(
                    spec.n_states,
                    spec.n_actions,
                    mdp.critical_states(),
                    derive_seed(&[seed, 2, side, k as u64]),
                )
            })
            .collect()
    };
    let side_a = make_side(0);
    let side_b = make_side(1);
    let rewards = reward_matrix_from_policies(&mdp, &side_a, &side_b, config.enumeration_cap)?;
    let optimal = gale_shapley(&preferences_from_rewards(&rewards), ProposingSide::A)?;
    Ok(GroundTruth { mdp, side_a, side_b, rewards, optimal })
}

/// Mixes each critical-state row toward uniform until its Shannon entropy
/// hits `delta` (bisection on the mixing weight). Entropy is the knob the
/// deterministic-decisions hypothesis bounds, so the knob here is entropy,
/// not sup-distance.
pub fn widen_to_entropy(
    policy: &TabularPolicy,
    delta: f64,
    critical_states: &BTreeSet<usize>,
) -> Result<TabularPolicy, ConvergenceError> {
    if delta == 0.0 {
        return Ok(policy.clone());
    }
    let n_actions = policy.rows().first().map(Vec::len).unwrap_or(0);
    let uniform = vec![1.0 / n_actions as f64; n_actions];
    let mut rows = policy.rows().to_vec();
    for (state, row) in rows.iter_mut().enumerate() {
        if !critical_states.contains(&state) {
            continue;
        }
        let base_entropy = shannon_entropy(row);
        if (base_entropy - delta).abs() <= 1e-12 {
            continue;
        }
        if base_entropy > delta {
            return Err(ConvergenceError::InfeasibleWiden { current: base_entropy, target: delta });
        }
        let mixed = |alpha: f64, row: &[f64]| -> Vec<f64> {
            row.iter()
                .zip(&uniform)
                .map(|(&p, &u)| (1.0 - alpha) * p + alpha * u)
                .collect()
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if shannon_entropy(&mixed(mid, row)) < delta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        *row = mixed(0.5 * (lo + hi), row);
    }
    Ok(TabularPolicy::new(rows, delta, critical_states)?)
}

/// One measured grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    /// Mean |R_hat - R*| over all pairs.
    pub mean_abs_error: f64,
    /// Worst pair, since the bound is per-pair.
    pub max_abs_error: f64,
    /// Agreement between the induced matching and M*.
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub epsilon_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cells_at(&self, epsilon: f64, delta: f64) -> impl Iterator<Item = &SweepCell> {
        self.cells
            .iter()
            .filter(move |c| c.epsilon == epsilon && c.delta == delta)
    }

    pub fn mean_error_at(&self, epsilon: f64, delta: f64) -> f64 {
        let cells: Vec<&SweepCell> = self.cells_at(epsilon, delta).collect();
        cells.iter().map(|c| c.mean_abs_error).sum::<f64>() / cells.len().max(1) as f64
    }

    pub fn mean_agreement_at(&self, epsilon: f64, delta: f64) -> f64 {
        let cells: Vec<&SweepCell> = self.cells_at(epsilon, delta).collect();
        cells.iter().map(|c| c.agreement).sum::<f64>() / cells.len().max(1) as f64
    }

    /// Smallest nonzero epsilon that still kept agreement at 1.0 on every
    /// seed, at the given delta.
    pub fn convergence_threshold(&self, delta: f64) -> Option<f64> {
        self.epsilon_grid
            .iter()
            .copied()
            .filter(|&e| e > 0.0)
            .find(|&e| self.cells_at(e, delta).all(|c| c.agreement == 1.0))
    }
}

/// Per seed: rebuild ground truth, widen critical rows to each delta,
/// perturb every individual's policy at each epsilon, recompute the reward
/// matrix and matching, and measure error and agreement against truth.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult, ConvergenceError> {
    config.validate()?;
    let per_seed: Vec<Result<Vec<SweepCell>, ConvergenceError>> = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, seed))
        .collect();
    let mut cells = Vec::new();
    for seed_cells in per_seed {
        cells.extend(seed_cells?);
    }
    Ok(SweepResult {
        epsilon_grid: config.epsilon_grid.clone(),
        delta_grid: config.delta_grid.clone(),
        seeds: config.seeds.clone(),
        cells,
    })
}

fn run_seed(config: &SweepConfig, seed: u64) -> Result<Vec<SweepCell>, ConvergenceError> {
    let truth = build_ground_truth(config, seed)?;
    let critical = truth.mdp.critical_states().clone();
    let mut cells = Vec::new();
    for (di, &delta) in config.delta_grid.iter().enumerate() {
        let widened_a: Vec<TabularPolicy> = truth
            .side_a
            .iter()
            .map(|p| widen_to_entropy(p, delta, &critical))
            .collect::<Result<_, _>>()?;
        let widened_b: Vec<TabularPolicy> = truth
            .side_b
            .iter()
            .map(|p| widen_to_entropy(p, delta, &critical))
            .collect::<Result<_, _>>()?;
        for (ei, &epsilon) in config.epsilon_grid.iter().enumerate() {
            let perturbed_a = widened_a
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    perturb(p, epsilon, derive_seed(&[seed, 3, 0, k as u64, ei as u64, di as u64]))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let perturbed_b = widened_b
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    perturb(p, epsilon, derive_seed(&[seed, 3, 1, k as u64, ei as u64, di as u64]))
                })
                .collect::<Result<Vec<_>, _>>()?;

            let n = config.population_size;
            let mut predicted = vec![vec![0.0; n]; n];
            let mut abs_errors = Vec::with_capacity(n * n);
            for (i, pa) in perturbed_a.iter().enumerate() {
                for (j, pb) in perturbed_b.iter().enumerate() {
                    let r_hat = expected_reward_with_cap(
                        &truth.mdp,
                        pa as &dyn DecisionPolicy,
                        pb as &dyn DecisionPolicy,
                        config.enumeration_cap,
                    )?;
                    predicted[i][j] = r_hat;
                    abs_errors.push((r_hat - truth.rewards.values[i][j]).abs());
                }
            }
            let predicted_matrix = RewardMatrix::new(
                truth.rewards.side_a.clone(),
                truth.rewards.side_b.clone(),
                predicted,
            )?;
            let induced =
                gale_shapley(&preferences_from_rewards(&predicted_matrix), ProposingSide::A)?;
            let agreement = matching_agreement(&induced, &truth.optimal)?;
            cells.push(SweepCell {
                epsilon,
                delta,
                seed,
                mean_abs_error: abs_errors.iter().sum::<f64>() / abs_errors.len() as f64,
                max_abs_error: abs_errors.iter().copied().fold(0.0, f64::max),
                agreement,
            });
        }
    }
    Ok(cells)
}

/// Least-squares line of the per-seed mean errors against epsilon at a
/// fixed delta, with a 3-sigma envelope check over every observation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBoundFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_std: f64,
    /// True when every observation sits below slope·eps + intercept + 3σ.
    pub all_below_bound: bool,
    pub n_points: usize,
}

pub fn fit_error_bound(result: &SweepResult, delta: f64) -> Result<ErrorBoundFit, ConvergenceError> {
    let points: Vec<(f64, f64)> = result
        .cells
        .iter()
        .filter(|c| c.delta == delta)
        .map(|c| (c.epsilon, c.mean_abs_error))
        .collect();
    let distinct: BTreeSet<u64> = points.iter().map(|(x, _)| x.to_bits()).collect();
    if distinct.len() < 3 {
        return Err(ConvergenceError::TooFewPoints { needed: 3, got: distinct.len() });
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &points {
        sxx += (x - mean_x).powi(2);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let residuals: Vec<f64> = points.iter().map(|(x, y)| y - (slope * x + intercept)).collect();
    let dof = (points.len().saturating_sub(2)).max(1) as f64;
    let residual_std = (residuals.iter().map(|r| r * r).sum::<f64>() / dof).sqrt();
    let all_below_bound = points
        .iter()
        .all(|(x, y)| *y <= slope * x + intercept + 3.0 * residual_std + 1e-12);
    Ok(ErrorBoundFit { slope, intercept, residual_std, all_below_bound, n_points: points.len() })
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(values: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite"));
        let mut out = vec![0.0; values.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
                j += 1;
            }
            let avg = (i + 1 + j + 1) as f64 / 2.0;
            for &idx in &order[i..=j] {
                out[idx] = avg;
            }
            i = j + 1;
        }
        out
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in rx.iter().zip(&ry) {
        cov += (x - mx) * (y - my);
        vx += (x - mx).powi(2);
        vy += (y - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

/// Aligned text table of per-grid-point aggregates.
pub fn render_sweep_table(result: &SweepResult) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>8} {:>8} {:>12} {:>12} {:>12}\n",
        "epsilon", "delta", "mean|err|", "max|err|", "agreement"
    ));
    out.push_str(&format!("{}\n", "-".repeat(58)));
    for &delta in &result.delta_grid {
        for &epsilon in &result.epsilon_grid {
            let cells: Vec<&SweepCell> = result.cells_at(epsilon, delta).collect();
            if cells.is_empty() {
                continue;
            }
            let mean_err = result.mean_error_at(epsilon, delta);
            let max_err = cells.iter().map(|c| c.max_abs_error).fold(0.0, f64::max);
            let agreement = result.mean_agreement_at(epsilon, delta);
            out.push_str(&format!(
                "{epsilon:>8.3} {delta:>8.3} {mean_err:>12.6} {max_err:>12.6} {agreement:>12.4}\n"
            ));
        }
    }
    if let Some(threshold) = result.convergence_threshold(result.delta_grid[0]) {
        out.push_str(&format!(
            "\nempirical convergence threshold (delta={}): epsilon <= {threshold}\n",
            result.delta_grid[0]
        ));
    }
    out
}

/// Plot-ready series of (epsilon, mean error) and (epsilon, mean
/// agreement) per delta, for external plotting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub fn plot_series(result: &SweepResult) -> Vec<PlotSeries> {
    let mut series = Vec::new();
    for &delta in &result.delta_grid {
        series.push(PlotSeries {
            name: format!("mean_abs_error vs epsilon (delta={delta})"),
            points: result
                .epsilon_grid
                .iter()
                .map(|&e| (e, result.mean_error_at(e, delta)))
                .collect(),
        });
        series.push(PlotSeries {
            name: format!("mean_agreement vs epsilon (delta={delta})"),
            points: result
                .epsilon_grid
                .iter()
                .map(|&e| (e, result.mean_agreement_at(e, delta)))
                .collect(),
        });
    }
    series
}

/// Writes the machine-readable result, the text table, and the plot spec.
pub fn persist_sweep(
    store: &ArtifactStore,
    key: &str,
    result: &SweepResult,
) -> Result<(), ConvergenceError> {
    store.persist_json("sweeps", key, result)?;
    store.persist("sweeps", &format!("{key}.table.txt"), render_sweep_table(result).as_bytes())?;
    store.persist_json("sweeps", &format!("{key}.plot"), &plot_series(result))?;
    Ok(())
}
