use super::*;
use proptest::prelude::*;

fn critical(states: &[usize]) -> BTreeSet<usize> {
    states.iter().copied().collect()
}

/// 3-state, 2-action fixture with reward 1.0 at the single critical state.
///
/// From state 0 the joint action decides the branch; states 1 and 2 funnel
/// deterministically. Hand trace for always-(0,1) policies over horizon 3:
/// 0 -(0,1)-> 2 earns 0, 2 -(0,1)-> 0 earns 1, 0 -(0,1)-> 2 earns 0.
fn hand_mdp() -> SyntheticMdp {
    let transition = vec![
        vec![vec![1, 2], vec![2, 0]], // state 0: (0,0)->1 (0,1)->2 (1,0)->2 (1,1)->0
        vec![vec![2, 2], vec![2, 2]], // state 1: all -> 2
        vec![vec![0, 0], vec![0, 0]], // state 2: all -> 0
    ];
    let mut reward = vec![vec![vec![0.0; 2]; 2]; 3];
    for a1 in 0..2 {
        for a2 in 0..2 {
            reward[2][a1][a2] = 1.0;
        }
    }
    SyntheticMdp::new(critical(&[2]), transition, reward, 3, 0).unwrap()
}

fn deterministic_policy(action: usize, n_states: usize) -> TabularPolicy {
    let mut row = vec![0.0; 2];
    row[action] = 1.0;
    TabularPolicy::new(vec![row; n_states], 0.0, &critical(&[])).unwrap()
}

fn uniform_policy(n_states: usize, n_actions: usize) -> TabularPolicy {
    let row = vec![1.0 / n_actions as f64; n_actions];
    TabularPolicy::new(vec![row; n_states], (n_actions as f64).ln(), &critical(&[])).unwrap()
}

#[test]
fn zero_reward_mdp_accumulates_nothing() {
    let transition = vec![vec![vec![1, 0], vec![0, 1]], vec![vec![0, 1], vec![1, 0]]];
    let reward = vec![vec![vec![0.0; 2]; 2]; 2];
    let mdp = SyntheticMdp::new(critical(&[]), transition, reward, 4, 0).unwrap();
    let p = uniform_policy(2, 2);
    let r = rollout(&mdp, &p, &p, 7).unwrap();
    assert_eq!(r.total_reward, 0.0);
    assert_eq!(expected_reward(&mdp, &p, &p).unwrap(), 0.0);
}

#[test]
fn deterministic_policies_give_seed_independent_trajectories() {
    let mdp = hand_mdp();
    let p1 = deterministic_policy(0, 3);
    let p2 = deterministic_policy(1, 3);
    let reference = rollout(&mdp, &p1, &p2, 0).unwrap();
    for seed in 1..50 {
        let r = rollout(&mdp, &p1, &p2, seed).unwrap();
        assert_eq!(r.total_reward, reference.total_reward);
        let same = r
            .steps
            .iter()
            .zip(&reference.steps)
            .all(|(a, b)| a.state == b.state && a.action_1 == b.action_1 && a.action_2 == b.action_2);
        assert!(same, "trajectory differed at seed {seed}");
    }
    // Degenerate expectation: the single path IS the expectation.
    let exact = expected_reward(&mdp, &p1, &p2).unwrap();
    assert_eq!(exact, reference.total_reward);
}

#[test]
fn hand_traced_reward_matches() {
    let mdp = hand_mdp();
    let p1 = deterministic_policy(0, 3);
    let p2 = deterministic_policy(1, 3);
    let r = rollout(&mdp, &p1, &p2, 123).unwrap();
    assert_eq!(r.total_reward, 1.0);
    let states: Vec<usize> = r.steps.iter().map(|s| s.state).collect();
    assert_eq!(states, vec![0, 2, 0]);
}

#[test]
fn quarter_probability_leaf_gives_exactly_one_quarter() {
    // Horizon 2, uniform policies. Joint action (1,1) from the start state
    // reaches the critical state (probability 1/4), where every joint
    // action earns 1. Four first-step branches, hand-enumerable.
    let transition = vec![
        vec![vec![2, 2], vec![2, 1]], // only (1,1) reaches state 1
        vec![vec![1, 1], vec![1, 1]],
        vec![vec![2, 2], vec![2, 2]],
    ];
    let mut reward = vec![vec![vec![0.0; 2]; 2]; 3];
    for a1 in 0..2 {
        for a2 in 0..2 {
            reward[1][a1][a2] = 1.0;
        }
    }
    let mdp = SyntheticMdp::new(critical(&[1]), transition, reward, 2, 0).unwrap();
    let p = uniform_policy(3, 2);
    assert_eq!(expected_reward(&mdp, &p, &p).unwrap(), 0.25);
}

#[test]
fn monte_carlo_rollouts_agree_with_exact_expectation() {
    for mdp_seed in 0..3u64 {
        let mdp = SyntheticMdp::generate(6, 2, 2, 4, mdp_seed).unwrap();
        let p1 = TabularPolicy::random(6, 2, mdp.critical_states(), 100 + mdp_seed);
        let p2 = TabularPolicy::random(6, 2, mdp.critical_states(), 200 + mdp_seed);
        let exact = expected_reward(&mdp, &p1, &p2).unwrap();
        let n = 10_000u64;
        let samples: Vec<f64> = (0..n)
            .map(|seed| rollout(&mdp, &p1, &p2, seed).unwrap().total_reward)
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 3.0 * se + 1e-12,
            "mdp_seed {mdp_seed}: MC mean {mean} vs exact {exact} (se {se})"
        );
    }
}

#[test]
fn missing_policy_row_is_a_configuration_error() {
    let mdp = hand_mdp();
    let short = TabularPolicy::new(vec![vec![1.0, 0.0]; 2], 0.0, &critical(&[])).unwrap();
    let full = deterministic_policy(0, 3);
    assert!(matches!(
        rollout(&mdp, &short, &full, 0),
        Err(PolicyError::MissingPolicyRow(2))
    ));
}

#[test]
fn enumeration_cap_suggests_monte_carlo() {
    let mdp = hand_mdp();
    let p = uniform_policy(3, 2);
    let err = expected_reward_with_cap(&mdp, &p, &p, 3).unwrap_err();
    assert!(matches!(err, PolicyError::EnumerationCapExceeded { cap: 3 }));
    assert!(err.to_string().contains("Monte Carlo"));
}

#[test]
fn zero_epsilon_perturbation_is_the_identity() {
    let base = TabularPolicy::random(5, 3, &critical(&[1]), 42);
    let perturbed = perturb(&base, 0.0, 99).unwrap();
    assert_eq!(perturbed.rows(), base.rows());
    assert_eq!(perturbed.sup_distance(), 0.0);
}

#[test]
fn perturbed_uniform_row_stays_within_epsilon_of_half() {
    let base = TabularPolicy::new(vec![vec![0.5, 0.5]], 2.0f64.ln(), &critical(&[])).unwrap();
    for seed in 0..20 {
        let p = perturb(&base, 0.1, seed).unwrap();
        let row = &p.rows()[0];
        assert!((row[0] - 0.5).abs() <= 0.1 + 1e-12);
        assert!((row[1] - 0.5).abs() <= 0.1 + 1e-12);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn perturbation_distance_distribution_is_wide_but_bounded() {
    let base = TabularPolicy::random(6, 3, &critical(&[0, 4]), 7);
    let epsilon = 0.2;
    let mut above_half = 0;
    for seed in 0..100 {
        let p = perturb(&base, epsilon, seed).unwrap();
        let d = p.sup_distance();
        assert!(d <= epsilon + 1e-12, "seed {seed}: sup distance {d} > {epsilon}");
        if d > 0.1 {
            above_half += 1;
        }
    }
    assert!(above_half >= 50, "only {above_half}/100 seeds exceeded epsilon/2");
}

#[test]
fn epsilon_outside_unit_interval_is_rejected() {
    let base = uniform_policy(2, 2);
    assert!(matches!(perturb(&base, -0.1, 0), Err(PolicyError::EpsilonOutOfRange(_))));
    assert!(matches!(perturb(&base, 1.5, 0), Err(PolicyError::EpsilonOutOfRange(_))));
}

#[test]
fn entropy_violation_is_rejected_at_construction() {
    let rows = vec![vec![0.5, 0.5], vec![1.0, 0.0]];
    let err = TabularPolicy::new(rows, 0.0, &critical(&[0])).unwrap_err();
    assert!(matches!(err, PolicyError::EntropyViolation { state: 0, .. }));
}

#[test]
fn bad_row_sums_are_rejected() {
    let rows = vec![vec![0.6, 0.6]];
    assert!(matches!(
        TabularPolicy::new(rows, 1.0, &critical(&[])),
        Err(PolicyError::InvalidDistribution { .. })
    ));
    let rows = vec![vec![1.2, -0.2]];
    assert!(matches!(
        TabularPolicy::new(rows, 1.0, &critical(&[])),
        Err(PolicyError::InvalidDistribution { .. })
    ));
}

#[test]
fn nonzero_reward_off_critical_states_is_rejected() {
    let transition = vec![vec![vec![0, 0], vec![0, 0]], vec![vec![1, 1], vec![1, 1]]];
    let mut reward = vec![vec![vec![0.0; 2]; 2]; 2];
    reward[0][0][0] = 0.5;
    assert!(SyntheticMdp::new(critical(&[1]), transition, reward, 2, 0).is_err());
}

#[test]
fn entropy_helper_handles_zeros() {
    assert_eq!(shannon_entropy(&[1.0, 0.0]), 0.0);
    let h = shannon_entropy(&[0.5, 0.5]);
    assert!((h - 2.0f64.ln()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn perturb_always_yields_valid_distributions(
        seed in 0u64..1000,
        epsilon in 0.0f64..=1.0,
        n_actions in 2usize..5,
    ) {
        let base = TabularPolicy::random(4, n_actions, &critical(&[2]), seed);
        let p = perturb(&base, epsilon, seed.wrapping_mul(31)).unwrap();
        for row in p.rows() {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
        }
        prop_assert!(p.sup_distance() <= epsilon + 1e-12);
    }
}
