//! Preference orders from a reward matrix, Gale-Shapley stable matching,
//! and an independent stability verifier.
//!
//! The formulation is two-sided: side A ranks side B by descending reward
//! and vice versa, with exact ties broken by ascending lexicographic id so
//! preferences are always strict. Unequal side sizes are allowed; ids left
//! without a partner are reported explicitly.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatchingError {
    #[error("reward matrix entry ({row},{col}) is not finite")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("matrix is {rows}x{cols} but id lists are {side_a}x{side_b}")]
    ShapeMismatch { rows: usize, cols: usize, side_a: usize, side_b: usize },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("incomplete preference list for `{0}`")]
    IncompletePreferences(String),
    #[error("matchings cover different id universes")]
    IdUniverseMismatch,
}

/// Predicted rewards over a two-sided population: `values[i][j]` is the
/// reward for pairing `side_a[i]` with `side_b[j]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardMatrix {
    pub side_a: Vec<String>,
    pub side_b: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl RewardMatrix {
    pub fn new(
        side_a: Vec<String>,
        side_b: Vec<String>,
        values: Vec<Vec<f64>>,
    ) -> Result<RewardMatrix, MatchingError> {
        if values.len() != side_a.len() || values.iter().any(|r| r.len() != side_b.len()) {
            return Err(MatchingError::ShapeMismatch {
                rows: values.len(),
                cols: values.first().map(Vec::len).unwrap_or(0),
                side_a: side_a.len(),
                side_b: side_b.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for id in side_a.iter().chain(&side_b) {
            if !seen.insert(id.clone()) {
                return Err(MatchingError::DuplicateId(id.clone()));
            }
        }
        for (i, row) in values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(MatchingError::NonFiniteEntry { row: i, col: j });
                }
            }
        }
        Ok(RewardMatrix { side_a, side_b, values })
    }
}

/// Strict preference orders for both sides, as indices into the opposite
/// side's id list, best first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceOrders {
    pub side_a: Vec<String>,
    pub side_b: Vec<String>,
    pub a_prefs: Vec<Vec<usize>>,
    pub b_prefs: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposingSide {
    A,
    B,
}

/// A matching plus the ids that ended up unpartnered, kept per side so the
/// pairs and the unmatched sets together cover both populations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    /// Canonically sorted (a_id, b_id) pairs.
    pub pairs: Vec<(String, String)>,
    pub unmatched_a: Vec<String>,
    pub unmatched_b: Vec<String>,
}

impl Matching {
    pub fn partner_of_a<'a>(&'a self, a_id: &str) -> Option<&'a str> {
        self.pairs
            .iter()
            .find(|(a, _)| a == a_id)
            .map(|(_, b)| b.as_str())
    }

    fn side_a_universe(&self) -> BTreeSet<&str> {
        self.pairs
            .iter()
            .map(|(a, _)| a.as_str())
            .chain(self.unmatched_a.iter().map(String::as_str))
            .collect()
    }

    fn side_b_universe(&self) -> BTreeSet<&str> {
        self.pairs
            .iter()
            .map(|(_, b)| b.as_str())
            .chain(self.unmatched_b.iter().map(String::as_str))
            .collect()
    }
}

/// Ranks each id's options by descending reward, breaking exact ties by
/// ascending lexicographic id. Any strictly increasing transform of the
/// rewards leaves the result unchanged.
pub fn preferences_from_rewards(m: &RewardMatrix) -> PreferenceOrders {
    let a_prefs = (0..m.side_a.len())
        .map(|i| {
            let mut order: Vec<usize> = (0..m.side_b.len()).collect();
            order.sort_by(|&x, &y| {
                m.values[i][y]
                    .partial_cmp(&m.values[i][x])
                    .expect("finite rewards")
                    .then_with(|| m.side_b[x].cmp(&m.side_b[y]))
            });
            order
        })
        .collect();
    let b_prefs = (0..m.side_b.len())
        .map(|j| {
            let mut order: Vec<usize> = (0..m.side_a.len()).collect();
            order.sort_by(|&x, &y| {
                m.values[y][j]
                    .partial_cmp(&m.values[x][j])
                    .expect("finite rewards")
                    .then_with(|| m.side_a[x].cmp(&m.side_a[y]))
            });
            order
        })
        .collect();
    PreferenceOrders {
        side_a: m.side_a.clone(),
        side_b: m.side_b.clone(),
        a_prefs,
        b_prefs,
    }
}

fn validate_prefs(prefs: &PreferenceOrders) -> Result<(), MatchingError> {
    let check = |ids: &[String], lists: &[Vec<usize>], other_len: usize| {
        if lists.len() != ids.len() {
            return Err(MatchingError::IncompletePreferences("<missing list>".into()));
        }
        for (id, list) in ids.iter().zip(lists) {
            let distinct: BTreeSet<usize> = list.iter().copied().collect();
            if list.len() != other_len || distinct.len() != other_len || list.iter().any(|&x| x >= other_len)
            {
                return Err(MatchingError::IncompletePreferences(id.clone()));
            }
        }
        Ok(())
    };
    check(&prefs.side_a, &prefs.a_prefs, prefs.side_b.len())?;
    check(&prefs.side_b, &prefs.b_prefs, prefs.side_a.len())
}

/// Deferred acceptance. The proposing side obtains its side-optimal stable
/// matching; the result always verifies stable under [`is_stable`].
pub fn gale_shapley(
    prefs: &PreferenceOrders,
    proposing_side: ProposingSide,
) -> Result<Matching, MatchingError> {
    validate_prefs(prefs)?;
    // Run with proposers as "left"; flip views for side B proposing.
    let (left_prefs, right_prefs) = match proposing_side {
        ProposingSide::A => (&prefs.a_prefs, &prefs.b_prefs),
        ProposingSide::B => (&prefs.b_prefs, &prefs.a_prefs),
    };
    let n_left = left_prefs.len();
    let n_right = right_prefs.len();

    // right_rank[r][l] = position of left l in right r's list (lower is better)
    let right_rank: Vec<Vec<usize>> = right_prefs
        .iter()
        .map(|list| {
            let mut rank = vec![0usize; n_left];
            for (pos, &l) in list.iter().enumerate() {
                rank[l] = pos;
            }
            rank
        })
        .collect();

    let mut next_proposal = vec![0usize; n_left];
    let mut right_holds: Vec<Option<usize>> = vec![None; n_right];
    let mut free: Vec<usize> = (0..n_left).rev().collect();

    while let Some(l) = free.pop() {
        let list = &left_prefs[l];
        if next_proposal[l] >= list.len() {
            continue; // exhausted every option; stays unmatched
        }
        let r = list[next_proposal[l]];
        next_proposal[l] += 1;
        match right_holds[r] {
            None => right_holds[r] = Some(l),
            Some(current) => {
                if right_rank[r][l] < right_rank[r][current] {
                    right_holds[r] = Some(l);
                    free.push(current);
                } else {
                    free.push(l);
                }
            }
        }
    }

    let mut pairs = Vec::new();
    let mut matched_left = vec![false; n_left];
    for (r, held) in right_holds.iter().enumerate() {
        if let Some(l) = held {
            matched_left[*l] = true;
            let (a_idx, b_idx) = match proposing_side {
                ProposingSide::A => (*l, r),
                ProposingSide::B => (r, *l),
            };
            pairs.push((prefs.side_a[a_idx].clone(), prefs.side_b[b_idx].clone()));
        }
    }
    pairs.sort();
    let mut unmatched_a: Vec<String> = Vec::new();
    let mut unmatched_b: Vec<String> = Vec::new();
    match proposing_side {
        ProposingSide::A => {
            for (l, m) in matched_left.iter().enumerate() {
                if !m {
                    unmatched_a.push(prefs.side_a[l].clone());
                }
            }
            for (r, held) in right_holds.iter().enumerate() {
                if held.is_none() {
                    unmatched_b.push(prefs.side_b[r].clone());
                }
            }
        }
        ProposingSide::B => {
            for (r, held) in right_holds.iter().enumerate() {
                if held.is_none() {
                    unmatched_a.push(prefs.side_a[r].clone());
                }
            }
            for (l, m) in matched_left.iter().enumerate() {
                if !m {
                    unmatched_b.push(prefs.side_b[l].clone());
                }
            }
        }
    }
    unmatched_a.sort();
    unmatched_b.sort();
    Ok(Matching { pairs, unmatched_a, unmatched_b })
}

/// Independent stability check: returns every blocking pair — an (a, b)
/// not matched together where each strictly prefers the other over their
/// current situation (being unmatched is worse than any partner).
pub fn is_stable(
    matching: &Matching,
    prefs: &PreferenceOrders,
) -> Result<(bool, Vec<(String, String)>), MatchingError> {
    validate_prefs(prefs)?;
    let a_index = |id: &str| prefs.side_a.iter().position(|x| x == id);
    let b_index = |id: &str| prefs.side_b.iter().position(|x| x == id);

    let mut a_partner: Vec<Option<usize>> = vec![None; prefs.side_a.len()];
    let mut b_partner: Vec<Option<usize>> = vec![None; prefs.side_b.len()];
    for (a_id, b_id) in &matching.pairs {
        let (Some(i), Some(j)) = (a_index(a_id), b_index(b_id)) else {
            return Err(MatchingError::IdUniverseMismatch);
        };
        a_partner[i] = Some(j);
        b_partner[j] = Some(i);
    }

    let a_rank: Vec<Vec<usize>> = prefs
        .a_prefs
        .iter()
        .map(|list| {
            let mut rank = vec![0usize; prefs.side_b.len()];
            for (pos, &j) in list.iter().enumerate() {
                rank[j] = pos;
            }
            rank
        })
        .collect();
    let b_rank: Vec<Vec<usize>> = prefs
        .b_prefs
        .iter()
        .map(|list| {
            let mut rank = vec![0usize; prefs.side_a.len()];
            for (pos, &i) in list.iter().enumerate() {
                rank[i] = pos;
            }
            rank
        })
        .collect();

    let mut blocking = Vec::new();
    for i in 0..prefs.side_a.len() {
        for j in 0..prefs.side_b.len() {
            if a_partner[i] == Some(j) {
                continue;
            }
            let a_prefers = match a_partner[i] {
                None => true,
                Some(current) => a_rank[i][j] < a_rank[i][current],
            };
            let b_prefers = match b_partner[j] {
                None => true,
                Some(current) => b_rank[j][i] < b_rank[j][current],
            };
            if a_prefers && b_prefers {
                blocking.push((prefs.side_a[i].clone(), prefs.side_b[j].clone()));
            }
        }
    }
    Ok((blocking.is_empty(), blocking))
}

/// Fraction of side-a ids whose assignment is identical in both matchings,
/// with "unmatched" counting as an assignment value.
pub fn matching_agreement(m1: &Matching, m2: &Matching) -> Result<f64, MatchingError> {
    let universe = m1.side_a_universe();
    if universe != m2.side_a_universe() || m1.side_b_universe() != m2.side_b_universe() {
        return Err(MatchingError::IdUniverseMismatch);
    }
    if universe.is_empty() {
        return Ok(1.0);
    }
    let same = universe
        .iter()
        .filter(|a| m1.partner_of_a(a) == m2.partner_of_a(a))
        .count();
    Ok(same as f64 / universe.len() as f64)
}

/// Exhaustive reference: every stable perfect matching of an equal-sided
/// instance, found by checking all permutations. Usable up to n ≈ 8; this
/// is the oracle Gale-Shapley is verified against, so it deliberately
/// shares no code with it beyond [`is_stable`].
pub fn brute_force_stable_matchings(
    prefs: &PreferenceOrders,
) -> Result<Vec<Matching>, MatchingError> {
    validate_prefs(prefs)?;
    let n = prefs.side_a.len();
    if n != prefs.side_b.len() {
        return Err(MatchingError::ShapeMismatch {
            rows: n,
            cols: prefs.side_b.len(),
            side_a: n,
            side_b: prefs.side_b.len(),
        });
    }
    let mut assignment: Vec<usize> = (0..n).collect();
    let mut stable = Vec::new();
    permute(&mut assignment, 0, &mut |perm| {
        let mut pairs: Vec<(String, String)> = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| (prefs.side_a[i].clone(), prefs.side_b[j].clone()))
            .collect();
        pairs.sort();
        let candidate = Matching { pairs, unmatched_a: Vec::new(), unmatched_b: Vec::new() };
        if let Ok((true, _)) = is_stable(&candidate, prefs) {
            stable.push(candidate);
        }
    });
    Ok(stable)
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}
