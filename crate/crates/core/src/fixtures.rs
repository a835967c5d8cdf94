//! Synthetic datasets and a deterministic scripted provider.
//!
//! These power offline demo runs and the replay fixtures in the test
//! suites: the provider answers persona, conversation, narrator, event and
//! observer prompts with content derived purely from the request digest
//! and, for observer prompts, from a label table, so a recorded corpus is
//! reproducible end to end. Observer scores follow the oracle-quality rule
//! `label·10 ± gaussian(sigma)`, clamped to [0, 10].

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{
    DivorceSurvey, Gender, MatchRecord, PairKey, SpeedDatingProfile, INTEREST_ACTIVITIES,
    TRAIT_NAMES,
};
use crate::gateway::{CacheKey, ChatRequest, MockProvider, MockReply};

/// Synthetic two-sided population: `n_pairs` disjoint woman-man pairs with
/// alternating labels and label-correlated interest profiles.
pub fn synthetic_speed_dating(
    n_pairs: usize,
    seed: u64,
) -> (Vec<SpeedDatingProfile>, Vec<MatchRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut profiles = Vec::new();
    let mut matches = Vec::new();
    for i in 0..n_pairs {
        let label = i % 2 == 0;
        let f_id = format!("f{i:03}");
        let m_id = format!("m{i:03}");
        // Matched pairs share an interest anchor so similarity carries some
        // signal; unmatched pairs draw independently.
        let anchor: f64 = rng.gen_range(3.0..8.0);
        for (id, gender) in [(f_id.clone(), Gender::Female), (m_id.clone(), Gender::Male)] {
            let center = if label { anchor } else { rng.gen_range(3.0..8.0) };
            let interest_ratings: BTreeMap<String, f64> = INTEREST_ACTIVITIES
                .iter()
                .map(|a| {
                    let v: f64 = center + rng.gen_range(-2.0..2.0);
                    (a.to_string(), v.clamp(1.0, 10.0).round())
                })
                .collect();
            let self_ratings: BTreeMap<String, f64> = TRAIT_NAMES
                .iter()
                .map(|t| (t.to_string(), rng.gen_range(1.0f64..=10.0).round()))
                .collect();
            let partner_preferences: BTreeMap<String, f64> = TRAIT_NAMES
                .iter()
                .map(|t| (t.to_string(), rng.gen_range(0.0f64..=30.0).round()))
                .collect();
            profiles.push(SpeedDatingProfile {
                participant_id: id,
                age: rng.gen_range(21..45),
                gender,
                interest_ratings,
                self_ratings,
                partner_preferences,
                wave_id: format!("w{}", i / 10),
            });
        }
        matches.push(MatchRecord { pair: PairKey::new(f_id, m_id).expect("distinct ids"), label });
    }
    (profiles, matches)
}

/// Synthetic couples: married couples answer high, divorced answer low,
/// with noise, mirroring the real survey's strong feature-label coupling.
pub fn synthetic_divorce(n_couples: usize, seed: u64) -> Vec<DivorceSurvey> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_couples)
        .map(|i| {
            let married = i % 2 == 0;
            let answers = (0..54)
                .map(|_| {
                    let base: i32 = if married { 3 } else { 1 };
                    (base + rng.gen_range(-1..=1)).clamp(0, 4)
                })
                .collect();
            DivorceSurvey {
                couple_id: format!("couple-{i:03}"),
                answers,
                outcome_label: married,
            }
        })
        .collect()
}

fn digest_of(request: &ChatRequest) -> String {
    CacheKey::compute(request, "scripted").digest()[..12].to_string()
}

/// Two uniforms from the digest, for a deterministic gaussian draw.
fn gaussian_from_digest(digest: &str, sigma: f64, salt: u64) -> f64 {
    let mut hasher_input = digest.as_bytes().to_vec();
    hasher_input.extend_from_slice(&salt.to_le_bytes());
    let mut acc: u64 = 0xcbf29ce484222325;
    for b in hasher_input {
        acc ^= b as u64;
        acc = acc.wrapping_mul(0x100000001b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(acc);
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn narrative_for(subject: &str, digest: &str, words: usize) -> String {
    let mut text = format!(
        "This persona describes {subject}, drawn from their structured profile (trace {digest})."
    );
    let filler = [
        "They balance steady routines with a taste for new experiences.",
        "Conversation comes easily once a shared interest surfaces.",
        "They value honesty over polish and say so directly.",
        "Weekends lean toward friends, long walks, and unhurried meals.",
        "Under pressure they get quiet first and practical second.",
    ];
    let mut count = text.split_whitespace().count();
    let mut i = 0;
    while count < words {
        let sentence = filler[i % filler.len()];
        text.push(' ');
        text.push_str(sentence);
        count += sentence.split_whitespace().count();
        i += 1;
    }
    text
}

fn extract_after<'a>(haystack: &'a str, tag: &str) -> Option<&'a str> {
    let start = haystack.find(tag)? + tag.len();
    let rest = &haystack[start..];
    let end = rest.find(|c: char| c.is_whitespace() || c == ',').unwrap_or(rest.len());
    Some(&rest[..end])
}

/// Agent ids named on transcript lines (`id: text`), in appearance order.
fn transcript_ids(prompt: &str) -> Vec<String> {
    let mut ids = Vec::new();
    for line in prompt.lines() {
        if let Some(colon) = line.find(": ") {
            let head = &line[..colon];
            if !head.is_empty()
                && head.len() <= 40
                && head.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
                && !ids.contains(&head.to_string())
            {
                ids.push(head.to_string());
            }
        }
    }
    ids
}

/// Deterministic provider for the whole pipeline. `labels` maps canonical
/// pair keys (and, for divorce, couple ids) to the positive-outcome flag.
pub fn scripted_provider(
    labels: BTreeMap<String, bool>,
    sigma: f64,
    seed: u64,
) -> MockProvider {
    MockProvider::with_responder(move |request: &ChatRequest| {
        let digest = digest_of(request);
        let prompt = request.flat_text();
        let system = &request.messages[0].text;

        // Environment narrator: scenes and evolutions.
        if system.contains("LIFE CIRCUMSTANCES") {
            return MockReply::Text(format!(
                "Scene {digest}: the evening presses in, a deadline on the table and no easy exit."
            ));
        }
        // Critical-event designer.
        if system.contains("numbered lists") {
            return MockReply::Text(
                "1. A job transfer forces a cross-country relocation choice\n\
                 2. A hidden loan surfaces and trust cracks\n\
                 3. An aging parent moves in needing daily care"
                    .into(),
            );
        }
        // Persona generation.
        if prompt.contains("persona narrative for a speed dating participant")
            || prompt.contains("persona for a married individual")
        {
            // The rendered profile's ID line already carries the role
            // suffix for divorce halves.
            let subject = extract_after(&prompt, "ID: ").unwrap_or("someone");
            return MockReply::Text(narrative_for(subject, &digest, 330));
        }
        // Observer prompts: score from the label table.
        let is_participant = prompt.contains("from your own perspective");
        let is_external = prompt.contains("relationship psychologist");
        if is_participant || is_external {
            let divorce_mode = prompt.contains("divorce likelihood");
            let ids = transcript_ids(&prompt);
            let label = lookup_label(&labels, &ids);
            let Some(label) = label else {
                return MockReply::Unscripted;
            };
            let noise = gaussian_from_digest(&digest, sigma, seed);
            let score = if divorce_mode {
                // Scale reads as divorce likelihood: married couples low.
                if label { 0.0 + noise.abs() } else { 10.0 - noise.abs() }
            } else if label {
                10.0 - noise.abs()
            } else {
                0.0 + noise.abs()
            };
            let score = score.clamp(0.0, 10.0);
            return if is_external {
                MockReply::Text(format!(
                    "<ANALYSIS>signals traced via {digest}</ANALYSIS><SCORE>{score:.2}</SCORE>"
                ))
            } else {
                MockReply::Text(format!("<SCORE>{score:.2}</SCORE>"))
            };
        }
        // Conversation turns: tagged reply with digest-unique channels.
        MockReply::Text(format!(
            "<INNER_THOUGHT>private-{digest}</INNER_THOUGHT>\
             <RESPONSE>We should talk this through; here is where I stand ({digest}).</RESPONSE>"
        ))
    })
}

fn lookup_label(labels: &BTreeMap<String, bool>, ids: &[String]) -> Option<bool> {
    // Divorce subjects are `<couple>-husband` / `<couple>-wife`.
    for id in ids {
        for suffix in ["-husband", "-wife"] {
            if let Some(couple) = id.strip_suffix(suffix) {
                if let Some(&label) = labels.get(couple) {
                    return Some(label);
                }
            }
        }
    }
    // Speed dating: the two agent ids form a canonical pair key.
    let agent_ids: Vec<&String> = ids.iter().filter(|id| !id.starts_with("[Scene]")).collect();
    for (i, a) in agent_ids.iter().enumerate() {
        for b in &agent_ids[i + 1..] {
            if let Ok(pair) = PairKey::new(a.as_str(), b.as_str()) {
                if let Some(&label) = labels.get(&pair.storage_key()) {
                    return Some(label);
                }
            }
        }
    }
    None
}

/// Label table for [`scripted_provider`] from match records.
pub fn label_table(matches: &[MatchRecord]) -> BTreeMap<String, bool> {
    matches
        .iter()
        .map(|m| (m.pair.storage_key(), m.label))
        .collect()
}

/// Label table for divorce couples.
pub fn divorce_label_table(surveys: &[DivorceSurvey]) -> BTreeMap<String, bool> {
    surveys
        .iter()
        .map(|s| (s.couple_id.clone(), s.outcome_label))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_population_is_deterministic() {
        let (p1, m1) = synthetic_speed_dating(10, 7);
        let (p2, m2) = synthetic_speed_dating(10, 7);
        assert_eq!(p1.len(), 20);
        assert_eq!(m1.len(), 10);
        assert_eq!(serde_json::to_string(&p1).unwrap(), serde_json::to_string(&p2).unwrap());
        assert_eq!(m1, m2);
        assert_eq!(m1.iter().filter(|m| m.label).count(), 5);
    }

    #[test]
    fn synthetic_narratives_land_in_the_word_band() {
        let text = narrative_for("f000", "abc", 330);
        let count = text.split_whitespace().count();
        assert!((300..=500).contains(&count), "got {count} words");
    }

    #[test]
    fn transcript_id_extraction_finds_both_speakers() {
        let prompt = "Conversation:\nf001: hello there\nm001: hi back\n[Scene] rain starts\nf001: more";
        let ids = transcript_ids(prompt);
        assert!(ids.contains(&"f001".to_string()));
        assert!(ids.contains(&"m001".to_string()));
    }

    #[test]
    fn divorce_surveys_separate_classes() {
        let surveys = synthetic_divorce(20, 3);
        let married_mean: f64 = surveys
            .iter()
            .filter(|s| s.outcome_label)
            .map(|s| s.answers.iter().sum::<i32>() as f64 / 54.0)
            .sum::<f64>()
            / 10.0;
        let divorced_mean: f64 = surveys
            .iter()
            .filter(|s| !s.outcome_label)
            .map(|s| s.answers.iter().sum::<i32>() as f64 / 54.0)
            .sum::<f64>()
            / 10.0;
        assert!(married_mean > divorced_mean + 1.0);
    }
}
