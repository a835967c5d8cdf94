//! Critical events and their keyword categorizer.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventCategory {
    CareerConflict,
    TrustBreach,
    CaregiverBurden,
    FamilyPlanning,
    Other,
}

/// A pivotal scenario where responses carry signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalEvent {
    pub event_id: String,
    pub description: String,
    pub category: EventCategory,
}

impl CriticalEvent {
    pub fn new(
        event_id: impl Into<String>,
        description: impl Into<String>,
    ) -> CriticalEvent {
        let description = description.into();
        CriticalEvent {
            event_id: event_id.into(),
            category: categorize_event(&description),
            description,
        }
    }
}

const CAREER: [&str; 7] = ["career", "job", "promotion", "relocat", "transfer", "office", "employer"];
const TRUST: [&str; 8] = ["trust", "secret", "lie", "lied", "affair", "hidden", "betray", "cheat"];
const CAREGIVER: [&str; 8] = [
    "caregiv", "care for", "caring for", "illness", "sick", "aging parent", "nursing", "diagnos",
];
const FAMILY: [&str; 6] = ["child", "baby", "kid", "pregnan", "adopt", "family planning"];

/// First matching category in a fixed order; uncategorizable text falls
/// through to `Other`.
pub fn categorize_event(description: &str) -> EventCategory {
    let lower = description.to_lowercase();
    let hit = |keys: &[&str]| keys.iter().any(|k| lower.contains(k));
    if hit(&CAREER) {
        EventCategory::CareerConflict
    } else if hit(&TRUST) {
        EventCategory::TrustBreach
    } else if hit(&CAREGIVER) {
        EventCategory::CaregiverBurden
    } else if hit(&FAMILY) {
        EventCategory::FamilyPlanning
    } else {
        EventCategory::Other
    }
}

/// Pulls the item texts out of a numbered list ("1. ...", "2) ...").
pub(crate) fn parse_numbered_list(raw: &str) -> Vec<String> {
    let mut items = Vec::new();
    for line in raw.lines() {
        let trimmed = line.trim();
        let Some(first_non_digit) = trimmed.find(|c: char| !c.is_ascii_digit()) else {
            continue;
        };
        if first_non_digit == 0 {
            continue;
        }
        let rest = &trimmed[first_non_digit..];
        let Some(body) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) else {
            continue;
        };
        let body = body.trim();
        if !body.is_empty() {
            items.push(body.to_string());
        }
    }
    items
}
