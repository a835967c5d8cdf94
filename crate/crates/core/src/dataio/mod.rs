//! Dataset ingestion and artifact persistence.
//!
//! Two dataset families arrive as delimiter-separated text with a header
//! row: speed-dating profiles (one row per recorded date) and divorce
//! surveys (one row per couple). Loading is row-tolerant — a malformed row
//! lands in the rejects list with a reason instead of failing the whole
//! file, because the speed-dating data is known-sparse. A user-supplied
//! [`SpeedDatingColumnMap`] decouples the loader from any particular
//! published variant's column names.
//!
//! Everything the pipeline produces (personas, transcripts, ratings,
//! weights, reports) goes through [`ArtifactStore`], a directory tree keyed
//! by `(kind, key)` with atomic writes.

mod store;

pub use store::{ArtifactMeta, ArtifactStore, StorageReceipt};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 17 interest activities every speed-dating profile must rate.
pub const INTEREST_ACTIVITIES: [&str; 17] = [
    "sports", "tvsports", "exercise", "dining", "museums", "art", "hiking", "gaming", "clubbing",
    "reading", "tv", "theater", "movies", "concerts", "music", "shopping", "yoga",
];

/// The five traits used for both self-ratings and partner preferences.
pub const TRAIT_NAMES: [&str; 5] = ["attractiveness", "sincerity", "intelligence", "fun", "ambition"];

/// Number of answers a divorce survey must carry.
pub const DIVORCE_QUESTION_COUNT: usize = 54;

#[derive(Debug, Error)]
pub enum DataIoError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing required column `{column}`")]
    MissingColumn { column: String },
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("artifact key must be nonempty")]
    EmptyKey,
    #[error("invalid artifact key `{0}`")]
    InvalidKey(String),
    #[error("artifact not found: {kind}/{key}")]
    NotFound { kind: String, key: String },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("pair members must be distinct (got `{0}` twice)")]
    DegeneratePair(String),
}

impl DataIoError {
    /// I/O failures are worth retrying; everything else is deterministic.
    pub fn is_retriable(&self) -> bool {
        matches!(self, DataIoError::Io(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    fn parse(token: &str) -> Option<Gender> {
        match token.trim().to_ascii_lowercase().as_str() {
            "0" | "f" | "female" | "woman" => Some(Gender::Female),
            "1" | "m" | "male" | "man" => Some(Gender::Male),
            _ => None,
        }
    }
}

/// One participant's pre-dating profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeedDatingProfile {
    pub participant_id: String,
    pub age: u32,
    pub gender: Gender,
    /// Activity name → score in [1, 10]. Always exactly 17 entries.
    pub interest_ratings: BTreeMap<String, f64>,
    /// Trait name → self-score in [1, 10]. Always exactly 5 entries.
    pub self_ratings: BTreeMap<String, f64>,
    /// Trait name → nonnegative importance weight (some survey waves
    /// distribute 100 points, so no upper bound).
    pub partner_preferences: BTreeMap<String, f64>,
    pub wave_id: String,
}

impl SpeedDatingProfile {
    /// Flat numeric view used by the similarity baseline: age, then the 17
    /// interests, 5 self-ratings, and 5 preferences in canonical name order.
    pub fn feature_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(28);
        v.push(self.age as f64);
        v.extend(self.interest_ratings.values().copied());
        v.extend(self.self_ratings.values().copied());
        v.extend(self.partner_preferences.values().copied());
        v
    }
}

/// Canonically ordered pair of participant ids: `first() <= second()`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey(String, String);

impl PairKey {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Result<PairKey, DataIoError> {
        let (a, b) = (a.into(), b.into());
        if a == b {
            return Err(DataIoError::DegeneratePair(a));
        }
        if a <= b {
            Ok(PairKey(a, b))
        } else {
            Ok(PairKey(b, a))
        }
    }

    pub fn first(&self) -> &str {
        &self.0
    }

    pub fn second(&self) -> &str {
        &self.1
    }

    /// Filesystem-safe key for the artifact store.
    pub fn storage_key(&self) -> String {
        format!("{}--{}", self.0, self.1)
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.0, self.1)
    }
}

/// Observed mutual-match outcome for a canonical pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub pair: PairKey,
    /// True iff both participants wanted to see each other again.
    pub label: bool,
}

/// One couple's survey: exactly 54 answers plus the marriage outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivorceSurvey {
    pub couple_id: String,
    pub answers: Vec<i32>,
    /// True = still married, false = divorced.
    pub outcome_label: bool,
}

/// A row the loader could not accept, with the 1-based data-row number.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedRow {
    pub row: usize,
    pub reason: String,
}

/// Maps the loader's required fields onto a concrete file's column names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeedDatingColumnMap {
    pub participant_id: String,
    pub partner_id: String,
    pub age: String,
    pub gender: String,
    pub wave_id: String,
    pub match_label: String,
    /// Activity name → column name; must cover all 17 activities.
    pub interests: BTreeMap<String, String>,
    /// Trait name → column name; must cover all 5 traits.
    pub self_ratings: BTreeMap<String, String>,
    /// Trait name → column name; must cover all 5 traits.
    pub partner_preferences: BTreeMap<String, String>,
    /// Optional during-date signal columns (stage-2 features), name → column.
    pub during_date: BTreeMap<String, String>,
}

impl SpeedDatingColumnMap {
    /// Column names of the widely circulated Columbia speed-dating CSV.
    pub fn columbia() -> Self {
        let interests = INTEREST_ACTIVITIES
            .iter()
            .map(|a| (a.to_string(), a.to_string()))
            .collect();
        let self_cols = ["attr3_1", "sinc3_1", "intel3_1", "fun3_1", "amb3_1"];
        let pref_cols = ["attr1_1", "sinc1_1", "intel1_1", "fun1_1", "amb1_1"];
        let during_cols = ["attr", "sinc", "intel", "fun", "amb", "shar", "like", "prob"];
        SpeedDatingColumnMap {
            participant_id: "iid".into(),
            partner_id: "pid".into(),
            age: "age".into(),
            gender: "gender".into(),
            wave_id: "wave".into(),
            match_label: "match".into(),
            interests,
            self_ratings: TRAIT_NAMES
                .iter()
                .zip(self_cols)
                .map(|(t, c)| (t.to_string(), c.to_string()))
                .collect(),
            partner_preferences: TRAIT_NAMES
                .iter()
                .zip(pref_cols)
                .map(|(t, c)| (t.to_string(), c.to_string()))
                .collect(),
            during_date: during_cols
                .iter()
                .map(|c| (c.to_string(), c.to_string()))
                .collect(),
        }
    }

    fn required_columns(&self) -> Vec<&str> {
        let mut cols = vec![
            self.participant_id.as_str(),
            self.partner_id.as_str(),
            self.age.as_str(),
            self.gender.as_str(),
            self.wave_id.as_str(),
            self.match_label.as_str(),
        ];
        cols.extend(self.interests.values().map(String::as_str));
        cols.extend(self.self_ratings.values().map(String::as_str));
        cols.extend(self.partner_preferences.values().map(String::as_str));
        cols
    }
}

/// Everything `load_speed_dating` produced from one file.
#[derive(Debug, Clone)]
pub struct SpeedDatingLoad {
    pub profiles: Vec<SpeedDatingProfile>,
    pub matches: Vec<MatchRecord>,
    /// Per-pair during-date features averaged over row directions, in the
    /// column map's sorted key order. Empty when no during-date columns map.
    pub during_date: BTreeMap<PairKey, Vec<f64>>,
    pub rejects: Vec<RejectedRow>,
    pub rows_read: usize,
    pub rows_accepted: usize,
}

fn strip_bom(s: &str) -> &str {
    s.strip_prefix('\u{feff}').unwrap_or(s)
}

fn detect_delimiter(header: &str) -> u8 {
    let candidates = [b',', b';', b'\t'];
    let mut best = b',';
    let mut best_count = 0usize;
    for &c in &candidates {
        let count = header.bytes().filter(|&b| b == c).count();
        if count > best_count {
            best = c;
            best_count = count;
        }
    }
    best
}

struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Table, DataIoError> {
        let text = std::fs::read_to_string(path)?;
        let text = strip_bom(&text);
        let first_line = text.lines().next().unwrap_or("");
        let delimiter = detect_delimiter(first_line);
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .flexible(true)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| DataIoError::Malformed(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            rows.push(rec.map_err(|e| DataIoError::Malformed(e.to_string()))?);
        }
        Ok(Table { header, rows })
    }

    fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn cell<'a>(&self, row: &'a csv::StringRecord, idx: usize) -> &'a str {
        row.get(idx).unwrap_or("").trim()
    }
}

fn parse_score(raw: &str, field: &str, lo: f64, hi: f64) -> Result<f64, String> {
    if raw.is_empty() {
        return Err(format!("{field}: missing value"));
    }
    let v: f64 = raw
        .parse()
        .map_err(|_| format!("{field}: not a number (`{raw}`)"))?;
    if !v.is_finite() || v < lo || v > hi {
        return Err(format!("{field}: {v} out of range [{lo},{hi}]"));
    }
    Ok(v)
}

/// Loads speed-dating rows into profiles and canonical match records.
///
/// Every input row either contributes (a profile occurrence and one side of
/// a match record) or lands in `rejects` with a reason. Match records are
/// deduplicated by canonical pair; when duplicate directions disagree on
/// the label, the conjunction wins so the result is independent of row
/// order.
pub fn load_speed_dating(
    path: &Path,
    map: &SpeedDatingColumnMap,
) -> Result<SpeedDatingLoad, DataIoError> {
    let table = Table::read(path)?;
    for col in map.required_columns() {
        if table.column_index(col).is_none() {
            return Err(DataIoError::MissingColumn { column: col.to_string() });
        }
    }
    let idx = |name: &str| table.column_index(name).expect("checked above");
    let id_i = idx(&map.participant_id);
    let pid_i = idx(&map.partner_id);
    let age_i = idx(&map.age);
    let gender_i = idx(&map.gender);
    let wave_i = idx(&map.wave_id);
    let label_i = idx(&map.match_label);

    // During-date columns are optional: skip any not present in the file.
    let during_cols: Vec<(String, usize)> = map
        .during_date
        .iter()
        .filter_map(|(name, col)| table.column_index(col).map(|i| (name.clone(), i)))
        .collect();

    let mut profiles: BTreeMap<String, SpeedDatingProfile> = BTreeMap::new();
    let mut profile_order: Vec<String> = Vec::new();
    let mut labels: BTreeMap<PairKey, bool> = BTreeMap::new();
    let mut during_acc: BTreeMap<PairKey, Vec<(f64, usize)>> = BTreeMap::new();
    let mut rejects = Vec::new();

    for (row_no, row) in table.rows.iter().enumerate() {
        let row_no = row_no + 1;
        let reject = |reason: String, rejects: &mut Vec<RejectedRow>| {
            rejects.push(RejectedRow { row: row_no, reason });
        };

        let participant_id = table.cell(row, id_i).to_string();
        let partner_id = table.cell(row, pid_i).to_string();
        if participant_id.is_empty() || partner_id.is_empty() {
            reject("missing participant or partner id".into(), &mut rejects);
            continue;
        }

        let parsed: Result<(SpeedDatingProfile, bool), String> = (|| {
            let age_raw = table.cell(row, age_i);
            let age_f: f64 = age_raw
                .parse()
                .map_err(|_| format!("age: not a number (`{age_raw}`)"))?;
            if age_f <= 0.0 || age_f.fract() != 0.0 {
                return Err(format!("age: {age_raw} is not a positive integer"));
            }
            let gender = Gender::parse(table.cell(row, gender_i))
                .ok_or_else(|| format!("gender: unrecognized value `{}`", table.cell(row, gender_i)))?;
            let mut interest_ratings = BTreeMap::new();
            for (activity, col) in &map.interests {
                let v = parse_score(table.cell(row, idx(col)), activity, 1.0, 10.0)?;
                interest_ratings.insert(activity.clone(), v);
            }
            let mut self_ratings = BTreeMap::new();
            for (trait_name, col) in &map.self_ratings {
                let v = parse_score(table.cell(row, idx(col)), trait_name, 1.0, 10.0)?;
                self_ratings.insert(trait_name.clone(), v);
            }
            let mut partner_preferences = BTreeMap::new();
            for (trait_name, col) in &map.partner_preferences {
                let v = parse_score(table.cell(row, idx(col)), trait_name, 0.0, f64::INFINITY)?;
                partner_preferences.insert(trait_name.clone(), v);
            }
            let label = match table.cell(row, label_i) {
                "0" => false,
                "1" => true,
                other => return Err(format!("match: expected 0 or 1, got `{other}`")),
            };
            Ok((
                SpeedDatingProfile {
                    participant_id: participant_id.clone(),
                    age: age_f as u32,
                    gender,
                    interest_ratings,
                    self_ratings,
                    partner_preferences,
                    wave_id: table.cell(row, wave_i).to_string(),
                },
                label,
            ))
        })();

        let (profile, label) = match parsed {
            Ok(ok) => ok,
            Err(reason) => {
                reject(reason, &mut rejects);
                continue;
            }
        };
        let pair = match PairKey::new(&participant_id, &partner_id) {
            Ok(p) => p,
            Err(_) => {
                reject("participant paired with itself".into(), &mut rejects);
                continue;
            }
        };

        if !profiles.contains_key(&participant_id) {
            profile_order.push(participant_id.clone());
            profiles.insert(participant_id.clone(), profile);
        }
        // Conjunction keeps dedup independent of row order when duplicate
        // directions disagree.
        labels
            .entry(pair.clone())
            .and_modify(|l| *l = *l && label)
            .or_insert(label);

        if !during_cols.is_empty() {
            let acc = during_acc
                .entry(pair)
                .or_insert_with(|| vec![(0.0, 0); during_cols.len()]);
            for (slot, (_, col_i)) in acc.iter_mut().zip(&during_cols) {
                if let Ok(v) = table.cell(row, *col_i).parse::<f64>() {
                    if v.is_finite() {
                        slot.0 += v;
                        slot.1 += 1;
                    }
                }
            }
        }
    }

    let rows_read = table.rows.len();
    let rows_accepted = rows_read - rejects.len();
    let during_date = during_acc
        .into_iter()
        .map(|(pair, acc)| {
            let means = acc
                .into_iter()
                .map(|(sum, n)| if n > 0 { sum / n as f64 } else { 0.0 })
                .collect();
            (pair, means)
        })
        .collect();
    Ok(SpeedDatingLoad {
        profiles: profile_order
            .into_iter()
            .map(|id| profiles.remove(&id).expect("inserted above"))
            .collect(),
        matches: labels
            .into_iter()
            .map(|(pair, label)| MatchRecord { pair, label })
            .collect(),
        during_date,
        rejects,
        rows_read,
        rows_accepted,
    })
}

/// Knobs for divorce-survey files that circulate in several variants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivorceLoadOptions {
    /// Inclusive answer bounds. The published file uses 0–4; some copies
    /// shift the same answers to 1–5.
    pub scale_min: i32,
    pub scale_max: i32,
    /// Set when the file's label column uses 1 = divorced instead of
    /// 1 = married.
    pub invert_label: bool,
    /// Label column name; defaults to the last column.
    pub label_column: Option<String>,
}

impl Default for DivorceLoadOptions {
    fn default() -> Self {
        DivorceLoadOptions {
            scale_min: 0,
            scale_max: 4,
            invert_label: false,
            label_column: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DivorceLoad {
    pub surveys: Vec<DivorceSurvey>,
    pub rejects: Vec<RejectedRow>,
    pub rows_read: usize,
    pub rows_accepted: usize,
}

/// Loads divorce surveys with the default 0–4 scale.
pub fn load_divorce(path: &Path) -> Result<DivorceLoad, DataIoError> {
    load_divorce_with(path, &DivorceLoadOptions::default())
}

pub fn load_divorce_with(
    path: &Path,
    opts: &DivorceLoadOptions,
) -> Result<DivorceLoad, DataIoError> {
    let table = Table::read(path)?;
    if table.header.is_empty() {
        return Err(DataIoError::Malformed("empty header".into()));
    }
    let label_idx = match &opts.label_column {
        Some(name) => table
            .column_index(name)
            .ok_or_else(|| DataIoError::MissingColumn { column: name.clone() })?,
        None => table.header.len() - 1,
    };

    let mut surveys = Vec::new();
    let mut rejects = Vec::new();
    for (row_no, row) in table.rows.iter().enumerate() {
        let row_no = row_no + 1;
        if row.len() != table.header.len() {
            // Ragged row: one cell is the label, the rest are answers.
            rejects.push(RejectedRow {
                row: row_no,
                reason: format!("expected 54 answers, got {}", row.len().saturating_sub(1)),
            });
            continue;
        }
        let mut answers = Vec::with_capacity(DIVORCE_QUESTION_COUNT);
        let mut bad: Option<String> = None;
        for i in 0..row.len() {
            if i == label_idx {
                continue;
            }
            let raw = table.cell(row, i);
            match raw.parse::<i32>() {
                Ok(v) if v >= opts.scale_min && v <= opts.scale_max => answers.push(v),
                Ok(v) => {
                    bad = Some(format!(
                        "answer {}: {v} out of range [{},{}]",
                        answers.len() + 1,
                        opts.scale_min,
                        opts.scale_max
                    ));
                    break;
                }
                Err(_) => {
                    bad = Some(format!("answer {}: not an integer (`{raw}`)", answers.len() + 1));
                    break;
                }
            }
        }
        if let Some(reason) = bad {
            rejects.push(RejectedRow { row: row_no, reason });
            continue;
        }
        if answers.len() != DIVORCE_QUESTION_COUNT {
            rejects.push(RejectedRow {
                row: row_no,
                reason: format!("expected 54 answers, got {}", answers.len()),
            });
            continue;
        }
        let label_raw = table.cell(row, label_idx.min(row.len().saturating_sub(1)));
        let raw_label = match label_raw {
            "0" => false,
            "1" => true,
            other => {
                rejects.push(RejectedRow {
                    row: row_no,
                    reason: format!("label: expected 0 or 1, got `{other}`"),
                });
                continue;
            }
        };
        surveys.push(DivorceSurvey {
            couple_id: format!("couple-{row_no:03}"),
            answers,
            outcome_label: if opts.invert_label { !raw_label } else { raw_label },
        });
    }
    let rows_read = table.rows.len();
    let rows_accepted = rows_read - rejects.len();
    Ok(DivorceLoad { surveys, rejects, rows_read, rows_accepted })
}
