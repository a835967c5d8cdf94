//! The love observer: extracts participant ratings r1, r2 and an external
//! rating r3 from a trajectory, with optional in-context calibration from
//! labeled examples.
//!
//! Perspective isolation is structural: a participant-rating prompt carries
//! that participant's own persona and the public transcript, nothing else.
//! All scores live on the [0, 10] scale; in divorce mode the external score
//! reads as divorce likelihood and the reward module inverts it downstream.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{ArtifactStore, DataIoError, DivorceSurvey};
use crate::gateway::{ChatRequest, Gateway, GatewayError, Message};
use crate::persona::PersonaNarrative;
use crate::templates::{TemplateError, TemplateLibrary};
use crate::world::{parse, Trajectory};

/// Artifact kind rating vectors are stored under.
pub const RATING_KIND: &str = "ratings";

#[derive(Debug, Error)]
pub enum ObserverError {
    #[error("rating failed for pair {pair} ({perspective}) after {attempts} attempt(s): {detail}")]
    RatingFailed { pair: String, perspective: String, attempts: u32, detail: String },
    #[error("wrong persona for perspective: {0}")]
    PerspectiveMismatch(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Store(#[from] DataIoError),
}

/// The three extracted assessments, each in [0, 10].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingVector {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub analysis_text: Option<String>,
}

/// One labeled calibration example: a rendered summary plus the outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationExample {
    pub summary: String,
    /// True for the positive outcome (match / still married).
    pub label: bool,
    /// Divorce-likelihood anchor shown for divorce references.
    pub reference_score: Option<f64>,
}

/// Labeled examples embedded in observer prompts to anchor the scale.
/// The default configuration is balanced: 5 positive, 5 negative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub examples: Vec<CalibrationExample>,
}

impl CalibrationSet {
    pub fn new(examples: Vec<CalibrationExample>) -> CalibrationSet {
        CalibrationSet { examples }
    }

    /// Builds a divorce reference set, assigning likelihood anchors evenly
    /// across the 6.0-9.0 band for divorced couples and 1.0-4.5 for married
    /// ones.
    pub fn divorce_references(summaries: Vec<(String, bool)>) -> CalibrationSet {
        let n_divorced = summaries.iter().filter(|(_, married)| !married).count();
        let n_married = summaries.len() - n_divorced;
        let band = |i: usize, n: usize, lo: f64, hi: f64| {
            if n <= 1 {
                (lo + hi) / 2.0
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        };
        let mut divorced_seen = 0;
        let mut married_seen = 0;
        let examples = summaries
            .into_iter()
            .map(|(summary, married)| {
                let reference_score = if married {
                    let s = band(married_seen, n_married, 1.0, 4.5);
                    married_seen += 1;
                    s
                } else {
                    let s = band(divorced_seen, n_divorced, 6.0, 9.0);
                    divorced_seen += 1;
                    s
                };
                CalibrationExample { summary, label: married, reference_score: Some(reference_score) }
            })
            .collect();
        CalibrationSet { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// (#positive, #negative)
    pub fn counts(&self) -> (usize, usize) {
        let positive = self.examples.iter().filter(|e| e.label).count();
        (positive, self.examples.len() - positive)
    }

    pub fn render_speed_dating(&self) -> String {
        self.examples
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let outcome = if e.label { "Match" } else { "No Match" };
                format!("Example {}: {} -> {outcome}", i + 1, e.summary)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn render_divorce(&self) -> String {
        self.examples
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let outcome = if e.label { "married" } else { "divorced" };
                match e.reference_score {
                    Some(score) => format!(
                        "Reference {} ({outcome}, divorce likelihood {score:.1}): {}",
                        i + 1,
                        e.summary
                    ),
                    None => format!("Reference {} ({outcome}): {}", i + 1, e.summary),
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// One JSON record per line.
    pub fn to_jsonl(&self) -> String {
        self.examples
            .iter()
            .map(|e| serde_json::to_string(e).expect("example serializes"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn from_jsonl(text: &str) -> Result<CalibrationSet, serde_json::Error> {
        let examples = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<CalibrationExample>, _>>()?;
        Ok(CalibrationSet { examples })
    }

    pub fn from_jsonl_file(path: &std::path::Path) -> Result<CalibrationSet, DataIoError> {
        let text = std::fs::read_to_string(path)?;
        Ok(CalibrationSet::from_jsonl(&text)?)
    }
}

/// What the external observer sees beyond the transcript.
pub enum ExternalContext<'a> {
    SpeedDating {
        p1: &'a PersonaNarrative,
        p2: &'a PersonaNarrative,
        icl: Option<&'a CalibrationSet>,
    },
    Divorce {
        survey: &'a DivorceSurvey,
        icl: &'a CalibrationSet,
    },
}

#[derive(Debug, Clone)]
pub struct ObserverConfig {
    pub model_name: String,
    /// Assessments should be as deterministic as the provider allows.
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<i64>,
    /// Re-prompts allowed after an unparseable or out-of-range score.
    pub max_retries: u32,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        ObserverConfig {
            model_name: "observer-model".into(),
            temperature: 0.0,
            max_tokens: 500,
            seed: None,
            max_retries: 2,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StoredRating {
    pair: (String, String),
    template_version: String,
    rating: RatingVector,
}

pub struct Observer<'a> {
    gateway: &'a Gateway,
    templates: &'a TemplateLibrary,
    store: Option<&'a ArtifactStore>,
    config: ObserverConfig,
}

fn render_survey_qa(survey: &DivorceSurvey) -> String {
    survey
        .answers
        .iter()
        .enumerate()
        .map(|(i, a)| format!("Q{}: {a}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

impl<'a> Observer<'a> {
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a TemplateLibrary,
        store: Option<&'a ArtifactStore>,
        config: ObserverConfig,
    ) -> Self {
        Observer { gateway, templates, store, config }
    }

    fn ask_for_score(
        &self,
        prompt: String,
        pair: &str,
        perspective: &str,
        want_analysis: bool,
    ) -> Result<(f64, String), ObserverError> {
        let attempts = 1 + self.config.max_retries;
        let mut messages = vec![Message::user(prompt)];
        let mut last_detail = String::new();
        for _ in 0..attempts {
            let request = ChatRequest::new(
                &self.config.model_name,
                messages.clone(),
                self.config.temperature,
                self.config.seed,
                self.config.max_tokens,
            )?;
            let raw = self.gateway.complete(&request)?.text;
            let score = parse::first_block(&raw, "SCORE").and_then(|s| s.parse::<f64>().ok());
            match score {
                Some(s) if (0.0..=10.0).contains(&s) => {
                    let analysis = parse::first_block(&raw, "ANALYSIS").unwrap_or_default();
                    return Ok((s, analysis));
                }
                Some(s) => last_detail = format!("score {s} outside [0,10]"),
                None => last_detail = "no parseable <SCORE> block".into(),
            }
            messages.push(Message::assistant(raw));
            let reminder = if want_analysis {
                "Reply with an <ANALYSIS>...</ANALYSIS> block followed by exactly one \
                 <SCORE>x.x</SCORE> block, where x.x is a number between 0 and 10."
            } else {
                "Reply with exactly one <SCORE>x.x</SCORE> block, where x.x is a number \
                 between 0 and 10."
            };
            messages.push(Message::user(reminder));
        }
        Err(ObserverError::RatingFailed {
            pair: pair.to_string(),
            perspective: perspective.to_string(),
            attempts,
            detail: last_detail,
        })
    }

    /// Rates the trajectory from one participant's own perspective. The
    /// prompt carries that participant's persona and the public transcript
    /// only.
    pub fn rate_participant(
        &self,
        trajectory: &Trajectory,
        perspective: u8,
        persona: &PersonaNarrative,
    ) -> Result<f64, ObserverError> {
        let expected = match perspective {
            1 => &trajectory.pair.0,
            2 => &trajectory.pair.1,
            other => {
                return Err(ObserverError::PerspectiveMismatch(format!(
                    "perspective must be 1 or 2, got {other}"
                )))
            }
        };
        if &persona.subject_id != expected {
            return Err(ObserverError::PerspectiveMismatch(format!(
                "persona {} passed for perspective {perspective} of pair ({}, {})",
                persona.subject_id, trajectory.pair.0, trajectory.pair.1
            )));
        }
        let transcript = trajectory.public_transcript();
        let prompt = self.templates.render(
            "observer_participant",
            &[("persona", persona.text.as_str()), ("transcript", transcript.as_str())],
        )?;
        let pair = format!("({}, {})", trajectory.pair.0, trajectory.pair.1);
        let (score, _) =
            self.ask_for_score(prompt, &pair, &format!("participant {perspective}"), false)?;
        Ok(score)
    }

    /// External assessment. Speed-dating mode scores compatibility;
    /// divorce mode scores divorce likelihood and returns the captured
    /// analysis block.
    pub fn rate_external(
        &self,
        trajectory: &Trajectory,
        context: &ExternalContext<'_>,
    ) -> Result<(f64, String), ObserverError> {
        let transcript = trajectory.public_transcript();
        let prompt = match context {
            ExternalContext::SpeedDating { p1, p2, icl } => {
                let icl_block = match icl {
                    Some(set) => format!(
                        "\nCalibration examples with known outcomes:\n{}\n",
                        set.render_speed_dating()
                    ),
                    None => String::new(),
                };
                self.templates.render(
                    "observer_external_sd",
                    &[
                        ("icl_examples", icl_block.as_str()),
                        ("persona_1", p1.text.as_str()),
                        ("persona_2", p2.text.as_str()),
                        ("transcript", transcript.as_str()),
                    ],
                )?
            }
            ExternalContext::Divorce { survey, icl } => {
                let icl_text = icl.render_divorce();
                let count = icl.len().to_string();
                let survey_qa = render_survey_qa(survey);
                self.templates.render(
                    "observer_external_divorce",
                    &[
                        ("icl_count", count.as_str()),
                        ("icl_examples", icl_text.as_str()),
                        ("survey", survey_qa.as_str()),
                        ("transcript", transcript.as_str()),
                    ],
                )?
            }
        };
        let pair = format!("({}, {})", trajectory.pair.0, trajectory.pair.1);
        self.ask_for_score(prompt, &pair, "external", true)
    }

    /// Composes the three ratings and persists the vector keyed by pair
    /// and template version. Any sub-rating failure fails the pair; the
    /// caller excludes it from training with a logged reason.
    pub fn rate_pair(
        &self,
        trajectory: &Trajectory,
        p1: &PersonaNarrative,
        p2: &PersonaNarrative,
        context: &ExternalContext<'_>,
    ) -> Result<RatingVector, ObserverError> {
        let r1 = self.rate_participant(trajectory, 1, p1)?;
        let r2 = self.rate_participant(trajectory, 2, p2)?;
        let (r3, analysis) = self.rate_external(trajectory, context)?;
        let rating = RatingVector {
            r1,
            r2,
            r3,
            analysis_text: if analysis.is_empty() { None } else { Some(analysis) },
        };
        if let Some(store) = self.store {
            let key = format!(
                "{}--{}@{}",
                trajectory.pair.0, trajectory.pair.1, trajectory.template_version
            );
            store.persist_json(
                RATING_KIND,
                &key,
                &StoredRating {
                    pair: trajectory.pair.clone(),
                    template_version: trajectory.template_version.clone(),
                    rating: rating.clone(),
                },
            )?;
        }
        Ok(rating)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockProvider, MockReply};
    use crate::persona::PersonaMode;
    use crate::world::{Speaker, TrajectoryMode, Turn};

    fn narrative(id: &str, marker: &str) -> PersonaNarrative {
        PersonaNarrative {
            subject_id: id.into(),
            text: format!("{marker} persona text"),
            word_count: 3,
            mode: PersonaMode::SpeedDating,
            template_version: "tv".into(),
        }
    }

    fn trajectory() -> Trajectory {
        let turn = |speaker: &str, inner: &str, response: &str, round| Turn {
            speaker: Speaker::Agent(speaker.into()),
            inner_thought: Some(inner.into()),
            response: response.into(),
            round_index: round,
            raw: String::new(),
        };
        Trajectory {
            pair: ("alice".into(), "bob".into()),
            mode: TrajectoryMode::SpeedDating,
            turns: vec![
                turn("alice", "SECRET-ALICE", "hello there", 0),
                turn("bob", "SECRET-BOB", "hi, nice to meet you", 1),
            ],
            scenario_descriptions: vec![],
            template_version: "tv".into(),
            warnings: vec![],
        }
    }

    #[test]
    fn score_block_parses_to_the_number() {
        let gw = Gateway::with_mock(MockProvider::constant("<SCORE>7.5</SCORE>"));
        let templates = TemplateLibrary::builtin();
        let observer = Observer::new(&gw, &templates, None, ObserverConfig::default());
        let score = observer
            .rate_participant(&trajectory(), 1, &narrative("alice", "ONE"))
            .unwrap();
        assert_eq!(score, 7.5);
    }

    #[test]
    fn out_of_range_score_is_retried_with_reminder() {
        let mock = MockProvider::sequence(vec![
            "<SCORE>11</SCORE>".into(),
            "<SCORE>9</SCORE>".into(),
        ]);
        let capture = mock.capture();
        let gw = Gateway::with_mock(mock);
        let templates = TemplateLibrary::builtin();
        let observer = Observer::new(&gw, &templates, None, ObserverConfig::default());
        let score = observer
            .rate_participant(&trajectory(), 1, &narrative("alice", "ONE"))
            .unwrap();
        assert_eq!(score, 9.0);
        assert_eq!(capture.len(), 2);
        assert!(capture.prompts()[1].contains("between 0 and 10"));
    }

    #[test]
    fn rating_fails_after_retry_budget() {
        let gw = Gateway::with_mock(MockProvider::constant("no score here"));
        let templates = TemplateLibrary::builtin();
        let observer = Observer::new(&gw, &templates, None, ObserverConfig::default());
        match observer.rate_participant(&trajectory(), 2, &narrative("bob", "TWO")) {
            Err(ObserverError::RatingFailed { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected RatingFailed, got {other:?}"),
        }
    }

    #[test]
    fn participant_prompt_is_perspective_isolated() {
        let mock = MockProvider::constant("<SCORE>5</SCORE>");
        let capture = mock.capture();
        let gw = Gateway::with_mock(mock);
        let templates = TemplateLibrary::builtin();
        let observer = Observer::new(&gw, &templates, None, ObserverConfig::default());
        observer
            .rate_participant(&trajectory(), 1, &narrative("alice", "ALICE-PERSONA"))
            .unwrap();
        let prompt = &capture.prompts()[0];
        assert!(prompt.contains("ALICE-PERSONA"));
        assert!(prompt.contains("hello there"));
        assert!(prompt.contains("hi, nice to meet you"));
        assert!(!prompt.contains("SECRET-ALICE"));
        assert!(!prompt.contains("SECRET-BOB"));
    }

    #[test]
    fn external_rating_captures_analysis() {
        let gw =
            Gateway::with_mock(MockProvider::constant("<ANALYSIS>a</ANALYSIS><SCORE>3.0</SCORE>"));
        let templates = TemplateLibrary::builtin();
        let observer = Observer::new(&gw, &templates, None, ObserverConfig::default());
        let (score, analysis) = observer
            .rate_external(
                &trajectory(),
                &ExternalContext::SpeedDating {
                    p1: &narrative("alice", "ONE"),
                    p2: &narrative("bob", "TWO"),
                    icl: None,
                },
            )
            .unwrap();
        assert_eq!(score, 3.0);
        assert_eq!(analysis, "a");
    }

    #[test]
    fn icl_set_of_ten_renders_ten_example_blocks() {
        let mock = MockProvider::constant("<ANALYSIS>x</ANALYSIS><SCORE>5</SCORE>");
        let capture = mock.capture();
        let gw = Gateway::with_mock(mock);
        let templates = TemplateLibrary::builtin();
        let observer = Observer::new(&gw, &templates, None, ObserverConfig::default());
        let examples = (0..10)
            .map(|i| CalibrationExample {
                summary: format!("pair {i}"),
                label: i % 2 == 0,
                reference_score: None,
            })
            .collect();
        let icl = CalibrationSet::new(examples);
        assert_eq!(icl.counts(), (5, 5));
        observer
            .rate_external(
                &trajectory(),
                &ExternalContext::SpeedDating {
                    p1: &narrative("alice", "ONE"),
                    p2: &narrative("bob", "TWO"),
                    icl: Some(&icl),
                },
            )
            .unwrap();
        let prompt = &capture.prompts()[0];
        assert_eq!(prompt.matches("Example ").count(), 10);
    }

    #[test]
    fn divorce_prompt_contains_the_likelihood_phrase() {
        let mock = MockProvider::constant("<ANALYSIS>x</ANALYSIS><SCORE>5</SCORE>");
        let capture = mock.capture();
        let gw = Gateway::with_mock(mock);
        let templates = TemplateLibrary::builtin();
        let observer = Observer::new(&gw, &templates, None, ObserverConfig::default());
        let survey = DivorceSurvey {
            couple_id: "c1".into(),
            answers: vec![2; 54],
            outcome_label: true,
        };
        let icl = CalibrationSet::divorce_references(vec![
            ("low trust couple".into(), false),
            ("high trust couple".into(), true),
        ]);
        let mut traj = trajectory();
        traj.mode = TrajectoryMode::CriticalEvents;
        observer
            .rate_external(&traj, &ExternalContext::Divorce { survey: &survey, icl: &icl })
            .unwrap();
        let prompt = &capture.prompts()[0];
        assert!(prompt.contains("divorce likelihood"));
        assert!(prompt.contains("Q54:"));
    }

    #[test]
    fn divorce_reference_scores_sit_in_their_bands() {
        let summaries: Vec<(String, bool)> = (0..10)
            .map(|i| (format!("couple {i}"), i % 2 == 0))
            .collect();
        let set = CalibrationSet::divorce_references(summaries);
        for e in &set.examples {
            let score = e.reference_score.unwrap();
            if e.label {
                assert!((1.0..=4.5).contains(&score), "married score {score}");
            } else {
                assert!((6.0..=9.0).contains(&score), "divorced score {score}");
            }
        }
    }

    #[test]
    fn rate_pair_composes_all_three_ratings() {
        let responder = |req: &ChatRequest| {
            let text = req.flat_text();
            if text.contains("relationship psychologist") {
                MockReply::Text("<ANALYSIS>solid</ANALYSIS><SCORE>8</SCORE>".into())
            } else if text.contains("ONE persona") {
                MockReply::Text("<SCORE>6</SCORE>".into())
            } else if text.contains("TWO persona") {
                MockReply::Text("<SCORE>7</SCORE>".into())
            } else {
                MockReply::Unscripted
            }
        };
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        let gw = Gateway::with_mock(MockProvider::with_responder(responder));
        let templates = TemplateLibrary::builtin();
        let observer = Observer::new(&gw, &templates, Some(&store), ObserverConfig::default());
        let p1 = narrative("alice", "ONE");
        let p2 = narrative("bob", "TWO");
        let rating = observer
            .rate_pair(
                &trajectory(),
                &p1,
                &p2,
                &ExternalContext::SpeedDating { p1: &p1, p2: &p2, icl: None },
            )
            .unwrap();
        assert_eq!((rating.r1, rating.r2, rating.r3), (6.0, 7.0, 8.0));
        assert_eq!(rating.analysis_text.as_deref(), Some("solid"));
        assert_eq!(store.list(RATING_KIND).unwrap().len(), 1);
    }

    #[test]
    fn sub_rating_failure_fails_the_pair() {
        let responder = |req: &ChatRequest| {
            let text = req.flat_text();
            if text.contains("TWO persona") {
                MockReply::Text("gibberish".into())
            } else {
                MockReply::Text("<SCORE>5</SCORE>".into())
            }
        };
        let gw = Gateway::with_mock(MockProvider::with_responder(responder));
        let templates = TemplateLibrary::builtin();
        let observer = Observer::new(&gw, &templates, None, ObserverConfig::default());
        let p1 = narrative("alice", "ONE");
        let p2 = narrative("bob", "TWO");
        let result = observer.rate_pair(
            &trajectory(),
            &p1,
            &p2,
            &ExternalContext::SpeedDating { p1: &p1, p2: &p2, icl: None },
        );
        assert!(matches!(result, Err(ObserverError::RatingFailed { .. })));
    }

    #[test]
    fn wrong_persona_for_perspective_is_rejected() {
        let gw = Gateway::with_mock(MockProvider::constant("<SCORE>5</SCORE>"));
        let templates = TemplateLibrary::builtin();
        let observer = Observer::new(&gw, &templates, None, ObserverConfig::default());
        let result = observer.rate_participant(&trajectory(), 1, &narrative("bob", "TWO"));
        assert!(matches!(result, Err(ObserverError::PerspectiveMismatch(_))));
    }

    #[test]
    fn calibration_jsonl_round_trips() {
        let set = CalibrationSet::divorce_references(vec![
            ("a".into(), true),
            ("b".into(), false),
        ]);
        let text = set.to_jsonl();
        let back = CalibrationSet::from_jsonl(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.counts(), (1, 1));
    }
}
