//! The text world engine: agents as persona-conditioned policies plus, in
//! critical-events mode, an environment narrator that sets scenes and
//! evolves circumstances without ever speaking for the agents.
//!
//! The privacy rule is structural, not prompt-level: agent contexts are
//! assembled from RESPONSE texts only, so no participant's INNER_THOUGHT
//! can reach another participant or the narrator. The narrator constraint
//! ("never speak for the spouses") can only be audited after the fact; a
//! post-hoc heuristic downgrades violations to warnings on the trajectory.

mod events;
pub(crate) mod parse;

pub use events::{categorize_event, CriticalEvent, EventCategory};
pub use parse::{parse_agent_turn, ParsedTurn, ParseTurnError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{ArtifactStore, DataIoError};
use crate::gateway::{Gateway, GatewayError, Message};
use crate::observer::CalibrationSet;
use crate::persona::{PersonaMode, PersonaNarrative};
use crate::policy::LlmAgentPolicy;
use crate::templates::{TemplateError, TemplateLibrary};

/// Artifact kind trajectories are stored under.
pub const TRANSCRIPT_KIND: &str = "transcripts";

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("malformed turn from {speaker} at round {round}: {detail}")]
    MalformedTurn { round: usize, speaker: String, detail: String },
    #[error("bad schedule: {0}")]
    BadSchedule(String),
    #[error("persona mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("extracted {got} critical events, expected {expected}, after {attempts} attempt(s)")]
    MalformedEvents { expected: usize, got: usize, attempts: u32 },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Store(#[from] DataIoError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Agent(String),
    Env,
}

impl Speaker {
    pub fn label(&self) -> &str {
        match self {
            Speaker::Agent(id) => id,
            Speaker::Env => "ENV",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    /// Private channel; always absent for ENV turns, present (possibly
    /// empty) for agent turns.
    pub inner_thought: Option<String>,
    pub response: String,
    pub round_index: usize,
    /// Unparsed model output, kept for audit.
    pub raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMode {
    SpeedDating,
    CriticalEvents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub pair: (String, String),
    pub mode: TrajectoryMode,
    pub turns: Vec<Turn>,
    /// Critical-events mode: the event descriptions, in play order.
    pub scenario_descriptions: Vec<String>,
    pub template_version: String,
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryMeta {
    pair: (String, String),
    mode: TrajectoryMode,
    scenario_descriptions: Vec<String>,
    template_version: String,
    warnings: Vec<String>,
}

impl Trajectory {
    pub fn agent_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| matches!(t.speaker, Speaker::Agent(_)))
    }

    pub fn env_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.speaker == Speaker::Env)
    }

    /// The public channel only: one `speaker: response` line per turn.
    /// This is the only transcript view observers ever see.
    pub fn public_transcript(&self) -> String {
        self.turns
            .iter()
            .map(|t| match &t.speaker {
                Speaker::Agent(id) => format!("{id}: {}", t.response),
                Speaker::Env => format!("[Scene] {}", t.response),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn storage_key(&self) -> String {
        format!("{}--{}", self.pair.0, self.pair.1)
    }

    /// Line-delimited form: a meta record, then one record per turn.
    pub fn to_jsonl(&self) -> String {
        let meta = TrajectoryMeta {
            pair: self.pair.clone(),
            mode: self.mode,
            scenario_descriptions: self.scenario_descriptions.clone(),
            template_version: self.template_version.clone(),
            warnings: self.warnings.clone(),
        };
        let mut lines =
            vec![serde_json::to_string(&meta).expect("trajectory meta serializes")];
        for turn in &self.turns {
            lines.push(serde_json::to_string(turn).expect("turn serializes"));
        }
        lines.join("\n")
    }

    pub fn from_jsonl(text: &str) -> Result<Trajectory, serde_json::Error> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let meta: TrajectoryMeta = serde_json::from_str(lines.next().unwrap_or("{}"))?;
        let turns = lines
            .map(serde_json::from_str)
            .collect::<Result<Vec<Turn>, _>>()?;
        Ok(Trajectory {
            pair: meta.pair,
            mode: meta.mode,
            turns,
            scenario_descriptions: meta.scenario_descriptions,
            template_version: meta.template_version,
            warnings: meta.warnings,
        })
    }
}

#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub model_name: String,
    pub conversation_temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<i64>,
    /// Re-prompts allowed after a tag-parse failure.
    pub max_parse_retries: u32,
    pub rounds: usize,
    pub events: usize,
    pub rounds_per_event: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            model_name: "conversation-model".into(),
            conversation_temperature: 0.6,
            max_tokens: 400,
            seed: None,
            max_parse_retries: 2,
            rounds: 5,
            events: 3,
            rounds_per_event: 2,
        }
    }
}

const FORMAT_REMINDER: &str = "Your reply must contain an \
<INNER_THOUGHT>...</INNER_THOUGHT> block followed by a \
<RESPONSE>...</RESPONSE> block. Reply again in exactly that format.";

pub struct WorldEngine<'a> {
    gateway: &'a Gateway,
    templates: &'a TemplateLibrary,
    store: Option<&'a ArtifactStore>,
    config: WorldConfig,
}

struct AgentTurnOutcome {
    turn: Turn,
    warnings: Vec<String>,
}

impl<'a> WorldEngine<'a> {
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a TemplateLibrary,
        store: Option<&'a ArtifactStore>,
        config: WorldConfig,
    ) -> Self {
        WorldEngine { gateway, templates, store, config }
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    fn agent_policy(&self, subject_id: &str, system_prompt: String) -> LlmAgentPolicy {
        LlmAgentPolicy {
            subject_id: subject_id.to_string(),
            system_prompt,
            model_name: self.config.model_name.clone(),
            temperature: self.config.conversation_temperature,
            seed: self.config.seed,
            max_tokens: self.config.max_tokens,
        }
    }

    /// One agent utterance with bounded re-prompting on tag-parse failure.
    fn agent_turn(
        &self,
        policy: &LlmAgentPolicy,
        context: &[Message],
        round_index: usize,
    ) -> Result<AgentTurnOutcome, WorldError> {
        let mut attempt_context = context.to_vec();
        let attempts = 1 + self.config.max_parse_retries;
        let mut last_error = String::new();
        for _ in 0..attempts {
            let raw = policy.act(self.gateway, &attempt_context)?;
            match parse_agent_turn(&raw) {
                Ok(parsed) => {
                    let mut warnings = Vec::new();
                    if parsed.inner_thought_missing {
                        warnings.push(format!(
                            "round {round_index}: {} reply had no INNER_THOUGHT block",
                            policy.subject_id
                        ));
                    }
                    return Ok(AgentTurnOutcome {
                        turn: Turn {
                            speaker: Speaker::Agent(policy.subject_id.clone()),
                            inner_thought: Some(parsed.inner_thought),
                            response: parsed.response,
                            round_index,
                            raw,
                        },
                        warnings,
                    });
                }
                Err(e) => {
                    last_error = e.to_string();
                    attempt_context.push(Message::assistant(raw));
                    attempt_context.push(Message::user(FORMAT_REMINDER));
                }
            }
        }
        Err(WorldError::MalformedTurn {
            round: round_index,
            speaker: policy.subject_id.clone(),
            detail: last_error,
        })
    }

    fn env_utterance(&self, system: &str, prompt: String) -> Result<String, WorldError> {
        let policy = self.agent_policy("ENV", system.to_string());
        Ok(policy.act(self.gateway, &[Message::user(prompt)])?)
    }

    fn persist(&self, trajectory: &Trajectory) -> Result<(), WorldError> {
        if let Some(store) = self.store {
            store.persist(
                TRANSCRIPT_KIND,
                &trajectory.storage_key(),
                trajectory.to_jsonl().as_bytes(),
            )?;
        }
        Ok(())
    }

    /// Speed-dating dialogue: P1 opens, then each round is P2 followed by
    /// P1, for 1 + 2·rounds agent turns. Each agent's context carries only
    /// the partner's RESPONSE texts (and its own), never inner thoughts.
    pub fn simulate_speed_date(
        &self,
        p1: &PersonaNarrative,
        p2: &PersonaNarrative,
        rounds: usize,
    ) -> Result<Trajectory, WorldError> {
        if rounds < 1 {
            return Err(WorldError::BadSchedule("rounds must be >= 1".into()));
        }
        for p in [p1, p2] {
            if p.mode != PersonaMode::SpeedDating {
                return Err(WorldError::ModeMismatch(format!(
                    "{} is not a speed-dating persona",
                    p.subject_id
                )));
            }
        }
        let system_1 = self.templates.render(
            "sd_agent_system",
            &[("label", "Person 1"), ("persona", &p1.text)],
        )?;
        let system_2 = self.templates.render(
            "sd_agent_system",
            &[("label", "Person 2"), ("persona", &p2.text)],
        )?;
        let agent_1 = self.agent_policy(&p1.subject_id, system_1);
        let agent_2 = self.agent_policy(&p2.subject_id, system_2);

        let opening = self.templates.render("sd_opening", &[])?;
        let mut context_1 = vec![Message::user(opening)];
        let mut context_2: Vec<Message> = Vec::new();
        let mut turns = Vec::with_capacity(1 + 2 * rounds);
        let mut warnings = Vec::new();

        let opener = self.agent_turn(&agent_1, &context_1, 0)?;
        context_1.push(Message::assistant(&opener.turn.response));
        context_2.push(Message::user(&opener.turn.response));
        warnings.extend(opener.warnings);
        turns.push(opener.turn);

        for round in 1..=rounds {
            let reply_2 = self.agent_turn(&agent_2, &context_2, round)?;
            context_2.push(Message::assistant(&reply_2.turn.response));
            context_1.push(Message::user(&reply_2.turn.response));
            warnings.extend(reply_2.warnings);
            turns.push(reply_2.turn);

            let reply_1 = self.agent_turn(&agent_1, &context_1, round)?;
            context_1.push(Message::assistant(&reply_1.turn.response));
            context_2.push(Message::user(&reply_1.turn.response));
            warnings.extend(reply_1.warnings);
            turns.push(reply_1.turn);
        }

        let trajectory = Trajectory {
            pair: (p1.subject_id.clone(), p2.subject_id.clone()),
            mode: TrajectoryMode::SpeedDating,
            turns,
            scenario_descriptions: Vec::new(),
            template_version: self.templates.version().to_string(),
            warnings,
        };
        self.persist(&trajectory)?;
        Ok(trajectory)
    }

    /// Critical-events stress test: per event, one narrator scene, then
    /// `rounds_per_event` husband/wife exchanges, then one narrator
    /// evolution. Narrator prompts see public RESPONSEs only.
    pub fn simulate_critical_events(
        &self,
        p_h: &PersonaNarrative,
        p_w: &PersonaNarrative,
        events: &[CriticalEvent],
        rounds_per_event: usize,
        icl: &CalibrationSet,
    ) -> Result<Trajectory, WorldError> {
        if events.is_empty() {
            return Err(WorldError::BadSchedule("need at least one critical event".into()));
        }
        if rounds_per_event < 1 {
            return Err(WorldError::BadSchedule("rounds_per_event must be >= 1".into()));
        }
        for p in [p_h, p_w] {
            if p.mode != PersonaMode::Divorce {
                return Err(WorldError::ModeMismatch(format!(
                    "{} is not a divorce persona",
                    p.subject_id
                )));
            }
        }
        let icl_text = icl.render_divorce();
        let husband_system = self.templates.render(
            "divorce_agent_system",
            &[("role", "husband"), ("persona", &p_h.text), ("icl_examples", &icl_text)],
        )?;
        let wife_system = self.templates.render(
            "divorce_agent_system",
            &[("role", "wife"), ("persona", &p_w.text), ("icl_examples", &icl_text)],
        )?;
        let husband = self.agent_policy(&p_h.subject_id, husband_system);
        let wife = self.agent_policy(&p_w.subject_id, wife_system);
        let env_system = self.templates.render("env_system", &[])?;

        let mut turns = Vec::new();
        let mut warnings = Vec::new();
        let block = rounds_per_event + 2;

        for (event_index, event) in events.iter().enumerate() {
            let base = event_index * block;
            let scene_prompt = self.templates.render(
                "env_scene",
                &[
                    ("event", event.description.as_str()),
                    ("husband_persona", &p_h.text),
                    ("wife_persona", &p_w.text),
                ],
            )?;
            let scene = self.env_utterance(&env_system, scene_prompt)?;
            if let Some(v) = narrator_violation(&scene, &turns) {
                warnings.push(format!("event {event_index}: {v}"));
            }
            let mut latest_env = scene.clone();
            turns.push(Turn {
                speaker: Speaker::Env,
                inner_thought: None,
                response: scene.clone(),
                round_index: base,
                raw: scene,
            });

            let mut exchange: Vec<(String, String)> = Vec::new();
            let mut last_husband = String::new();
            let mut last_wife = String::new();
            for round in 1..=rounds_per_event {
                for (agent, role, last) in [
                    (&husband, "Husband", &mut last_husband),
                    (&wife, "Wife", &mut last_wife),
                ] {
                    let situation = render_situation(&latest_env, &exchange);
                    let outcome =
                        self.agent_turn(agent, &[Message::user(situation)], base + round)?;
                    exchange.push((role.to_string(), outcome.turn.response.clone()));
                    *last = outcome.turn.response.clone();
                    warnings.extend(outcome.warnings);
                    turns.push(outcome.turn);
                }
            }

            let evolution_prompt = self.templates.render(
                "env_evolution",
                &[
                    ("husband_response", last_husband.as_str()),
                    ("wife_response", last_wife.as_str()),
                    ("icl_examples", &icl_text),
                ],
            )?;
            let evolution = self.env_utterance(&env_system, evolution_prompt)?;
            if let Some(v) = narrator_violation(&evolution, &turns) {
                warnings.push(format!("event {event_index}: {v}"));
            }
            latest_env.clone_from(&evolution);
            turns.push(Turn {
                speaker: Speaker::Env,
                inner_thought: None,
                response: evolution.clone(),
                round_index: base + rounds_per_event + 1,
                raw: evolution,
            });
        }

        let trajectory = Trajectory {
            pair: (p_h.subject_id.clone(), p_w.subject_id.clone()),
            mode: TrajectoryMode::CriticalEvents,
            turns,
            scenario_descriptions: events.iter().map(|e| e.description.clone()).collect(),
            template_version: self.templates.version().to_string(),
            warnings,
        };
        self.persist(&trajectory)?;
        Ok(trajectory)
    }

    /// Personalized critical events for one couple, categorized by keyword.
    pub fn generate_critical_events(
        &self,
        p_h: &PersonaNarrative,
        p_w: &PersonaNarrative,
        icl: &CalibrationSet,
        count: usize,
    ) -> Result<Vec<CriticalEvent>, WorldError> {
        if count == 0 {
            return Err(WorldError::BadSchedule("event count must be >= 1".into()));
        }
        let icl_text = icl.render_divorce();
        let count_text = count.to_string();
        let prompt = self.templates.render(
            "event_generation",
            &[
                ("husband_persona", p_h.text.as_str()),
                ("wife_persona", p_w.text.as_str()),
                ("icl_examples", &icl_text),
                ("count", &count_text),
            ],
        )?;
        let policy = self.agent_policy("event-designer", String::from(
            "You produce numbered lists of realistic relationship scenarios, nothing else.",
        ));
        let attempts = 1 + self.config.max_parse_retries;
        let mut context = vec![Message::user(prompt)];
        let mut got = 0usize;
        for _ in 0..attempts {
            let raw = policy.act(self.gateway, &context)?;
            let descriptions = events::parse_numbered_list(&raw);
            got = descriptions.len();
            if got >= count {
                return Ok(descriptions
                    .into_iter()
                    .take(count)
                    .enumerate()
                    .map(|(i, description)| CriticalEvent {
                        event_id: format!("{}:e{}", p_h.subject_id, i + 1),
                        category: categorize_event(&description),
                        description,
                    })
                    .collect());
            }
            context.push(Message::assistant(raw));
            context.push(Message::user(format!(
                "That gave {got} events; produce exactly {count}, one per line, \
                 numbered \"1.\" through \"{count}.\"."
            )));
        }
        Err(WorldError::MalformedEvents { expected: count, got, attempts })
    }
}

fn render_situation(latest_env: &str, exchange: &[(String, String)]) -> String {
    let mut out = format!("Current situation:\n{latest_env}\n");
    if !exchange.is_empty() {
        out.push_str("\nRecent exchange:\n");
        for (role, response) in exchange {
            out.push_str(&format!("{role}: {response}\n"));
        }
    }
    out.push_str("\nRespond in the required format.");
    out
}

/// Post-hoc audit of narrator output. Flags attributed speech ("he says",
/// "wife thinks") and verbatim reuse of an agent's utterance.
fn narrator_violation(env_text: &str, prior_turns: &[Turn]) -> Option<String> {
    let lower = env_text.to_lowercase();
    const ATTRIBUTED: [&str; 12] = [
        "he says", "she says", "he said", "she said", "he thinks", "she thinks",
        "husband says", "wife says", "husband said", "wife said", "he replies", "she replies",
    ];
    for phrase in ATTRIBUTED {
        if lower.contains(phrase) {
            return Some(format!("narrator violation: attributed speech (\"{phrase}\")"));
        }
    }
    for turn in prior_turns {
        if matches!(turn.speaker, Speaker::Agent(_))
            && turn.response.len() >= 15
            && env_text.contains(turn.response.as_str())
        {
            return Some(format!(
                "narrator violation: quoted {}'s utterance verbatim",
                turn.speaker.label()
            ));
        }
    }
    None
}

#[cfg(test)]
mod tests;
