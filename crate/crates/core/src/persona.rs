//! Persona narratives: structured profiles rendered into prompts, sent
//! through the gateway, and length-checked into the 300-500 word band.
//!
//! Divorce couples yield two narratives (husband and wife) from the same
//! survey; both prompts carry the full 54 answers with role-specific
//! emphasis, since the dataset is per-couple.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{ArtifactStore, DataIoError, DivorceSurvey, SpeedDatingProfile};
use crate::gateway::{ChatRequest, Gateway, GatewayError, Message};
use crate::templates::{TemplateError, TemplateLibrary};

/// Artifact kind persona narratives are stored under.
pub const PERSONA_KIND: &str = "personas";

pub const MIN_WORDS: usize = 300;
pub const MAX_WORDS: usize = 500;

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error(
        "persona for {subject_id} has {word_count} words after {attempts} attempt(s); \
         allowed range [{min},{max}]"
    )]
    LengthViolation {
        subject_id: String,
        word_count: usize,
        attempts: u32,
        min: usize,
        max: usize,
        last_attempt: String,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Store(#[from] DataIoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaMode {
    SpeedDating,
    Divorce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpouseRole {
    Husband,
    Wife,
}

impl SpouseRole {
    pub fn label(self) -> &'static str {
        match self {
            SpouseRole::Husband => "husband",
            SpouseRole::Wife => "wife",
        }
    }
}

/// What a narrative is generated from: one dating profile, or one role-half
/// of a couple's survey.
#[derive(Debug, Clone, Copy)]
pub enum PersonaSource<'a> {
    SpeedDating(&'a SpeedDatingProfile),
    DivorceRole { survey: &'a DivorceSurvey, role: SpouseRole },
}

impl PersonaSource<'_> {
    pub fn subject_id(&self) -> String {
        match self {
            PersonaSource::SpeedDating(p) => p.participant_id.clone(),
            PersonaSource::DivorceRole { survey, role } => {
                format!("{}-{}", survey.couple_id, role.label())
            }
        }
    }

    pub fn mode(&self) -> PersonaMode {
        match self {
            PersonaSource::SpeedDating(_) => PersonaMode::SpeedDating,
            PersonaSource::DivorceRole { .. } => PersonaMode::Divorce,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PersonaNarrative {
    pub subject_id: String,
    pub text: String,
    pub word_count: usize,
    pub mode: PersonaMode,
    pub template_version: String,
}

/// Whitespace-token count; the reproducible length measure narratives are
/// checked against.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Deterministic, human-readable rendering of a profile for prompt use.
/// Field order is fixed, so two renderings of the same profile are
/// identical and a one-score change touches exactly one line.
pub fn render_profile_for_prompt(source: &PersonaSource) -> String {
    let mut lines = Vec::new();
    match source {
        PersonaSource::SpeedDating(p) => {
            lines.push(format!("ID: {}", p.participant_id));
            lines.push(format!("Age: {}", p.age));
            lines.push(format!("Gender: {:?}", p.gender));
            lines.push(format!("Wave: {}", p.wave_id));
            lines.push("Interest ratings (1-10):".into());
            for (activity, score) in &p.interest_ratings {
                lines.push(format!("  {activity}: {score}"));
            }
            lines.push("Self-ratings (1-10):".into());
            for (trait_name, score) in &p.self_ratings {
                lines.push(format!("  {trait_name}: {score}"));
            }
            lines.push("Partner preferences (importance weights):".into());
            for (trait_name, weight) in &p.partner_preferences {
                lines.push(format!("  {trait_name}: {weight}"));
            }
        }
        PersonaSource::DivorceRole { survey, role } => {
            lines.push(format!("ID: {}-{}", survey.couple_id, role.label()));
            lines.push(format!("Role: {}", role.label()));
            lines.push("Relationship survey answers (0-4 scale):".into());
            for (i, answer) in survey.answers.iter().enumerate() {
                lines.push(format!("  Q{}: {answer}", i + 1));
            }
        }
    }
    lines.join("\n")
}

#[derive(Debug, Clone)]
pub struct PersonaConfig {
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<i64>,
    /// Total generation attempts before a length violation becomes an error.
    pub max_attempts: u32,
}

impl Default for PersonaConfig {
    fn default() -> Self {
        PersonaConfig {
            model_name: "persona-model".into(),
            temperature: 0.7,
            max_tokens: 900,
            seed: None,
            max_attempts: 3,
        }
    }
}

pub struct PersonaGenerator<'a> {
    gateway: &'a Gateway,
    templates: &'a TemplateLibrary,
    store: Option<&'a ArtifactStore>,
    config: PersonaConfig,
}

impl<'a> PersonaGenerator<'a> {
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a TemplateLibrary,
        store: Option<&'a ArtifactStore>,
        config: PersonaConfig,
    ) -> Self {
        PersonaGenerator { gateway, templates, store, config }
    }

    /// Generates a narrative from the mode-specific template, regenerating
    /// with an explicit length reminder until the word count lands in
    /// [300, 500] or attempts run out. The accepted narrative is persisted
    /// when a store is attached.
    pub fn generate(&self, source: &PersonaSource) -> Result<PersonaNarrative, PersonaError> {
        let subject_id = source.subject_id();
        let profile_text = render_profile_for_prompt(source);
        let prompt = match source {
            PersonaSource::SpeedDating(_) => self
                .templates
                .render("sd_persona", &[("profile", profile_text.as_str())])?,
            PersonaSource::DivorceRole { role, .. } => self.templates.render(
                "divorce_persona",
                &[("profile", profile_text.as_str()), ("role", role.label())],
            )?,
        };

        let mut messages = vec![Message::user(prompt)];
        let mut last_text = String::new();
        let mut last_count = 0usize;
        for _attempt in 0..self.config.max_attempts {
            let request = ChatRequest::new(
                &self.config.model_name,
                messages.clone(),
                self.config.temperature,
                self.config.seed,
                self.config.max_tokens,
            )?;
            let response = self.gateway.complete(&request)?;
            last_count = word_count(&response.text);
            last_text = response.text;
            if (MIN_WORDS..=MAX_WORDS).contains(&last_count) {
                let narrative = PersonaNarrative {
                    subject_id,
                    text: last_text,
                    word_count: last_count,
                    mode: source.mode(),
                    template_version: self.templates.version().to_string(),
                };
                if let Some(store) = self.store {
                    store.persist_json(PERSONA_KIND, &narrative.subject_id, &narrative)?;
                }
                return Ok(narrative);
            }
            messages.push(Message::assistant(last_text.clone()));
            messages.push(Message::user(format!(
                "That draft has {last_count} words. The persona must be between {MIN_WORDS} and \
                 {MAX_WORDS} words. Rewrite it to fit, preserving the content."
            )));
        }
        Err(PersonaError::LengthViolation {
            subject_id,
            word_count: last_count,
            attempts: self.config.max_attempts,
            min: MIN_WORDS,
            max: MAX_WORDS,
            last_attempt: last_text,
        })
    }
}
