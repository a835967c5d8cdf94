//! Versioned prompt templates with `{{name}}` placeholders.
//!
//! Templates are plain text files; the library ships a built-in set (the
//! files under `templates/` in this crate) and can load a replacement set
//! from a directory named in config. The library version is a digest of
//! every template's content, and it is folded into gateway cache keys so a
//! template edit invalidates stale recordings.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` uses placeholder `{{{{{placeholder}}}}}` with no binding")]
    MissingPlaceholder { template: String, placeholder: String },
    #[error("unterminated placeholder in template `{0}`")]
    Unterminated(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

macro_rules! builtin_templates {
    ($($name:literal),+ $(,)?) => {
        [$(($name, include_str!(concat!("../templates/", $name, ".txt")))),+]
    };
}

const BUILTIN: [(&str, &str); 12] = builtin_templates![
    "sd_persona",
    "sd_agent_system",
    "sd_opening",
    "divorce_persona",
    "divorce_agent_system",
    "env_system",
    "env_scene",
    "env_evolution",
    "event_generation",
    "observer_participant",
    "observer_external_sd",
    "observer_external_divorce",
];

#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    templates: BTreeMap<String, String>,
    version: String,
}

fn digest_version(templates: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    for (name, content) in templates {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update(content.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())[..12].to_string()
}

impl TemplateLibrary {
    /// The template set compiled into the crate.
    pub fn builtin() -> TemplateLibrary {
        let templates: BTreeMap<String, String> = BUILTIN
            .iter()
            .map(|(n, c)| (n.to_string(), c.to_string()))
            .collect();
        let version = digest_version(&templates);
        TemplateLibrary { templates, version }
    }

    /// Loads every `*.txt` file in `dir` as a template named after its stem.
    pub fn from_dir(dir: &Path) -> Result<TemplateLibrary, TemplateError> {
        let mut templates = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            templates.insert(name, std::fs::read_to_string(&path)?);
        }
        let version = digest_version(&templates);
        Ok(TemplateLibrary { templates, version })
    }

    /// Content digest identifying this exact template set.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Fills `{{placeholder}}` slots from `vars`. Every placeholder in the
    /// template must have a binding; unused bindings are fine.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
        let template = self
            .templates
            .get(name)
            .ok_or_else(|| TemplateError::UnknownTemplate(name.to_string()))?;
        let mut out = String::with_capacity(template.len());
        let mut rest = template.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after
                .find("}}")
                .ok_or_else(|| TemplateError::Unterminated(name.to_string()))?;
            let placeholder = after[..end].trim();
            let value = vars
                .iter()
                .find(|(k, _)| *k == placeholder)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::MissingPlaceholder {
                    template: name.to_string(),
                    placeholder: placeholder.to_string(),
                })?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}
