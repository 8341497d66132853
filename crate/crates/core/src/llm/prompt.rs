use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, LlmError};
use crate::taxonomy::{Category, SoundClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Cluster,
    Subcategorize,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Cluster => "cluster",
            Stage::Subcategorize => "subcategorize",
        }
    }

    /// Placeholders the user template of this stage must contain, and the
    /// only ones it may contain.
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            Stage::Cluster => &["category", "labels"],
            Stage::Subcategorize => &["class_name", "labels"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// System text is sent verbatim; `template_text` becomes the user message
/// after `{placeholder}` substitution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    stage: Stage,
    system_text: String,
    template_text: String,
}

/// `{name}` occurrences where `name` is lowercase ASCII letters and
/// underscores. JSON braces never match because of the quotes.
fn placeholders_in(text: &str) -> BTreeSet<&str> {
    let mut out = BTreeSet::new();
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        rest = &rest[start + 1..];
        if let Some(end) = rest.find('}') {
            let name = &rest[..end];
            if !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
                out.insert(name);
                rest = &rest[end + 1..];
            }
        }
    }
    out
}

impl PromptTemplate {
    pub fn new(stage: Stage, system_text: impl Into<String>, template_text: impl Into<String>) -> Result<Self, LlmError> {
        let template_text = template_text.into();
        let found = placeholders_in(&template_text);
        let required: BTreeSet<&str> = stage.placeholders().iter().copied().collect();
        let missing: Vec<&str> = required.difference(&found).copied().collect();
        let unknown: Vec<&str> = found.difference(&required).copied().collect();
        if !missing.is_empty() || !unknown.is_empty() {
            return Err(LlmError::Template(format!(
                "{stage} template: missing placeholders {missing:?}, unknown placeholders {unknown:?}"
            )));
        }
        Ok(Self {
            stage,
            system_text: system_text.into(),
            template_text,
        })
    }

    pub fn default_for(stage: Stage) -> Self {
        let (system, user) = match stage {
            Stage::Cluster => (
                include_str!("../../templates/cluster.system.txt"),
                include_str!("../../templates/cluster.user.txt"),
            ),
            Stage::Subcategorize => (
                include_str!("../../templates/subcategorize.system.txt"),
                include_str!("../../templates/subcategorize.user.txt"),
            ),
        };
        Self::new(stage, system, user).expect("shipped templates are valid")
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn system_text(&self) -> &str {
        &self.system_text
    }

    pub fn template_text(&self) -> &str {
        &self.template_text
    }

    fn render(&self, values: &[(&str, &str)]) -> Vec<ChatMessage> {
        let mut user = self.template_text.clone();
        for (name, value) in values {
            user = user.replace(&format!("{{{name}}}"), value);
        }
        vec![ChatMessage::system(self.system_text.clone()), ChatMessage::user(user)]
    }
}

/// Templates for both stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub cluster: PromptTemplate,
    pub subcategorize: PromptTemplate,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            cluster: PromptTemplate::default_for(Stage::Cluster),
            subcategorize: PromptTemplate::default_for(Stage::Subcategorize),
        }
    }
}

impl PromptSet {
    /// Load `{stage}.system.txt` / `{stage}.user.txt` from `dir`. Files that
    /// are absent fall back to the built-in text.
    pub fn from_dir(dir: &Path) -> Result<Self, LlmError> {
        let load = |stage: Stage| -> Result<PromptTemplate, LlmError> {
            let default = PromptTemplate::default_for(stage);
            let read = |suffix: &str, fallback: &str| -> Result<String, LlmError> {
                let path = dir.join(format!("{}.{suffix}.txt", stage.as_str()));
                match std::fs::read_to_string(&path) {
                    Ok(s) => Ok(s),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(fallback.to_string()),
                    Err(e) => Err(LlmError::Io {
                        path: path.display().to_string(),
                        source: e,
                    }),
                }
            };
            PromptTemplate::new(
                stage,
                read("system", default.system_text())?,
                read("user", default.template_text())?,
            )
        };
        Ok(Self {
            cluster: load(Stage::Cluster)?,
            subcategorize: load(Stage::Subcategorize)?,
        })
    }

    pub fn cluster_messages<S: AsRef<str>>(&self, category: Category, labels: &[S]) -> Result<Vec<ChatMessage>, LlmError> {
        if labels.is_empty() {
            return Err(LlmError::Precondition(format!("no labels for category {category}")));
        }
        if labels.iter().any(|l| l.as_ref().trim().is_empty()) {
            return Err(LlmError::Precondition(format!("empty label in category {category}")));
        }
        let listing = bullet_list(labels);
        Ok(self
            .cluster
            .render(&[("category", category.as_str()), ("labels", &listing)]))
    }

    pub fn subcategory_messages(&self, class: &SoundClass) -> Result<Vec<ChatMessage>, LlmError> {
        if class.name.trim().is_empty() {
            return Err(LlmError::Precondition("class name is empty".into()));
        }
        if class.source_labels.is_empty() {
            return Err(LlmError::Precondition(format!("class {:?} has no source labels", class.name)));
        }
        let listing = bullet_list(&class.source_labels);
        Ok(self
            .subcategorize
            .render(&[("class_name", &class.name), ("labels", &listing)]))
    }
}

fn bullet_list<S: AsRef<str>>(items: &[S]) -> String {
    let mut out = String::new();
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str("- ");
        out.push_str(item.as_ref());
    }
    out
}

/// Clustering prompt with the built-in templates.
pub fn build_cluster_prompt<S: AsRef<str>>(category: Category, labels: &[S]) -> Result<Vec<ChatMessage>, LlmError> {
    PromptSet::default().cluster_messages(category, labels)
}

/// Subcategory prompt with the built-in templates.
pub fn build_subcategory_prompt(class: &SoundClass) -> Result<Vec<ChatMessage>, LlmError> {
    PromptSet::default().subcategory_messages(class)
}
