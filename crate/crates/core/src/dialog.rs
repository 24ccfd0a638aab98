//! Dialog flow: ordered condition → response rules, plus template rendering.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{self, CourseKB};
use crate::nlu::{Classification, EntityMention};

/// Session context visible to conditions and templates.
pub type Context = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Condition {
    IntentIs { intent: String },
    EntityPresent { entity: String },
    EntityValueIs { entity: String, value: String },
    ContextEquals { key: String, value: String },
    And { conditions: Vec<Condition> },
    Fallback,
}

impl Condition {
    /// `IntentIs` only looks at the top-ranked intent.
    pub fn matches(
        &self,
        top_intent: Option<&str>,
        mentions: &[EntityMention],
        context: &Context,
    ) -> bool {
        match self {
            Condition::IntentIs { intent } => top_intent == Some(intent.as_str()),
            Condition::EntityPresent { entity } => mentions.iter().any(|m| &m.entity == entity),
            Condition::EntityValueIs { entity, value } => mentions
                .iter()
                .any(|m| &m.entity == entity && &m.value == value),
            Condition::ContextEquals { key, value } => context.get(key) == Some(value),
            Condition::And { conditions } => conditions
                .iter()
                .all(|c| c.matches(top_intent, mentions, context)),
            Condition::Fallback => true,
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self, Condition::Fallback)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogNode {
    pub id: String,
    pub condition: Condition,
    pub response: ResponseTemplate,
    /// Values are templates rendered against the same turn as the response.
    #[serde(default)]
    pub context_updates: BTreeMap<String, ResponseTemplate>,
}

/// Answer text with `{{kb:path}}`, `{{entity:name}}` and `{{context:key}}`
/// placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResponseTemplate(String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Placeholder {
    Kb(String),
    Entity(String),
    Context(String),
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placeholder::Kb(p) => write!(f, "kb:{p}"),
            Placeholder::Entity(e) => write!(f, "entity:{e}"),
            Placeholder::Context(k) => write!(f, "context:{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment<'a> {
    Text(&'a str),
    Placeholder(Placeholder),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("unclosed placeholder at byte {0}")]
    Unclosed(usize),
    #[error("`}}}}` without matching `{{{{` at byte {0}")]
    StrayClose(usize),
    #[error("malformed placeholder `{{{{{0}}}}}`")]
    Malformed(String),
    #[error("unknown placeholder kind in `{{{{{0}}}}}`")]
    UnknownKind(String),
    #[error("invalid knowledge-base path in `{{{{{0}}}}}`")]
    InvalidKbPath(String),
}

fn parse_placeholder(inner: &str) -> Result<Placeholder, TemplateError> {
    if inner.contains(['{', '}']) {
        return Err(TemplateError::Malformed(inner.into()));
    }
    let (kind, arg) = inner
        .split_once(':')
        .ok_or_else(|| TemplateError::Malformed(inner.into()))?;
    if arg.is_empty() || arg.chars().any(char::is_whitespace) {
        return Err(TemplateError::Malformed(inner.into()));
    }
    match kind {
        "kb" if kb::is_valid_path(arg) => Ok(Placeholder::Kb(arg.into())),
        "kb" => Err(TemplateError::InvalidKbPath(inner.into())),
        "entity" => Ok(Placeholder::Entity(arg.into())),
        "context" => Ok(Placeholder::Context(arg.into())),
        _ => Err(TemplateError::UnknownKind(inner.into())),
    }
}

impl ResponseTemplate {
    pub fn new(text: impl Into<String>) -> Self {
        Self(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn parse(&self) -> Result<Vec<Segment<'_>>, TemplateError> {
        let mut segments = Vec::new();
        let mut rest = self.0.as_str();
        let mut offset = 0;
        loop {
            let open = rest.find("{{");
            let close = rest.find("}}");
            match (open, close) {
                (None, None) => {
                    if !rest.is_empty() {
                        segments.push(Segment::Text(rest));
                    }
                    return Ok(segments);
                }
                (None, Some(c)) => return Err(TemplateError::StrayClose(offset + c)),
                (Some(o), Some(c)) if c < o => return Err(TemplateError::StrayClose(offset + c)),
                (Some(o), _) => {
                    if o > 0 {
                        segments.push(Segment::Text(&rest[..o]));
                    }
                    let after = &rest[o + 2..];
                    let end = after
                        .find("}}")
                        .ok_or(TemplateError::Unclosed(offset + o))?;
                    segments.push(Segment::Placeholder(parse_placeholder(&after[..end])?));
                    let consumed = o + 2 + end + 2;
                    rest = &rest[consumed..];
                    offset += consumed;
                }
            }
        }
    }

    pub fn placeholders(&self) -> Result<Vec<Placeholder>, TemplateError> {
        Ok(self
            .parse()?
            .into_iter()
            .filter_map(|s| match s {
                Segment::Placeholder(p) => Some(p),
                Segment::Text(_) => None,
            })
            .collect())
    }
}

impl From<&str> for ResponseTemplate {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// The first placeholder that could not be filled.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot fill placeholder {placeholder}")]
pub struct RenderFailure {
    pub placeholder: String,
}

/// First node, in workspace order, whose condition holds. Only `None` when
/// the nodes lack a fallback, which validation rules out.
pub fn match_node<'a>(
    nodes: &'a [DialogNode],
    classification: &Classification,
    mentions: &[EntityMention],
    context: &Context,
) -> Option<&'a DialogNode> {
    let top = classification.top_intent();
    nodes
        .iter()
        .find(|n| n.condition.matches(top, mentions, context))
}

/// Fills every placeholder or fails on the first unresolvable one. Filled
/// values may not contain braces, so a successful render never contains
/// `{{` or `}}`.
pub fn render_template(
    template: &ResponseTemplate,
    kb: &CourseKB,
    mentions: &[EntityMention],
    context: &Context,
) -> Result<String, RenderFailure> {
    let segments = template.parse().map_err(|e| RenderFailure {
        placeholder: e.to_string(),
    })?;
    let mut out = String::with_capacity(template.as_str().len());
    for segment in segments {
        match segment {
            Segment::Text(text) => out.push_str(text),
            Segment::Placeholder(p) => {
                let value = match &p {
                    Placeholder::Kb(path) => kb.lookup(path),
                    Placeholder::Entity(entity) => mentions
                        .iter()
                        .find(|m| &m.entity == entity)
                        .map(|m| m.value.as_str()),
                    Placeholder::Context(key) => context.get(key).map(String::as_str),
                };
                match value {
                    Some(v) if !v.contains(['{', '}']) => out.push_str(v),
                    _ => {
                        return Err(RenderFailure {
                            placeholder: p.to_string(),
                        })
                    }
                }
            }
        }
    }
    Ok(out)
}
