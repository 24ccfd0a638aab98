use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::{normalize, Workspace};
use crate::dialog::{Condition, Placeholder, ResponseTemplate};

/// One broken workspace invariant. Intents print as `#name`, entities as
/// `@name`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnknownKey {
        path: String,
    },
    EmptyIntentName {
        index: usize,
    },
    DuplicateIntent {
        intent: String,
    },
    NoExamples {
        intent: String,
    },
    EmptyExample {
        intent: String,
        index: usize,
    },
    EmptyEntityName {
        index: usize,
    },
    DuplicateEntity {
        entity: String,
    },
    EmptyCanonical {
        entity: String,
        index: usize,
    },
    DuplicateConcept {
        entity: String,
        canonical: String,
    },
    EmptySurface {
        entity: String,
        canonical: String,
        surface: String,
    },
    DuplicateSurface {
        entity: String,
        surface: String,
    },
    EmptyNodeId {
        index: usize,
    },
    DuplicateNode {
        node: String,
    },
    FallbackCount {
        count: usize,
    },
    NestedFallback {
        node: String,
    },
    EmptyAnd {
        node: String,
    },
    UndefinedIntent {
        node: String,
        intent: String,
    },
    UndefinedEntity {
        node: String,
        entity: String,
    },
    UndefinedValue {
        node: String,
        entity: String,
        value: String,
    },
    MalformedTemplate {
        node: String,
        field: String,
        error: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            UnknownKey { path } => write!(f, "unknown key {path}"),
            EmptyIntentName { index } => write!(f, "intent #{index} has an empty name"),
            DuplicateIntent { intent } => write!(f, "intent #{intent} is defined more than once"),
            NoExamples { intent } => write!(f, "intent #{intent} has no examples"),
            EmptyExample { intent, index } => {
                write!(
                    f,
                    "example {index} of intent #{intent} has no tokens after normalization"
                )
            }
            EmptyEntityName { index } => write!(f, "entity #{index} has an empty name"),
            DuplicateEntity { entity } => write!(f, "entity @{entity} is defined more than once"),
            EmptyCanonical { entity, index } => write!(
                f,
                "value {index} of entity @{entity} has an empty canonical name"
            ),
            DuplicateConcept { entity, canonical } => {
                write!(
                    f,
                    "entity @{entity} defines concept `{canonical}` more than once"
                )
            }
            EmptySurface {
                entity,
                canonical,
                surface,
            } => {
                write!(f, "surface `{surface}` of @{entity}:{canonical} has no tokens after normalization")
            }
            DuplicateSurface { entity, surface } => write!(
                f,
                "entity @{entity} uses surface `{surface}` more than once"
            ),
            EmptyNodeId { index } => write!(f, "dialog node {index} has an empty id"),
            DuplicateNode { node } => write!(f, "dialog node id `{node}` is used more than once"),
            FallbackCount { count } => {
                write!(f, "expected exactly one fallback node, found {count}")
            }
            NestedFallback { node } => write!(f, "dialog node `{node}` nests a fallback condition"),
            EmptyAnd { node } => write!(f, "dialog node `{node}` has an empty `and` condition"),
            UndefinedIntent { node, intent } => write!(
                f,
                "dialog node `{node}` references undefined intent #{intent}"
            ),
            UndefinedEntity { node, entity } => write!(
                f,
                "dialog node `{node}` references undefined entity @{entity}"
            ),
            UndefinedValue {
                node,
                entity,
                value,
            } => {
                write!(
                    f,
                    "dialog node `{node}` references undefined value @{entity}:{value}"
                )
            }
            MalformedTemplate { node, field, error } => {
                write!(f, "dialog node `{node}` {field}: {error}")
            }
        }
    }
}

fn duplicates<'a>(names: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    let mut reported = HashSet::new();
    names
        .filter(|n| !n.is_empty() && !seen.insert(*n) && reported.insert(*n))
        .collect()
}

fn check_condition(
    ws: &Workspace,
    node: &str,
    cond: &Condition,
    nested: bool,
    out: &mut Vec<Violation>,
) {
    let node = node.to_string();
    match cond {
        Condition::IntentIs { intent } if ws.intent(intent).is_none() => {
            out.push(Violation::UndefinedIntent {
                node,
                intent: intent.clone(),
            })
        }
        Condition::EntityPresent { entity } if ws.entity(entity).is_none() => {
            out.push(Violation::UndefinedEntity {
                node,
                entity: entity.clone(),
            })
        }
        Condition::EntityValueIs { entity, value } => match ws.entity(entity) {
            None => out.push(Violation::UndefinedEntity {
                node,
                entity: entity.clone(),
            }),
            Some(def) if !def.values.iter().any(|v| &v.canonical == value) => {
                out.push(Violation::UndefinedValue {
                    node,
                    entity: entity.clone(),
                    value: value.clone(),
                })
            }
            Some(_) => {}
        },
        Condition::And { conditions } => {
            if conditions.is_empty() {
                out.push(Violation::EmptyAnd { node: node.clone() });
            }
            for c in conditions {
                check_condition(ws, &node, c, true, out);
            }
        }
        Condition::Fallback if nested => out.push(Violation::NestedFallback { node }),
        _ => {}
    }
}

fn check_template(
    ws: &Workspace,
    node: &str,
    field: String,
    template: &ResponseTemplate,
    out: &mut Vec<Violation>,
) {
    match template.placeholders() {
        Err(e) => out.push(Violation::MalformedTemplate {
            node: node.into(),
            field,
            error: e.to_string(),
        }),
        Ok(placeholders) => {
            for p in placeholders {
                if let Placeholder::Entity(entity) = p {
                    if ws.entity(&entity).is_none() {
                        out.push(Violation::UndefinedEntity {
                            node: node.into(),
                            entity,
                        });
                    }
                }
            }
        }
    }
}

/// Every broken invariant of `workspace`, in document order.
pub fn validate_workspace(workspace: &Workspace) -> Result<(), Vec<Violation>> {
    let mut out: Vec<Violation> = workspace
        .unknown_keys()
        .iter()
        .map(|path| Violation::UnknownKey { path: path.clone() })
        .collect();

    for (index, intent) in workspace.intents.iter().enumerate() {
        if intent.name.is_empty() {
            out.push(Violation::EmptyIntentName { index });
        }
        if intent.examples.is_empty() {
            out.push(Violation::NoExamples {
                intent: intent.name.clone(),
            });
        }
        for (i, example) in intent.examples.iter().enumerate() {
            if normalize(example).is_empty() {
                out.push(Violation::EmptyExample {
                    intent: intent.name.clone(),
                    index: i,
                });
            }
        }
    }
    out.extend(
        duplicates(workspace.intents.iter().map(|i| i.name.as_str()))
            .into_iter()
            .map(|n| Violation::DuplicateIntent { intent: n.into() }),
    );

    for (index, entity) in workspace.entities.iter().enumerate() {
        if entity.name.is_empty() {
            out.push(Violation::EmptyEntityName { index });
        }
        for (i, value) in entity.values.iter().enumerate() {
            if value.canonical.is_empty() {
                out.push(Violation::EmptyCanonical {
                    entity: entity.name.clone(),
                    index: i,
                });
            }
        }
        out.extend(
            duplicates(entity.values.iter().map(|v| v.canonical.as_str()))
                .into_iter()
                .map(|c| Violation::DuplicateConcept {
                    entity: entity.name.clone(),
                    canonical: c.into(),
                }),
        );
        let mut normalized = Vec::new();
        for value in &entity.values {
            for surface in value.surfaces().filter(|s| !s.is_empty()) {
                let tokens = normalize(surface);
                if tokens.is_empty() {
                    out.push(Violation::EmptySurface {
                        entity: entity.name.clone(),
                        canonical: value.canonical.clone(),
                        surface: surface.into(),
                    });
                } else {
                    normalized.push(tokens.join(" "));
                }
            }
        }
        out.extend(
            duplicates(normalized.iter().map(String::as_str))
                .into_iter()
                .map(|s| Violation::DuplicateSurface {
                    entity: entity.name.clone(),
                    surface: s.into(),
                }),
        );
    }
    out.extend(
        duplicates(workspace.entities.iter().map(|e| e.name.as_str()))
            .into_iter()
            .map(|n| Violation::DuplicateEntity { entity: n.into() }),
    );

    let fallbacks = workspace
        .dialog_nodes
        .iter()
        .filter(|n| n.condition.is_fallback())
        .count();
    if fallbacks != 1 {
        out.push(Violation::FallbackCount { count: fallbacks });
    }
    for (index, node) in workspace.dialog_nodes.iter().enumerate() {
        if node.id.is_empty() {
            out.push(Violation::EmptyNodeId { index });
        }
        check_condition(workspace, &node.id, &node.condition, false, &mut out);
        check_template(
            workspace,
            &node.id,
            "response".into(),
            &node.response,
            &mut out,
        );
        for (key, template) in &node.context_updates {
            check_template(
                workspace,
                &node.id,
                format!("context update `{key}`"),
                template,
                &mut out,
            );
        }
    }
    out.extend(
        duplicates(workspace.dialog_nodes.iter().map(|n| n.id.as_str()))
            .into_iter()
            .map(|n| Violation::DuplicateNode { node: n.into() }),
    );

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}
