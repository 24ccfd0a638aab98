use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{normalize, Workspace};

/// A concept recognised in a normalized question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub entity: String,
    /// Canonical concept name.
    pub value: String,
    /// The matched tokens joined by single spaces.
    pub surface: String,
    /// Token range in the normalized question, end exclusive.
    pub span: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct ConceptRef {
    entity: usize,
    value: usize,
}

/// Dictionary of every normalized match surface in a workspace.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    surfaces: HashMap<Vec<String>, ConceptRef>,
    names: Vec<(String, Vec<String>)>,
    longest: usize,
}

impl Gazetteer {
    pub fn new(workspace: &Workspace) -> Self {
        let mut surfaces: HashMap<Vec<String>, ConceptRef> = HashMap::new();
        let mut longest = 0;
        for (entity, def) in workspace.entities.iter().enumerate() {
            for (value, concept) in def.values.iter().enumerate() {
                let here = ConceptRef { entity, value };
                for surface in concept.surfaces() {
                    let tokens = normalize(surface);
                    if tokens.is_empty() {
                        continue;
                    }
                    longest = longest.max(tokens.len());
                    // workspace order wins when two concepts share a surface
                    surfaces
                        .entry(tokens)
                        .and_modify(|existing| *existing = (*existing).min(here))
                        .or_insert(here);
                }
            }
        }
        let names = workspace
            .entities
            .iter()
            .map(|e| {
                (
                    e.name.clone(),
                    e.values.iter().map(|v| v.canonical.clone()).collect(),
                )
            })
            .collect();
        Self {
            surfaces,
            names,
            longest,
        }
    }

    fn resolve(&self, concept: ConceptRef) -> (&str, &str) {
        let (entity, values) = &self.names[concept.entity];
        (entity, &values[concept.value])
    }

    /// `(entity, canonical)` for a surface form, after normalization.
    pub fn lookup(&self, surface: &str) -> Option<(&str, &str)> {
        self.surfaces
            .get(normalize(surface).as_slice())
            .map(|c| self.resolve(*c))
    }

    /// Left-to-right scan taking the longest surface at each position and
    /// skipping past it, so mentions never overlap.
    pub fn extract(&self, tokens: &[String]) -> Vec<EntityMention> {
        let mut mentions = Vec::new();
        let mut start = 0;
        while start < tokens.len() {
            let max_len = self.longest.min(tokens.len() - start);
            let hit = (1..=max_len).rev().find_map(|len| {
                self.surfaces
                    .get(&tokens[start..start + len])
                    .map(|c| (len, *c))
            });
            match hit {
                Some((len, concept)) => {
                    let (entity, value) = self.resolve(concept);
                    mentions.push(EntityMention {
                        entity: entity.to_string(),
                        value: value.to_string(),
                        surface: tokens[start..start + len].join(" "),
                        span: start..start + len,
                    });
                    start += len;
                }
                None => start += 1,
            }
        }
        mentions
    }
}

/// One-shot extraction; builds a throwaway [`Gazetteer`].
pub fn extract_entities(workspace: &Workspace, tokens: &[String]) -> Vec<EntityMention> {
    Gazetteer::new(workspace).extract(tokens)
}
