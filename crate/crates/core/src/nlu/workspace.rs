use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dialog::DialogNode;

use super::NluError;

/// A user goal with the utterances that teach the classifier to spot it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub name: String,
    pub examples: Vec<String>,
}

/// One concept of an entity. The canonical name is itself a match surface.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptValue {
    pub canonical: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

impl ConceptValue {
    pub fn new(canonical: impl Into<String>, synonyms: &[&str]) -> Self {
        Self {
            canonical: canonical.into(),
            synonyms: synonyms.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Canonical name first, then synonyms in authoring order.
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }
}

/// A named group of concepts, e.g. `assessment` = {midterm exam, final exam}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDef {
    pub name: String,
    pub values: Vec<ConceptValue>,
}

/// The authored training artifact: intents, entities and the dialog flow.
///
/// `revision` is process-local and bumps on every mutation made through
/// [`Workspace::add_example`]; a [`TrainedModel`](super::TrainedModel)
/// remembers the revision it was trained from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub intents: Vec<Intent>,
    #[serde(default)]
    pub entities: Vec<EntityDef>,
    #[serde(default)]
    pub dialog_nodes: Vec<DialogNode>,
    #[serde(skip)]
    revision: u64,
    #[serde(skip)]
    unknown_keys: Vec<String>,
}

impl Workspace {
    pub fn new(
        intents: Vec<Intent>,
        entities: Vec<EntityDef>,
        dialog_nodes: Vec<DialogNode>,
    ) -> Self {
        Self {
            intents,
            entities,
            dialog_nodes,
            revision: 0,
            unknown_keys: Vec::new(),
        }
    }

    /// Parses a workspace document. Keys outside the schema are recorded
    /// (as JSON-pointer-like paths) and surface later as validation
    /// violations rather than parse failures.
    pub fn from_json_str(text: &str) -> Result<Self, NluError> {
        let raw: Value = serde_json::from_str(text)?;
        let mut unknown = Vec::new();
        collect_unknown_keys(&raw, &mut unknown);
        let mut workspace: Workspace = serde_json::from_value(raw)?;
        workspace.unknown_keys = unknown;
        Ok(workspace)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NluError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| NluError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// Writes the workspace to a sibling temp file and renames it over `path`.
    pub fn save_atomic(&self, path: impl AsRef<Path>) -> Result<(), NluError> {
        let path = path.as_ref();
        let io_err = |source| NluError::Io {
            path: path.display().to_string(),
            source,
        };
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let file_name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));

        let mut body = serde_json::to_vec_pretty(self)?;
        body.push(b'\n');
        let mut file = fs::File::create(&tmp).map_err(io_err)?;
        file.write_all(&body).map_err(io_err)?;
        file.sync_all().map_err(io_err)?;
        drop(file);
        fs::rename(&tmp, path).map_err(io_err)
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub(crate) fn unknown_keys(&self) -> &[String] {
        &self.unknown_keys
    }

    pub fn intent(&self, name: &str) -> Option<&Intent> {
        self.intents.iter().find(|i| i.name == name)
    }

    pub fn entity(&self, name: &str) -> Option<&EntityDef> {
        self.entities.iter().find(|e| e.name == name)
    }

    pub fn example_count(&self) -> usize {
        self.intents.iter().map(|i| i.examples.len()).sum()
    }

    pub fn concept_count(&self) -> usize {
        self.entities.iter().map(|e| e.values.len()).sum()
    }

    /// Appends a training utterance to `intent` and bumps the revision.
    pub fn add_example(
        &mut self,
        intent: &str,
        example: impl Into<String>,
    ) -> Result<(), NluError> {
        let target = self
            .intents
            .iter_mut()
            .find(|i| i.name == intent)
            .ok_or_else(|| NluError::UnknownIntent(intent.to_string()))?;
        target.examples.push(example.into());
        self.revision += 1;
        Ok(())
    }
}

const TOP_KEYS: &[&str] = &["intents", "entities", "dialog_nodes"];
const INTENT_KEYS: &[&str] = &["name", "examples"];
const ENTITY_KEYS: &[&str] = &["name", "values"];
const VALUE_KEYS: &[&str] = &["canonical", "synonyms"];
const NODE_KEYS: &[&str] = &["id", "condition", "response", "context_updates"];

fn condition_keys(kind: Option<&str>) -> &'static [&'static str] {
    match kind {
        Some("intent_is") => &["type", "intent"],
        Some("entity_present") => &["type", "entity"],
        Some("entity_value_is") => &["type", "entity", "value"],
        Some("context_equals") => &["type", "key", "value"],
        Some("and") => &["type", "conditions"],
        Some("fallback") => &["type"],
        // an unknown `type` fails deserialization with a clearer message
        _ => &["type"],
    }
}

fn check_object(value: &Value, allowed: &[&str], at: &str, out: &mut Vec<String>) {
    if let Some(map) = value.as_object() {
        out.extend(
            map.keys()
                .filter(|k| !allowed.contains(&k.as_str()))
                .map(|k| format!("{at}/{k}")),
        );
    }
}

fn each<'a>(value: &'a Value, key: &str) -> impl Iterator<Item = (usize, &'a Value)> {
    value
        .get(key)
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .enumerate()
}

fn check_condition(cond: &Value, at: &str, out: &mut Vec<String>) {
    check_object(
        cond,
        condition_keys(cond.get("type").and_then(Value::as_str)),
        at,
        out,
    );
    for (i, child) in each(cond, "conditions") {
        check_condition(child, &format!("{at}/conditions/{i}"), out);
    }
}

fn collect_unknown_keys(doc: &Value, out: &mut Vec<String>) {
    check_object(doc, TOP_KEYS, "", out);
    for (i, intent) in each(doc, "intents") {
        check_object(intent, INTENT_KEYS, &format!("/intents/{i}"), out);
    }
    for (i, entity) in each(doc, "entities") {
        check_object(entity, ENTITY_KEYS, &format!("/entities/{i}"), out);
        for (j, value) in each(entity, "values") {
            check_object(value, VALUE_KEYS, &format!("/entities/{i}/values/{j}"), out);
        }
    }
    for (i, node) in each(doc, "dialog_nodes") {
        let at = format!("/dialog_nodes/{i}");
        check_object(node, NODE_KEYS, &at, out);
        if let Some(cond) = node.get("condition") {
            check_condition(cond, &format!("{at}/condition"), out);
        }
    }
}
