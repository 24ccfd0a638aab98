//! Course knowledge base: a tree of string leaves addressed by dotted path.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("malformed knowledge base at `{path}`: {reason}")]
    Malformed { path: String, reason: String },
    #[error("cannot read knowledge base {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("knowledge base is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Immutable once loaded; reloads build a fresh value.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CourseKB {
    leaves: BTreeMap<String, String>,
}

pub fn is_valid_segment(segment: &str) -> bool {
    !segment.is_empty()
        && segment
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

pub fn is_valid_path(path: &str) -> bool {
    path.split('.').all(is_valid_segment)
}

fn malformed(path: &str, reason: impl Into<String>) -> KbError {
    KbError::Malformed {
        path: if path.is_empty() {
            "<root>".into()
        } else {
            path.into()
        },
        reason: reason.into(),
    }
}

fn walk(value: &Value, prefix: &str, leaves: &mut BTreeMap<String, String>) -> Result<(), KbError> {
    let Value::Object(map) = value else {
        return Err(malformed(prefix, "expected an object"));
    };
    for (key, child) in map {
        if !is_valid_segment(key) {
            return Err(malformed(prefix, format!("invalid path segment `{key}`")));
        }
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match child {
            Value::String(s) => {
                leaves.insert(path, s.clone());
            }
            Value::Object(_) => walk(child, &path, leaves)?,
            other => {
                return Err(malformed(
                    &path,
                    format!("leaf must be a string, found {other}"),
                ))
            }
        }
    }
    Ok(())
}

impl CourseKB {
    pub fn from_value(document: &Value) -> Result<Self, KbError> {
        let mut leaves = BTreeMap::new();
        walk(document, "", &mut leaves)?;
        Ok(Self { leaves })
    }

    pub fn from_json_str(text: &str) -> Result<Self, KbError> {
        Self::from_value(&serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| KbError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// Exact leaf lookup; interior nodes are not addressable.
    pub fn lookup(&self, path: &str) -> Option<&str> {
        self.leaves.get(path).map(String::as_str)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.leaves.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}
