//! Workspace model, naive-Bayes intent classifier and gazetteer entity
//! extraction.

mod classifier;
mod entities;
mod normalize;
mod validate;
mod workspace;

use thiserror::Error;

pub use classifier::{
    Classification, IntentClassifier, IntentStats, ScoredIntent, TrainedModel, DEFAULT_SMOOTHING,
};
pub use entities::{extract_entities, EntityMention, Gazetteer};
pub use normalize::normalize;
pub use validate::{validate_workspace, Violation};
pub use workspace::{ConceptValue, EntityDef, Intent, Workspace};

#[derive(Debug, Error)]
pub enum NluError {
    #[error("workspace has no intents or no training examples")]
    EmptyWorkspace,
    #[error("smoothing constant must be positive and finite, got {0}")]
    InvalidSmoothing(f64),
    #[error("unknown intent #{0}")]
    UnknownIntent(String),
    #[error("cannot access workspace file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("workspace is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}
