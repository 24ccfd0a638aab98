//! Self-hosted virtual teaching assistant for a single course.
//!
//! Questions are normalized, rewritten with session context, classified by
//! a naive-Bayes intent model, annotated with gazetteer entities and
//! answered through an ordered dialog flow whose templates are filled from
//! a course knowledge base. Answers the model is unsure about go to a human
//! TA, whose corrections become new training examples. Per-student usage
//! profiles can be clustered with k-means.

pub mod dialog;
pub mod escalation;
pub mod eventlog;
pub mod kb;
pub mod nlu;
pub mod pipeline;
pub mod service;
pub mod students;

/// Milliseconds since the Unix epoch.
pub fn now_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
