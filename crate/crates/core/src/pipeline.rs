//! One question through preprocess → classify → extract → match → render →
//! escalate/record, plus per-session conversation state.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialog::{match_node, render_template, Context};
use crate::escalation::{
    should_escalate, EscalationError, EscalationId, EscalationItem, EscalationQueue,
};
use crate::kb::CourseKB;
use crate::nlu::{
    normalize, Classification, EntityMention, Gazetteer, IntentClassifier, ScoredIntent, Workspace,
};
use crate::now_millis;
use crate::students::{ProfileError, ProfileStore};

pub const DEFAULT_THRESHOLD: f64 = 0.6;
pub const DEFAULT_PRONOUNS: [&str; 4] = ["it", "that", "this", "them"];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("student id must not be empty")]
    EmptyStudentId,
    #[error("model was trained on workspace revision {model}, workspace is at {workspace}")]
    StaleModel { model: u64, workspace: u64 },
    #[error("dialog has no fallback node")]
    NoFallback,
    #[error(transparent)]
    Escalation(#[from] EscalationError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnAuthor {
    Assistant,
    TeachingAssistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Text(String),
    PendingEscalation,
}

impl Answer {
    pub fn text(&self) -> Option<&str> {
        match self {
            Answer::Text(t) => Some(t),
            Answer::PendingEscalation => None,
        }
    }

    pub fn is_pending(&self) -> bool {
        matches!(self, Answer::PendingEscalation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub author: TurnAuthor,
    pub raw_question: String,
    pub preprocessed_question: String,
    pub classification: Classification,
    pub mentions: Vec<EntityMention>,
    pub matched_node_id: Option<String>,
    pub answer: Answer,
    /// Top-1 confidence.
    pub confidence: f64,
    pub escalated: bool,
    /// Placeholder that could not be filled, if rendering failed.
    pub render_failure: Option<String>,
    /// Set on escalated turns and on the TA turn that answers them.
    pub escalation_id: Option<EscalationId>,
    pub timestamp: u64,
}

impl Turn {
    /// The TA's answer to an escalated question, appended to its session.
    pub fn from_resolution(item: &EscalationItem) -> Option<Self> {
        let resolution = item.resolution.as_ref()?;
        Some(Self {
            author: TurnAuthor::TeachingAssistant,
            raw_question: item.question.clone(),
            preprocessed_question: item.question.clone(),
            classification: Classification {
                ranked: vec![ScoredIntent {
                    intent: resolution.corrected_intent.clone(),
                    confidence: 1.0,
                }],
            },
            mentions: Vec::new(),
            matched_node_id: None,
            answer: Answer::Text(resolution.final_answer.clone()),
            confidence: 1.0,
            escalated: false,
            render_failure: None,
            escalation_id: Some(item.id),
            timestamp: resolution.resolved_at,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LastMention {
    pub entity: String,
    pub value: String,
    pub surface: String,
}

impl From<&EntityMention> for LastMention {
    fn from(m: &EntityMention) -> Self {
        Self {
            entity: m.entity.clone(),
            value: m.value.clone(),
            surface: m.surface.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub student_id: String,
    pub context: Context,
    pub last_entity_mention: Option<LastMention>,
    history: Vec<Turn>,
}

impl Session {
    pub fn new(session_id: impl Into<String>, student_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            student_id: student_id.into(),
            context: Context::new(),
            last_entity_mention: None,
            history: Vec::new(),
        }
    }

    pub fn history(&self) -> &[Turn] {
        &self.history
    }

    fn push(&mut self, turn: Turn) {
        if let Some(last) = turn.mentions.last() {
            self.last_entity_mention = Some(last.into());
        }
        self.history.push(turn);
    }

    /// Appends the TA answer for a resolved escalation.
    pub fn deliver_resolution(&mut self, item: &EscalationItem) {
        if let Some(turn) = Turn::from_resolution(item) {
            self.push(turn);
        }
    }
}

/// Replaces standalone pronouns from `pronouns` (compared case-insensitively,
/// ignoring surrounding punctuation) with the surface of `last`. Everything
/// else, whitespace included, is copied verbatim.
pub fn resolve_pronouns_with(
    last: Option<&LastMention>,
    text: &str,
    pronouns: &[impl AsRef<str>],
) -> String {
    let Some(last) = last else {
        return text.to_string();
    };
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while !rest.is_empty() {
        let ws_len = rest.len() - rest.trim_start().len();
        out.push_str(&rest[..ws_len]);
        rest = &rest[ws_len..];
        let word_len = rest.find(char::is_whitespace).unwrap_or(rest.len());
        let word = &rest[..word_len];
        rest = &rest[word_len..];

        let core = word.trim_matches(|c: char| !c.is_alphanumeric());
        let is_pronoun = !core.is_empty()
            && pronouns
                .iter()
                .any(|p| p.as_ref().eq_ignore_ascii_case(core));
        if is_pronoun {
            let start = word.find(core).unwrap_or(0);
            out.push_str(&word[..start]);
            out.push_str(&last.surface);
            out.push_str(&word[start + core.len()..]);
        } else {
            out.push_str(word);
        }
    }
    out
}

pub fn resolve_pronouns(session: &Session, text: &str) -> String {
    resolve_pronouns_with(
        session.last_entity_mention.as_ref(),
        text,
        &DEFAULT_PRONOUNS,
    )
}

/// Everything a turn is answered against: one consistent model/workspace
/// pair, the KB and the gating threshold.
pub struct MessageEnv<'a> {
    pub classifier: &'a dyn IntentClassifier,
    pub workspace: &'a Workspace,
    pub gazetteer: &'a Gazetteer,
    pub kb: &'a CourseKB,
    pub threshold: f64,
    pub pronouns: &'a [String],
}

/// Processes one student message and appends the resulting turn.
///
/// Escalated turns carry [`Answer::PendingEscalation`] and create exactly
/// one queue item holding the best-effort proposed answer (empty when the
/// template could not be rendered). Context updates are rendered against
/// the pre-turn context and applied after the answer; an update whose
/// template cannot be filled leaves its key untouched.
pub fn handle_message(
    session: &mut Session,
    text: &str,
    env: &MessageEnv<'_>,
    escalations: &EscalationQueue,
    profiles: &ProfileStore,
) -> Result<Turn, PipelineError> {
    if env.classifier.workspace_revision() != env.workspace.revision() {
        return Err(PipelineError::StaleModel {
            model: env.classifier.workspace_revision(),
            workspace: env.workspace.revision(),
        });
    }

    let preprocessed =
        resolve_pronouns_with(session.last_entity_mention.as_ref(), text, env.pronouns);
    let tokens = normalize(&preprocessed);
    let classification = env.classifier.classify(&tokens);
    let mentions = env.gazetteer.extract(&tokens);
    let node = match_node(
        &env.workspace.dialog_nodes,
        &classification,
        &mentions,
        &session.context,
    )
    .ok_or(PipelineError::NoFallback)?;
    let rendered = render_template(&node.response, env.kb, &mentions, &session.context);

    let confidence = classification.confidence();
    let escalated = should_escalate(confidence, env.threshold, rendered.is_err());
    let (proposed, render_failure) = match &rendered {
        Ok(text) => (text.clone(), None),
        Err(failure) => (String::new(), Some(failure.placeholder.clone())),
    };
    let mut turn = Turn {
        author: TurnAuthor::Assistant,
        raw_question: text.to_string(),
        preprocessed_question: preprocessed,
        classification,
        mentions,
        matched_node_id: Some(node.id.clone()),
        answer: if escalated {
            Answer::PendingEscalation
        } else {
            Answer::Text(proposed.clone())
        },
        confidence,
        escalated,
        render_failure,
        escalation_id: None,
        timestamp: now_millis(),
    };

    if let Some(item) = escalations.maybe_escalate(
        &turn,
        &session.session_id,
        &session.student_id,
        &proposed,
        env.threshold,
    )? {
        turn.escalation_id = Some(item.id);
    }

    let updates: Vec<(String, String)> = node
        .context_updates
        .iter()
        .filter_map(|(key, template)| {
            render_template(template, env.kb, &turn.mentions, &session.context)
                .ok()
                .map(|v| (key.clone(), v))
        })
        .collect();
    session.context.extend(updates);

    profiles.record_interaction(&session.student_id, &turn)?;
    session.push(turn.clone());
    Ok(turn)
}

/// Live sessions. Work on one session is serialized by its own mutex;
/// different sessions proceed in parallel.
#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl SessionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&self, student_id: &str) -> Result<String, PipelineError> {
        if student_id.trim().is_empty() {
            return Err(PipelineError::EmptyStudentId);
        }
        let id = uuid::Uuid::new_v4().to_string();
        let session = Arc::new(Mutex::new(Session::new(id.clone(), student_id)));
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.clone(), session);
        Ok(id)
    }

    pub fn with_session<R>(
        &self,
        session_id: &str,
        f: impl FnOnce(&mut Session) -> R,
    ) -> Result<R, PipelineError> {
        let session = self
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(session_id)
            .cloned()
            .ok_or_else(|| PipelineError::UnknownSession(session_id.into()))?;
        let mut guard = session.lock().unwrap_or_else(|e| e.into_inner());
        Ok(f(&mut guard))
    }

    pub fn len(&self) -> usize {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
