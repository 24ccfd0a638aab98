//! Human-TA review queue for low-confidence or unrenderable answers.
//!
//! Items are created by the pipeline, listed and resolved by TAs. A
//! resolution labels the escalated question with the corrected intent and
//! appends it to the workspace as a new training example; retraining stays
//! an explicit, separate step.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::EventLog;
use crate::nlu::{normalize, Workspace};
use crate::now_millis;
use crate::pipeline::Turn;

pub type EscalationId = u64;

#[derive(Debug, Error)]
pub enum EscalationError {
    #[error("escalation {0} not found")]
    NotFound(EscalationId),
    #[error("escalation {0} is already resolved")]
    AlreadyResolved(EscalationId),
    #[error("unknown intent #{0}")]
    UnknownIntent(String),
    #[error("final answer must not be empty")]
    EmptyAnswer,
    #[error("cannot persist escalation state: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscalationStatus {
    Pending,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EscalationReason {
    LowConfidence,
    RenderFailure { placeholder: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub final_answer: String,
    pub corrected_intent: String,
    pub resolved_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationItem {
    pub id: EscalationId,
    pub session_id: String,
    pub student_id: String,
    /// The question after preprocessing, as the classifier saw it.
    pub question: String,
    /// Best-effort rendering of the matched node; empty if it failed.
    pub proposed_answer: String,
    pub proposed_intent: String,
    pub confidence: f64,
    /// Threshold in force when the item was created.
    pub threshold: f64,
    pub reason: EscalationReason,
    pub status: EscalationStatus,
    pub resolution: Option<Resolution>,
    pub created_at: u64,
}

impl EscalationItem {
    pub fn is_pending(&self) -> bool {
        self.status == EscalationStatus::Pending
    }
}

/// Strict inequality: a confidence equal to the threshold is answered.
pub fn should_escalate(confidence: f64, threshold: f64, render_failed: bool) -> bool {
    render_failed || confidence < threshold
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum EscalationEvent {
    Created {
        item: EscalationItem,
    },
    Resolved {
        id: EscalationId,
        resolution: Resolution,
    },
}

#[derive(Debug, Default)]
struct QueueState {
    items: BTreeMap<EscalationId, EscalationItem>,
    next_id: EscalationId,
}

impl QueueState {
    fn apply(&mut self, event: EscalationEvent) {
        match event {
            EscalationEvent::Created { item } => {
                self.next_id = self.next_id.max(item.id + 1);
                self.items.insert(item.id, item);
            }
            EscalationEvent::Resolved { id, resolution } => {
                if let Some(item) = self.items.get_mut(&id) {
                    item.status = EscalationStatus::Resolved;
                    item.resolution = Some(resolution);
                }
            }
        }
    }
}

/// Thread-safe queue; every state change is logged before it becomes
/// visible when a log is attached.
#[derive(Debug)]
pub struct EscalationQueue {
    state: Mutex<QueueState>,
    log: Option<EventLog<EscalationEvent>>,
}

impl Default for EscalationQueue {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl EscalationQueue {
    pub fn in_memory() -> Self {
        Self {
            state: Mutex::new(QueueState {
                next_id: 1,
                ..Default::default()
            }),
            log: None,
        }
    }

    /// Opens the JSON-lines log at `path` and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EscalationError> {
        let (log, events) =
            EventLog::open(path).map_err(|e| EscalationError::Persist(e.to_string()))?;
        let mut state = QueueState {
            next_id: 1,
            ..Default::default()
        };
        for event in events {
            state.apply(event);
        }
        Ok(Self {
            state: Mutex::new(state),
            log: Some(log),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn record(
        &self,
        state: &mut QueueState,
        event: EscalationEvent,
    ) -> Result<(), EscalationError> {
        if let Some(log) = &self.log {
            log.append(&event)
                .map_err(|e| EscalationError::Persist(e.to_string()))?;
        }
        state.apply(event);
        Ok(())
    }

    /// Enqueues an item for `turn` when its confidence is below `threshold`
    /// or its answer failed to render.
    pub fn maybe_escalate(
        &self,
        turn: &Turn,
        session_id: &str,
        student_id: &str,
        proposed_answer: &str,
        threshold: f64,
    ) -> Result<Option<EscalationItem>, EscalationError> {
        if !should_escalate(turn.confidence, threshold, turn.render_failure.is_some()) {
            return Ok(None);
        }
        let reason = match (&turn.render_failure, turn.confidence < threshold) {
            (Some(placeholder), false) => EscalationReason::RenderFailure {
                placeholder: placeholder.clone(),
            },
            _ => EscalationReason::LowConfidence,
        };
        let mut state = self.lock();
        let item = EscalationItem {
            id: state.next_id,
            session_id: session_id.into(),
            student_id: student_id.into(),
            question: turn.preprocessed_question.clone(),
            proposed_answer: proposed_answer.into(),
            proposed_intent: turn.classification.top_intent().unwrap_or_default().into(),
            confidence: turn.confidence,
            threshold,
            reason,
            status: EscalationStatus::Pending,
            resolution: None,
            created_at: now_millis(),
        };
        self.record(&mut state, EscalationEvent::Created { item: item.clone() })?;
        Ok(Some(item))
    }

    /// Pending items, oldest first.
    pub fn list_pending(&self) -> Vec<EscalationItem> {
        self.list(Some(EscalationStatus::Pending))
    }

    pub fn list(&self, status: Option<EscalationStatus>) -> Vec<EscalationItem> {
        self.lock()
            .items
            .values()
            .filter(|i| status.is_none_or(|s| i.status == s))
            .cloned()
            .collect()
    }

    pub fn get(&self, id: EscalationId) -> Option<EscalationItem> {
        self.lock().items.get(&id).cloned()
    }

    /// Marks `id` resolved. Only the first of several racing calls wins.
    /// Does not check the intent against a workspace; see
    /// [`resolve_escalation`].
    pub fn resolve(
        &self,
        id: EscalationId,
        final_answer: &str,
        corrected_intent: &str,
    ) -> Result<EscalationItem, EscalationError> {
        let mut state = self.lock();
        let item = state.items.get(&id).ok_or(EscalationError::NotFound(id))?;
        if !item.is_pending() {
            return Err(EscalationError::AlreadyResolved(id));
        }
        let resolution = Resolution {
            final_answer: final_answer.into(),
            corrected_intent: corrected_intent.into(),
            resolved_at: now_millis(),
        };
        self.record(&mut state, EscalationEvent::Resolved { id, resolution })?;
        Ok(state.items[&id].clone())
    }
}

/// A resolved item and whether its question became a training example.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolveOutcome {
    #[serde(flatten)]
    pub item: EscalationItem,
    pub example_added: bool,
}

/// Resolves `id` and adds its question to `corrected_intent`'s examples.
/// Questions without a single token (e.g. "???") are resolved without
/// becoming examples, since they would carry no training signal.
///
/// `persist` sees the updated workspace before the resolution is recorded;
/// if it fails, neither the queue nor `workspace` change.
pub fn resolve_escalation<E: std::fmt::Display>(
    queue: &EscalationQueue,
    workspace: &mut Workspace,
    id: EscalationId,
    final_answer: &str,
    corrected_intent: &str,
    persist: impl FnOnce(&Workspace) -> Result<(), E>,
) -> Result<ResolveOutcome, EscalationError> {
    if final_answer.trim().is_empty() {
        return Err(EscalationError::EmptyAnswer);
    }
    if workspace.intent(corrected_intent).is_none() {
        return Err(EscalationError::UnknownIntent(corrected_intent.into()));
    }
    let item = queue.get(id).ok_or(EscalationError::NotFound(id))?;
    if !item.is_pending() {
        return Err(EscalationError::AlreadyResolved(id));
    }

    if normalize(&item.question).is_empty() {
        let item = queue.resolve(id, final_answer, corrected_intent)?;
        return Ok(ResolveOutcome {
            item,
            example_added: false,
        });
    }
    let mut updated = workspace.clone();
    updated
        .add_example(corrected_intent, item.question.clone())
        .map_err(|_| EscalationError::UnknownIntent(corrected_intent.into()))?;
    persist(&updated).map_err(|e| EscalationError::Persist(e.to_string()))?;
    let item = queue.resolve(id, final_answer, corrected_intent)?;
    *workspace = updated;
    Ok(ResolveOutcome {
        item,
        example_added: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlu::{Classification, ScoredIntent};
    use crate::pipeline::{Answer, TurnAuthor};

    fn turn(confidence: f64, question: &str) -> Turn {
        Turn {
            author: TurnAuthor::Assistant,
            raw_question: question.into(),
            preprocessed_question: question.into(),
            classification: Classification {
                ranked: vec![ScoredIntent {
                    intent: "greeting".into(),
                    confidence,
                }],
            },
            mentions: vec![],
            matched_node_id: Some("greet".into()),
            answer: Answer::PendingEscalation,
            confidence,
            escalated: true,
            render_failure: None,
            escalation_id: None,
            timestamp: 0,
        }
    }

    fn mini() -> Workspace {
        Workspace::from_json_str(include_str!("../fixtures/mini_workspace.json")).unwrap()
    }

    #[test]
    fn threshold_boundary_is_strict() {
        let q = EscalationQueue::in_memory();
        assert!(q
            .maybe_escalate(&turn(0.9, "a"), "s", "u", "", 0.6)
            .unwrap()
            .is_none());
        assert!(q
            .maybe_escalate(&turn(0.6, "a"), "s", "u", "", 0.6)
            .unwrap()
            .is_none());
        let item = q
            .maybe_escalate(&turn(0.33, "a"), "s", "u", "p", 0.6)
            .unwrap()
            .unwrap();
        assert!(item.is_pending());
        assert_eq!(item.confidence, 0.33);
        assert_eq!(item.proposed_intent, "greeting");
        assert_eq!(item.reason, EscalationReason::LowConfidence);
    }

    #[test]
    fn render_failure_escalates_at_high_confidence() {
        let q = EscalationQueue::in_memory();
        let mut t = turn(0.99, "a");
        t.render_failure = Some("kb:x".into());
        let item = q.maybe_escalate(&t, "s", "u", "", 0.6).unwrap().unwrap();
        assert_eq!(
            item.reason,
            EscalationReason::RenderFailure {
                placeholder: "kb:x".into()
            }
        );
    }

    #[test]
    fn pending_list_in_creation_order() {
        let q = EscalationQueue::in_memory();
        assert!(q.list_pending().is_empty());
        let a = q
            .maybe_escalate(&turn(0.1, "first"), "s", "u", "", 0.6)
            .unwrap()
            .unwrap();
        let b = q
            .maybe_escalate(&turn(0.1, "second"), "s", "u", "", 0.6)
            .unwrap()
            .unwrap();
        assert_eq!(
            q.list_pending().iter().map(|i| i.id).collect::<Vec<_>>(),
            [a.id, b.id]
        );
        q.resolve(a.id, "answer", "greeting").unwrap();
        assert_eq!(
            q.list_pending().iter().map(|i| i.id).collect::<Vec<_>>(),
            [b.id]
        );
    }

    #[test]
    fn resolution_adds_exactly_one_example() {
        let q = EscalationQueue::in_memory();
        let mut ws = mini();
        let before: Vec<usize> = ws.intents.iter().map(|i| i.examples.len()).collect();
        let item = q
            .maybe_escalate(&turn(0.3, "is there a makeup session"), "s", "u", "", 0.6)
            .unwrap()
            .unwrap();
        let outcome =
            resolve_escalation(&q, &mut ws, item.id, "Yes, in July.", "exam_date", |_| {
                Ok::<_, String>(())
            })
            .unwrap();
        assert!(outcome.example_added);
        let resolved = outcome.item;
        assert_eq!(resolved.status, EscalationStatus::Resolved);
        assert_eq!(
            resolved.resolution.as_ref().unwrap().corrected_intent,
            "exam_date"
        );
        let after: Vec<usize> = ws.intents.iter().map(|i| i.examples.len()).collect();
        assert_eq!(after, [before[0], before[1] + 1, before[2]]);
        assert_eq!(
            ws.intent("exam_date").unwrap().examples.last().unwrap(),
            "is there a makeup session"
        );

        let again = resolve_escalation(&q, &mut ws, item.id, "x", "exam_date", |_| {
            Ok::<_, String>(())
        });
        assert!(matches!(again, Err(EscalationError::AlreadyResolved(_))));
    }

    #[test]
    fn unknown_intent_leaves_workspace_untouched() {
        let q = EscalationQueue::in_memory();
        let mut ws = mini();
        let item = q
            .maybe_escalate(&turn(0.3, "q"), "s", "u", "", 0.6)
            .unwrap()
            .unwrap();
        let err = resolve_escalation(&q, &mut ws, item.id, "a", "nope", |_| Ok::<_, String>(()))
            .unwrap_err();
        assert!(matches!(err, EscalationError::UnknownIntent(i) if i == "nope"));
        assert_eq!(ws, mini());
        assert!(q.get(item.id).unwrap().is_pending());
        assert!(matches!(
            resolve_escalation(&q, &mut ws, 999, "a", "greeting", |_| Ok::<_, String>(())),
            Err(EscalationError::NotFound(999))
        ));
    }

    #[test]
    fn tokenless_question_is_resolved_without_example() {
        let q = EscalationQueue::in_memory();
        let mut ws = mini();
        let item = q
            .maybe_escalate(&turn(0.3, "???"), "s", "u", "", 0.6)
            .unwrap()
            .unwrap();
        let outcome = resolve_escalation(
            &q,
            &mut ws,
            item.id,
            "Could you rephrase?",
            "greeting",
            |_| Err("unused"),
        )
        .unwrap();
        assert!(!outcome.example_added);
        assert_eq!(outcome.item.status, EscalationStatus::Resolved);
        assert_eq!(ws, mini());
    }

    #[test]
    fn failed_persist_rolls_back() {
        let q = EscalationQueue::in_memory();
        let mut ws = mini();
        let item = q
            .maybe_escalate(&turn(0.3, "q"), "s", "u", "", 0.6)
            .unwrap()
            .unwrap();
        let err = resolve_escalation(&q, &mut ws, item.id, "a", "greeting", |_| Err("disk full"))
            .unwrap_err();
        assert!(matches!(err, EscalationError::Persist(_)));
        assert_eq!(ws, mini());
        assert!(q.get(item.id).unwrap().is_pending());
    }

    #[test]
    fn concurrent_resolves_have_one_winner() {
        let q = std::sync::Arc::new(EscalationQueue::in_memory());
        let item = q
            .maybe_escalate(&turn(0.3, "q"), "s", "u", "", 0.6)
            .unwrap()
            .unwrap();
        let wins: usize = (0..8)
            .map(|_| {
                let q = q.clone();
                std::thread::spawn(move || q.resolve(item.id, "a", "greeting").is_ok() as usize)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .map(|h| h.join().unwrap())
            .sum();
        assert_eq!(wins, 1);
    }

    #[test]
    fn log_replay_restores_queue() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("escalations.jsonl");
        let (first, second) = {
            let q = EscalationQueue::open(&path).unwrap();
            let a = q
                .maybe_escalate(&turn(0.1, "one"), "s", "u", "", 0.6)
                .unwrap()
                .unwrap();
            let b = q
                .maybe_escalate(&turn(0.2, "two"), "s", "u", "", 0.6)
                .unwrap()
                .unwrap();
            q.resolve(a.id, "done", "greeting").unwrap();
            (a.id, b.id)
        };
        let q = EscalationQueue::open(&path).unwrap();
        assert_eq!(
            q.list_pending().iter().map(|i| i.id).collect::<Vec<_>>(),
            [second]
        );
        assert_eq!(
            q.get(first).unwrap().resolution.unwrap().final_answer,
            "done"
        );
        let c = q
            .maybe_escalate(&turn(0.2, "three"), "s", "u", "", 0.6)
            .unwrap()
            .unwrap();
        assert!(c.id > second);
    }
}
