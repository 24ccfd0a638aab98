use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::Serialize;
use thiserror::Error;

use crate::escalation::{
    resolve_escalation, EscalationError, EscalationId, EscalationItem, EscalationQueue,
    EscalationStatus, ResolveOutcome,
};
use crate::kb::{CourseKB, KbError};
use crate::nlu::{
    normalize, validate_workspace, Classification, Gazetteer, NluError, TrainedModel, Violation,
    Workspace,
};
use crate::pipeline::{handle_message, MessageEnv, PipelineError, SessionStore, Turn};
use crate::students::{
    cluster_students, ClusterAssignment, ClusterError, FeatureSpace, ProfileError, ProfileStore,
};

use super::config::{ConfigError, ServiceConfig};

pub const ESCALATION_LOG: &str = "escalations.jsonl";
pub const PROFILE_LOG: &str = "profiles.jsonl";
pub const DEFAULT_CLUSTER_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("workspace has {} violation(s)", .0.len())]
    InvalidWorkspace(Vec<Violation>),
    #[error(transparent)]
    Nlu(#[from] NluError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Escalation(#[from] EscalationError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("{0}")]
    Unsupported(&'static str),
}

/// A model together with the exact workspace it was trained on.
#[derive(Debug)]
pub struct Snapshot {
    pub workspace: Workspace,
    pub model: TrainedModel,
    pub gazetteer: Gazetteer,
}

impl Snapshot {
    fn build(workspace: Workspace, smoothing: f64) -> Result<Self, EngineError> {
        validate_workspace(&workspace).map_err(EngineError::InvalidWorkspace)?;
        let model = TrainedModel::train(&workspace, smoothing)?;
        let gazetteer = Gazetteer::new(&workspace);
        Ok(Self {
            workspace,
            model,
            gazetteer,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RetrainReport {
    pub revision: u64,
    pub intent_count: usize,
    pub example_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Health {
    pub revision: u64,
    pub intents: Vec<String>,
    pub entities: Vec<String>,
    /// True when TA resolutions have changed the workspace since the last
    /// retrain.
    pub stale: bool,
    pub pending_escalations: usize,
    pub threshold: f64,
}

/// The server: published model snapshot, editable workspace, KB, sessions,
/// escalation queue and student profiles.
///
/// Messages run against an `Arc` of the snapshot current when they start.
/// Resolutions and retraining serialize on the editable workspace, and a
/// retrain publishes its snapshot with a single pointer swap.
#[derive(Debug)]
pub struct Engine {
    config: ServiceConfig,
    workspace_path: Option<PathBuf>,
    authoring: Mutex<Workspace>,
    published: RwLock<Arc<Snapshot>>,
    kb: RwLock<Arc<CourseKB>>,
    sessions: SessionStore,
    escalations: EscalationQueue,
    profiles: ProfileStore,
}

impl Engine {
    /// Loads workspace and KB from the configured paths and replays the
    /// event logs in the data directory.
    pub fn open(config: ServiceConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let workspace = Workspace::load(&config.workspace)?;
        let kb = CourseKB::load(&config.kb)?;
        std::fs::create_dir_all(&config.data_dir).map_err(|e| {
            ConfigError::Invalid(format!(
                "cannot create data directory {}: {e}",
                config.data_dir.display()
            ))
        })?;
        let escalations = EscalationQueue::open(config.data_dir.join(ESCALATION_LOG))?;
        let profiles = ProfileStore::open(config.data_dir.join(PROFILE_LOG))?;
        let path = config.workspace.clone();
        Self::assemble(config, Some(path), workspace, kb, escalations, profiles)
    }

    /// Engine with nothing on disk; file-backed operations are unavailable.
    pub fn ephemeral(
        config: ServiceConfig,
        workspace: Workspace,
        kb: CourseKB,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        Self::assemble(
            config,
            None,
            workspace,
            kb,
            EscalationQueue::in_memory(),
            ProfileStore::in_memory(),
        )
    }

    fn assemble(
        config: ServiceConfig,
        workspace_path: Option<PathBuf>,
        workspace: Workspace,
        kb: CourseKB,
        escalations: EscalationQueue,
        profiles: ProfileStore,
    ) -> Result<Self, EngineError> {
        let snapshot = Snapshot::build(workspace.clone(), config.smoothing)?;
        Ok(Self {
            config,
            workspace_path,
            authoring: Mutex::new(workspace),
            published: RwLock::new(Arc::new(snapshot)),
            kb: RwLock::new(Arc::new(kb)),
            sessions: SessionStore::new(),
            escalations,
            profiles,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.published
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn kb(&self) -> Arc<CourseKB> {
        self.kb.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn authoring(&self) -> MutexGuard<'_, Workspace> {
        self.authoring.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Copy of the editable workspace, including unretrained resolutions.
    pub fn workspace(&self) -> Workspace {
        self.authoring().clone()
    }

    pub fn create_session(&self, student_id: &str) -> Result<String, EngineError> {
        let id = self.sessions.create(student_id)?;
        self.profiles.register(student_id)?;
        Ok(id)
    }

    pub fn post_message(&self, session_id: &str, text: &str) -> Result<Turn, EngineError> {
        let snapshot = self.snapshot();
        let kb = self.kb();
        let env = MessageEnv {
            classifier: &snapshot.model,
            workspace: &snapshot.workspace,
            gazetteer: &snapshot.gazetteer,
            kb: &kb,
            threshold: self.config.threshold,
            pronouns: &self.config.pronouns,
        };
        let turn = self.sessions.with_session(session_id, |session| {
            handle_message(session, text, &env, &self.escalations, &self.profiles)
        })??;
        Ok(turn)
    }

    pub fn turns(&self, session_id: &str) -> Result<Vec<Turn>, EngineError> {
        Ok(self
            .sessions
            .with_session(session_id, |s| s.history().to_vec())?)
    }

    pub fn classify(&self, text: &str) -> Classification {
        self.snapshot().model.classify(&normalize(text))
    }

    pub fn escalations(&self, status: Option<EscalationStatus>) -> Vec<EscalationItem> {
        self.escalations.list(status)
    }

    /// Resolves an escalation, rewrites the workspace file with the new
    /// example and delivers the answer to the originating session if it is
    /// still live.
    pub fn resolve(
        &self,
        id: EscalationId,
        final_answer: &str,
        corrected_intent: &str,
    ) -> Result<ResolveOutcome, EngineError> {
        let mut workspace = self.authoring();
        let outcome = resolve_escalation(
            &self.escalations,
            &mut workspace,
            id,
            final_answer,
            corrected_intent,
            |updated| match &self.workspace_path {
                Some(path) => updated.save_atomic(path),
                None => Ok(()),
            },
        )?;
        drop(workspace);

        let item = &outcome.item;
        if self
            .sessions
            .with_session(&item.session_id, |s| s.deliver_resolution(item))
            .is_err()
        {
            tracing::info!(session = %item.session_id, "session gone; answer kept in escalation log only");
        }
        Ok(outcome)
    }

    /// Trains on the editable workspace and publishes the result.
    pub fn retrain(&self) -> Result<RetrainReport, EngineError> {
        let workspace = self.authoring();
        let snapshot = Snapshot::build(workspace.clone(), self.config.smoothing)?;
        let report = RetrainReport {
            revision: snapshot.model.revision(),
            intent_count: snapshot.workspace.intents.len(),
            example_count: snapshot.workspace.example_count(),
        };
        *self.published.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(snapshot);
        Ok(report)
    }

    /// Re-reads the KB file and publishes it; returns its leaf paths.
    pub fn reload_kb(&self) -> Result<Vec<String>, EngineError> {
        if self.workspace_path.is_none() {
            return Err(EngineError::Unsupported(
                "this engine has no knowledge-base file",
            ));
        }
        let kb = CourseKB::load(&self.config.kb)?;
        Ok(self.replace_kb(kb))
    }

    pub fn replace_kb(&self, kb: CourseKB) -> Vec<String> {
        let paths = kb.paths().map(str::to_string).collect();
        *self.kb.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(kb);
        paths
    }

    pub fn clusters(
        &self,
        k: Option<usize>,
        seed: Option<u64>,
    ) -> Result<ClusterAssignment, EngineError> {
        let space = FeatureSpace::from_workspace(&self.snapshot().workspace);
        let profiles = self.profiles.snapshot();
        Ok(cluster_students(
            &profiles,
            &space,
            k.unwrap_or(self.config.cluster_k),
            seed.unwrap_or(DEFAULT_CLUSTER_SEED),
        )?)
    }

    pub fn profiles(&self) -> &ProfileStore {
        &self.profiles
    }

    pub fn health(&self) -> Health {
        let snapshot = self.snapshot();
        Health {
            revision: snapshot.model.revision(),
            intents: snapshot
                .workspace
                .intents
                .iter()
                .map(|i| i.name.clone())
                .collect(),
            entities: snapshot
                .workspace
                .entities
                .iter()
                .map(|e| e.name.clone())
                .collect(),
            stale: self.authoring().revision() != snapshot.workspace.revision(),
            pending_escalations: self.escalations.list_pending().len(),
            threshold: self.config.threshold,
        }
    }
}
