use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};

use super::{normalize, NluError, Workspace};

pub const DEFAULT_SMOOTHING: f64 = 1.0;

static NEXT_MODEL_REVISION: AtomicU64 = AtomicU64::new(1);

/// An intent together with its posterior probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredIntent {
    pub intent: String,
    pub confidence: f64,
}

/// Every workspace intent ranked by confidence (descending, ties by name).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Classification {
    pub ranked: Vec<ScoredIntent>,
}

impl Classification {
    pub fn top(&self) -> Option<&ScoredIntent> {
        self.ranked.first()
    }

    pub fn top_intent(&self) -> Option<&str> {
        self.top().map(|s| s.intent.as_str())
    }

    /// Top-1 confidence, 0 for an empty ranking.
    pub fn confidence(&self) -> f64 {
        self.top().map_or(0.0, |s| s.confidence)
    }

    pub fn confidence_of(&self, intent: &str) -> Option<f64> {
        self.ranked
            .iter()
            .find(|s| s.intent == intent)
            .map(|s| s.confidence)
    }
}

/// Anything that can rank intents for a normalized question.
pub trait IntentClassifier: Send + Sync {
    fn classify(&self, tokens: &[String]) -> Classification;

    /// Revision of the workspace this classifier was built from.
    fn workspace_revision(&self) -> u64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentStats {
    pub name: String,
    pub example_count: u64,
    pub token_counts: BTreeMap<String, u64>,
    pub token_total: u64,
}

/// Immutable multinomial naive-Bayes snapshot over unigram tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    vocabulary: BTreeSet<String>,
    intents: Vec<IntentStats>,
    smoothing: f64,
    revision: u64,
    workspace_revision: u64,
}

impl TrainedModel {
    /// Fits the model to every example in `workspace`. Each call receives a
    /// fresh, strictly larger revision number.
    pub fn train(workspace: &Workspace, smoothing: f64) -> Result<Self, NluError> {
        if !(smoothing.is_finite() && smoothing > 0.0) {
            return Err(NluError::InvalidSmoothing(smoothing));
        }
        if workspace.intents.is_empty() || workspace.example_count() == 0 {
            return Err(NluError::EmptyWorkspace);
        }

        let mut vocabulary = BTreeSet::new();
        let intents = workspace
            .intents
            .iter()
            .map(|intent| {
                let mut token_counts = BTreeMap::new();
                let mut token_total = 0;
                for token in intent.examples.iter().flat_map(|e| normalize(e)) {
                    *token_counts.entry(token.clone()).or_insert(0) += 1;
                    token_total += 1;
                    vocabulary.insert(token);
                }
                IntentStats {
                    name: intent.name.clone(),
                    example_count: intent.examples.len() as u64,
                    token_counts,
                    token_total,
                }
            })
            .collect();

        Ok(Self {
            vocabulary,
            intents,
            smoothing,
            revision: NEXT_MODEL_REVISION.fetch_add(1, AtomicOrdering::Relaxed),
            workspace_revision: workspace.revision(),
        })
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    pub fn intents(&self) -> &[IntentStats] {
        &self.intents
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn workspace_revision(&self) -> u64 {
        self.workspace_revision
    }

    pub fn example_count(&self) -> u64 {
        self.intents.iter().map(|i| i.example_count).sum()
    }

    pub fn prior(&self, intent: &str) -> Option<f64> {
        let total = self.example_count() as f64;
        self.intents
            .iter()
            .find(|i| i.name == intent)
            .map(|i| i.example_count as f64 / total)
    }

    /// Posterior over intents. Out-of-vocabulary tokens carry no evidence,
    /// so an empty or fully unknown question yields the priors.
    pub fn classify(&self, tokens: &[String]) -> Classification {
        let total_examples = self.example_count() as f64;
        let vocab_size = self.vocabulary.len() as f64;
        let known: Vec<&str> = tokens
            .iter()
            .map(String::as_str)
            .filter(|t| self.vocabulary.contains(*t))
            .collect();

        let log_scores: Vec<f64> = self
            .intents
            .iter()
            .map(|stats| {
                let denominator = (stats.token_total as f64 + self.smoothing * vocab_size).ln();
                let likelihood: f64 = known
                    .iter()
                    .map(|t| {
                        let count = stats.token_counts.get(*t).copied().unwrap_or(0) as f64;
                        (count + self.smoothing).ln() - denominator
                    })
                    .sum();
                (stats.example_count as f64 / total_examples).ln() + likelihood
            })
            .collect();

        let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = log_scores.iter().map(|s| (s - max).exp()).collect();
        let norm: f64 = weights.iter().sum();

        let mut ranked: Vec<ScoredIntent> = self
            .intents
            .iter()
            .zip(weights)
            .map(|(stats, w)| ScoredIntent {
                intent: stats.name.clone(),
                confidence: w / norm,
            })
            .collect();
        ranked.sort_by(rank_order);
        Classification { ranked }
    }
}

fn rank_order(a: &ScoredIntent, b: &ScoredIntent) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.intent.cmp(&b.intent))
}

impl IntentClassifier for TrainedModel {
    fn classify(&self, tokens: &[String]) -> Classification {
        TrainedModel::classify(self, tokens)
    }

    fn workspace_revision(&self) -> u64 {
        self.workspace_revision
    }
}
