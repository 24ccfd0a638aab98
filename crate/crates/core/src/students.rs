//! Per-student usage profiles and k-means segmentation over them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::EventLog;
use crate::nlu::Workspace;
use crate::pipeline::Turn;

pub const DEFAULT_CLUSTERS: usize = 3;
pub const MAX_ITERATIONS: usize = 100;
pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("need at least {k} distinct feature vectors, found {distinct}")]
    TooFewDistinctPoints { distinct: usize, k: usize },
    #[error("feature vectors have inconsistent dimensions")]
    DimensionMismatch,
}

#[derive(Debug, Error)]
#[error("cannot persist student profiles: {0}")]
pub struct ProfileError(String);

/// What one turn contributes to a profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub intent: Option<String>,
    pub entities: BTreeSet<String>,
}

impl Interaction {
    pub fn from_turn(turn: &Turn) -> Self {
        Self {
            intent: turn.classification.top_intent().map(str::to_string),
            entities: turn.mentions.iter().map(|m| m.entity.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StudentProfile {
    pub student_id: String,
    pub intent_counts: BTreeMap<String, u64>,
    pub entity_counts: BTreeMap<String, u64>,
}

impl StudentProfile {
    pub fn new(student_id: impl Into<String>) -> Self {
        Self {
            student_id: student_id.into(),
            ..Default::default()
        }
    }

    /// Top-1 intent +1 (escalated turns count under the proposed intent);
    /// each distinct mentioned entity +1.
    pub fn record_interaction(&mut self, turn: &Turn) {
        self.apply(&Interaction::from_turn(turn));
    }

    fn apply(&mut self, interaction: &Interaction) {
        if let Some(intent) = &interaction.intent {
            *self.intent_counts.entry(intent.clone()).or_insert(0) += 1;
        }
        for entity in &interaction.entities {
            *self.entity_counts.entry(entity.clone()).or_insert(0) += 1;
        }
    }
}

/// Feature axes: workspace intents, then workspace entities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureSpace {
    pub intents: Vec<String>,
    pub entities: Vec<String>,
}

impl FeatureSpace {
    pub fn from_workspace(workspace: &Workspace) -> Self {
        Self {
            intents: workspace.intents.iter().map(|i| i.name.clone()).collect(),
            entities: workspace.entities.iter().map(|e| e.name.clone()).collect(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.intents.len() + self.entities.len()
    }

    /// L1-normalized counts; all zeros for a student with no recorded usage.
    pub fn featurize(&self, profile: &StudentProfile) -> Vec<f64> {
        let counts = |map: &BTreeMap<String, u64>, names: &[String]| -> Vec<f64> {
            names
                .iter()
                .map(|n| map.get(n).copied().unwrap_or(0) as f64)
                .collect()
        };
        let mut v = counts(&profile.intent_counts, &self.intents);
        v.extend(counts(&profile.entity_counts, &self.entities));
        let total: f64 = v.iter().sum();
        if total > 0.0 {
            v.iter_mut().for_each(|x| *x /= total);
        }
        v
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum ProfileEvent {
    Registered {
        student_id: String,
    },
    Interaction {
        student_id: String,
        interaction: Interaction,
    },
}

/// All student profiles, optionally backed by a JSON-lines event log.
#[derive(Debug)]
pub struct ProfileStore {
    profiles: Mutex<BTreeMap<String, StudentProfile>>,
    log: Option<EventLog<ProfileEvent>>,
}

impl Default for ProfileStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl ProfileStore {
    pub fn in_memory() -> Self {
        Self {
            profiles: Mutex::new(BTreeMap::new()),
            log: None,
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, ProfileError> {
        let (log, events) = EventLog::open(path).map_err(|e| ProfileError(e.to_string()))?;
        let mut profiles = BTreeMap::new();
        for event in events {
            match event {
                ProfileEvent::Registered { student_id } => {
                    profiles
                        .entry(student_id.clone())
                        .or_insert_with(|| StudentProfile::new(student_id));
                }
                ProfileEvent::Interaction {
                    student_id,
                    interaction,
                } => profiles
                    .entry(student_id.clone())
                    .or_insert_with(|| StudentProfile::new(student_id))
                    .apply(&interaction),
            }
        }
        Ok(Self {
            profiles: Mutex::new(profiles),
            log: Some(log),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, StudentProfile>> {
        self.profiles.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn append(&self, event: &ProfileEvent) -> Result<(), ProfileError> {
        match &self.log {
            Some(log) => log.append(event).map_err(|e| ProfileError(e.to_string())),
            None => Ok(()),
        }
    }

    /// Creates an empty profile unless one exists.
    pub fn register(&self, student_id: &str) -> Result<(), ProfileError> {
        let mut profiles = self.lock();
        if !profiles.contains_key(student_id) {
            self.append(&ProfileEvent::Registered {
                student_id: student_id.into(),
            })?;
            profiles.insert(student_id.into(), StudentProfile::new(student_id));
        }
        Ok(())
    }

    pub fn record_interaction(&self, student_id: &str, turn: &Turn) -> Result<(), ProfileError> {
        let interaction = Interaction::from_turn(turn);
        let mut profiles = self.lock();
        self.append(&ProfileEvent::Interaction {
            student_id: student_id.into(),
            interaction: interaction.clone(),
        })?;
        profiles
            .entry(student_id.into())
            .or_insert_with(|| StudentProfile::new(student_id))
            .apply(&interaction);
        Ok(())
    }

    pub fn get(&self, student_id: &str) -> Option<StudentProfile> {
        self.lock().get(student_id).cloned()
    }

    /// Consistent copy of every profile, sorted by student id.
    pub fn snapshot(&self) -> Vec<StudentProfile> {
        self.lock().values().cloned().collect()
    }
}

/// Output of a k-means run over raw points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step, starting with the assignment to
    /// the k-means++ seeds.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    pub assignments: BTreeMap<String, usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, lowest index on ties.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, squared_distance(point, c)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    points.iter().fold(
        (Vec::with_capacity(points.len()), 0.0),
        |(mut labels, inertia), p| {
            let (label, d) = nearest(p, centroids);
            labels.push(label);
            (labels, inertia + d)
        },
    )
}

fn distinct_points(points: &[Vec<f64>]) -> usize {
    let keys: BTreeSet<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|x| (x + 0.0).to_bits()).collect())
        .collect();
    keys.len()
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut closest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = closest.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, &d) in closest.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            chosen = Some(i);
            if target < acc {
                break;
            }
        }
        // there are at least k distinct points, so some weight is positive
        let next = points[chosen.expect("a point away from every centroid")].clone();
        for (c, p) in closest.iter_mut().zip(points) {
            *c = c.min(squared_distance(p, &next));
        }
        centroids.push(next);
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeds drawn with a ChaCha8 generator
/// seeded by `seed`. Stops after [`MAX_ITERATIONS`] or once no centroid
/// moves by [`CONVERGENCE_TOLERANCE`] or more. A cluster that loses all
/// its points keeps its previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit, ClusterError> {
    if k == 0 {
        return Err(ClusterError::InvalidK);
    }
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(ClusterError::DimensionMismatch);
    }
    let distinct = distinct_points(points);
    if distinct < k {
        return Err(ClusterError::TooFewDistinctPoints { distinct, k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let (mut labels, mut inertia) = assign(points, &centroids);
    let mut inertia_history = vec![inertia];
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        let mut shift: f64 = 0.0;
        for (c, (sum, &n)) in centroids.iter_mut().zip(sums.into_iter().zip(&counts)) {
            if n == 0 {
                continue;
            }
            let updated: Vec<f64> = sum.into_iter().map(|s| s / n as f64).collect();
            shift = shift.max(squared_distance(c, &updated).sqrt());
            *c = updated;
        }
        (labels, inertia) = assign(points, &centroids);
        inertia_history.push(inertia);
        if shift < CONVERGENCE_TOLERANCE {
            break;
        }
    }

    Ok(KMeansFit {
        labels,
        centroids,
        inertia,
        inertia_history,
        iterations,
    })
}

/// Clusters students by their feature vectors. Profiles are sorted by
/// student id first, so input order never affects the result.
pub fn cluster_students(
    profiles: &[StudentProfile],
    space: &FeatureSpace,
    k: usize,
    seed: u64,
) -> Result<ClusterAssignment, ClusterError> {
    let mut sorted: Vec<&StudentProfile> = profiles.iter().collect();
    sorted.sort_by(|a, b| a.student_id.cmp(&b.student_id));
    let points: Vec<Vec<f64>> = sorted.iter().map(|p| space.featurize(p)).collect();
    let fit = kmeans(&points, k, seed)?;
    Ok(ClusterAssignment {
        assignments: sorted
            .iter()
            .zip(&fit.labels)
            .map(|(p, &l)| (p.student_id.clone(), l))
            .collect(),
        centroids: fit.centroids,
        inertia: fit.inertia,
        inertia_history: fit.inertia_history,
        iterations: fit.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlu::{Classification, EntityMention, ScoredIntent};
    use crate::pipeline::{Answer, TurnAuthor};
    use proptest::prelude::*;

    fn turn(intent: &str, entities: &[&str], escalated: bool) -> Turn {
        Turn {
            author: TurnAuthor::Assistant,
            raw_question: String::new(),
            preprocessed_question: String::new(),
            classification: Classification {
                ranked: vec![ScoredIntent {
                    intent: intent.into(),
                    confidence: 0.5,
                }],
            },
            mentions: entities
                .iter()
                .enumerate()
                .map(|(i, e)| EntityMention {
                    entity: e.to_string(),
                    value: format!("v{i}"),
                    surface: format!("v{i}"),
                    span: i..i + 1,
                })
                .collect(),
            matched_node_id: None,
            answer: if escalated {
                Answer::PendingEscalation
            } else {
                Answer::Text("a".into())
            },
            confidence: 0.5,
            escalated,
            render_failure: None,
            escalation_id: None,
            timestamp: 0,
        }
    }

    fn space(intents: &[&str], entities: &[&str]) -> FeatureSpace {
        FeatureSpace {
            intents: intents.iter().map(|s| s.to_string()).collect(),
            entities: entities.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn profile(id: &str, intents: &[(&str, u64)], entities: &[(&str, u64)]) -> StudentProfile {
        StudentProfile {
            student_id: id.into(),
            intent_counts: intents.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            entity_counts: entities.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    #[test]
    fn record_counts_intent_and_entity() {
        let mut p = StudentProfile::new("alice");
        p.record_interaction(&turn("exam_date", &["assessment"], false));
        assert_eq!(p.intent_counts["exam_date"], 1);
        assert_eq!(p.entity_counts["assessment"], 1);
    }

    #[test]
    fn repeated_entity_counts_once_per_turn() {
        let mut p = StudentProfile::new("alice");
        p.record_interaction(&turn("exam_date", &["assessment", "assessment"], false));
        assert_eq!(p.entity_counts["assessment"], 1);
    }

    #[test]
    fn escalated_turn_counts_under_proposed_intent() {
        let mut p = StudentProfile::new("alice");
        p.record_interaction(&turn("greeting", &[], true));
        assert_eq!(p.intent_counts["greeting"], 1);
    }

    #[test]
    fn featurize_examples() {
        let two = space(&["greeting", "exam_date"], &[]);
        assert_eq!(
            two.featurize(&profile("a", &[("greeting", 1), ("exam_date", 1)], &[])),
            [0.5, 0.5]
        );
        assert_eq!(two.featurize(&StudentProfile::new("b")), [0.0, 0.0]);
        let three = space(&["greeting", "exam_date"], &["assessment"]);
        assert_eq!(
            three.featurize(&profile("c", &[("exam_date", 3)], &[("assessment", 1)])),
            [0.0, 0.75, 0.25]
        );
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]];
        let fit = kmeans(&pts, 1, 7).unwrap();
        assert_eq!(fit.labels, [0, 0, 0]);
        assert!(
            (fit.centroids[0][0] - 0.5).abs() < 1e-12 && (fit.centroids[0][1] - 0.5).abs() < 1e-12
        );
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = vec![vec![1.0], vec![1.0], vec![1.0]];
        assert!(matches!(
            kmeans(&pts, 2, 0),
            Err(ClusterError::TooFewDistinctPoints { distinct: 1, k: 2 })
        ));
        assert!(matches!(kmeans(&pts, 0, 0), Err(ClusterError::InvalidK)));
    }

    #[test]
    fn store_replays_from_log() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profiles.jsonl");
        {
            let store = ProfileStore::open(&path).unwrap();
            store.register("alice").unwrap();
            store.register("alice").unwrap();
            store.register("bob").unwrap();
            store
                .record_interaction("alice", &turn("exam_date", &["assessment"], false))
                .unwrap();
        }
        let store = ProfileStore::open(&path).unwrap();
        let all = store.snapshot();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].intent_counts["exam_date"], 1);
        assert!(all[1].intent_counts.is_empty());
    }

    fn point_cloud() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 4..20)
    }

    proptest! {
        #[test]
        fn inertia_never_increases(points in point_cloud(), k in 1usize..4, seed in any::<u64>()) {
            let fit = kmeans(&points, k, seed).unwrap();
            for w in fit.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", fit.inertia_history);
            }
            prop_assert!(fit.inertia <= fit.inertia_history[0] + 1e-12);
            for (p, &l) in points.iter().zip(&fit.labels) {
                prop_assert_eq!(nearest(p, &fit.centroids).0, l);
            }
        }

        #[test]
        fn identical_points_share_a_cluster(points in point_cloud(), k in 1usize..4, seed in any::<u64>()) {
            let mut pts = points.clone();
            pts.push(points[0].clone());
            let fit = kmeans(&pts, k, seed).unwrap();
            prop_assert_eq!(fit.labels[0], *fit.labels.last().unwrap());
        }

        #[test]
        fn input_order_is_irrelevant(counts in prop::collection::vec((0u64..5, 0u64..5, 0u64..5), 4..10), seed in any::<u64>(), rot in 0usize..10) {
            let sp = space(&["a", "b"], &["e"]);
            let profiles: Vec<StudentProfile> = counts
                .iter()
                .enumerate()
                .map(|(i, (a, b, e))| profile(&format!("s{i:02}"), &[("a", *a), ("b", *b)], &[("e", *e)]))
                .collect();
            let mut rotated = profiles.clone();
            let len = rotated.len();
            rotated.rotate_left(rot % len);
            rotated.reverse();
            match (cluster_students(&profiles, &sp, 2, seed), cluster_students(&rotated, &sp, 2, seed)) {
                (Ok(x), Ok(y)) => prop_assert_eq!(x.assignments, y.assignments),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "only one ordering failed"),
            }
        }

        #[test]
        fn one_turn_moves_few_coordinates(intent in 0usize..3, ents in prop::collection::btree_set(0usize..2, 0..3)) {
            let sp = space(&["a", "b", "c"], &["x", "y"]);
            let mut p = profile("s", &[("a", 2), ("b", 1)], &[("x", 1)]);
            let before: Vec<f64> = {
                let mut v = sp.intents.iter().map(|n| p.intent_counts.get(n).copied().unwrap_or(0) as f64).collect::<Vec<_>>();
                v.extend(sp.entities.iter().map(|n| p.entity_counts.get(n).copied().unwrap_or(0) as f64));
                v
            };
            let ent_names: Vec<&str> = ents.iter().map(|&i| ["x", "y"][i]).collect();
            p.record_interaction(&turn(["a", "b", "c"][intent], &ent_names, false));
            let mut after = sp.intents.iter().map(|n| p.intent_counts.get(n).copied().unwrap_or(0) as f64).collect::<Vec<_>>();
            after.extend(sp.entities.iter().map(|n| p.entity_counts.get(n).copied().unwrap_or(0) as f64));
            let changed_intents = (0..3).filter(|&i| before[i] != after[i]).count();
            let changed_entities = (3..5).filter(|&i| before[i] != after[i]).count();
            prop_assert_eq!(changed_intents, 1);
            prop_assert_eq!(changed_entities, ents.len());
        }
    }
}
