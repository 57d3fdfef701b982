use std::collections::HashSet;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{BackendCapability, BackendError, ChoiceAnswer, ScoringBackend};
use crate::dataset::{AgavItem, ScoreTriple};
use crate::dimension::{Dimension, PerDimension};
use crate::metrics::{LevelLogits, QualityLevel};
use crate::seed::rng_for;

/// Sharpness of the oracle level distribution around the target level.
const ORACLE_LEVEL_SHARPNESS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MockKind {
    /// Returns the ground-truth MOS triple.
    OracleTriple,
    /// Level logits peaked at the ground-truth MOS mapped onto [1, 5].
    OracleLevels,
    /// Picks the labelled best candidate.
    OracleChoice,
    /// Uniform scores in [0, 100), uniform level distribution, uniform choice.
    UniformRandom { seed: u64 },
    /// Always answers "Audio 1".
    FirstPosition,
    /// Negated ground truth; chooses the worst candidate.
    Adversarial,
    /// Ground truth plus independent gaussian noise per dimension.
    Noisy { sigma: f64, seed: u64 },
}

impl MockKind {
    pub fn name(&self) -> String {
        match self {
            MockKind::OracleTriple => "mock:oracle-triple".into(),
            MockKind::OracleLevels => "mock:oracle-levels".into(),
            MockKind::OracleChoice => "mock:oracle-choice".into(),
            MockKind::UniformRandom { seed } => format!("mock:uniform-random:{seed}"),
            MockKind::FirstPosition => "mock:first-position".into(),
            MockKind::Adversarial => "mock:adversarial".into(),
            MockKind::Noisy { sigma, seed } => format!("mock:noisy:{sigma}:{seed}"),
        }
    }
}

/// Deterministic backend whose outputs are pure functions of its seed and
/// the query.
#[derive(Debug, Clone)]
pub struct MockBackend {
    kind: MockKind,
    correct: Arc<HashSet<String>>,
}

impl MockBackend {
    pub fn new(kind: MockKind) -> Self {
        Self {
            kind,
            correct: Arc::default(),
        }
    }

    /// Ids of labelled best items, consulted by choice answers.
    pub fn with_correct_items(mut self, ids: HashSet<String>) -> Self {
        self.correct = Arc::new(ids);
        self
    }

    pub fn kind(&self) -> MockKind {
        self.kind
    }

    fn truth(item: &AgavItem) -> Result<ScoreTriple, BackendError> {
        item.ground_truth_triple()
            .ok_or_else(|| BackendError::MissingGroundTruth(item.id.clone()))
    }

    fn best_by_truth(candidates: &[&AgavItem], worst: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in candidates.iter().enumerate() {
            let v = c.ground_truth.as_ref()?.mos_overall;
            let better = match best {
                None => true,
                Some((_, b)) if worst => v < b,
                Some((_, b)) => v > b,
            };
            if better {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Logits `-k (q - v)^2` over level values v = 5 (excellent) .. 1 (bad), where
/// q maps a 0-100 score onto [1, 5]. The resulting expected level is strictly
/// increasing in the score.
pub(crate) fn peaked_logits(mos: f64) -> [f64; 5] {
    let q = (1.0 + 4.0 * mos / 100.0).clamp(1.0, 5.0);
    QualityLevel::ALL.map(|level| {
        let v = (6 - level.index()) as f64;
        -ORACLE_LEVEL_SHARPNESS * (q - v) * (q - v)
    })
}

impl ScoringBackend for MockBackend {
    fn name(&self) -> String {
        self.kind.name()
    }

    fn capabilities(&self) -> BackendCapability {
        let (t, l, c) = match self.kind {
            MockKind::OracleTriple => (true, false, false),
            MockKind::OracleLevels => (false, true, false),
            MockKind::OracleChoice => (false, false, true),
            MockKind::UniformRandom { .. } => (true, true, true),
            MockKind::FirstPosition => (false, false, true),
            MockKind::Adversarial => (true, false, true),
            MockKind::Noisy { .. } => (true, false, false),
        };
        BackendCapability {
            supports_triple_scores: t,
            supports_level_logits: l,
            supports_multi_input_choice: c,
        }
    }

    fn score(&self, item: &AgavItem) -> Result<ScoreTriple, BackendError> {
        match self.kind {
            MockKind::OracleTriple => Self::truth(item),
            MockKind::Adversarial => Ok(Self::truth(item)?.map(|v| -v)),
            MockKind::Noisy { sigma, seed } => {
                let truth = Self::truth(item)?;
                let normal = Normal::new(0.0, sigma).map_err(|e| BackendError::Config(e.to_string()))?;
                let mut rng = rng_for(seed, &["noisy", &item.id]);
                Ok(PerDimension::from_fn(|d| truth.get(d) + normal.sample(&mut rng)))
            }
            MockKind::UniformRandom { seed } => {
                let mut rng = rng_for(seed, &["score", &item.id]);
                Ok(PerDimension::from_fn(|_| rng.random_range(0.0..100.0)))
            }
            _ => Err(self.unsupported(super::Capability::TripleScores)),
        }
    }

    fn level_logits(&self, item: &AgavItem, dimension: Dimension) -> Result<LevelLogits, BackendError> {
        let logits = match self.kind {
            MockKind::OracleLevels => peaked_logits(*Self::truth(item)?.get(dimension)),
            MockKind::UniformRandom { .. } => [0.0; 5],
            _ => return Err(self.unsupported(super::Capability::LevelLogits)),
        };
        LevelLogits::new(logits).map_err(|e| BackendError::ProtocolViolation(e.to_string()))
    }

    fn choose(&self, video_uri: &str, candidates: &[&AgavItem]) -> Result<ChoiceAnswer, BackendError> {
        if candidates.is_empty() {
            return Err(BackendError::ProtocolViolation("no candidates".into()));
        }
        let index = match self.kind {
            MockKind::FirstPosition => 0,
            MockKind::OracleChoice => candidates
                .iter()
                .position(|c| self.correct.contains(&c.id))
                .or_else(|| Self::best_by_truth(candidates, false))
                .ok_or_else(|| BackendError::MissingGroundTruth(candidates[0].id.clone()))?,
            MockKind::Adversarial => Self::best_by_truth(candidates, true)
                .or_else(|| candidates.iter().position(|c| !self.correct.contains(&c.id)))
                .unwrap_or(0),
            MockKind::UniformRandom { seed } => {
                let mut labels = vec!["choose", video_uri];
                labels.extend(candidates.iter().map(|c| c.id.as_str()));
                rng_for(seed, &labels).random_range(0..candidates.len())
            }
            _ => return Err(self.unsupported(super::Capability::MultiInputChoice)),
        };
        Ok(ChoiceAnswer {
            selected_index: index + 1,
        })
    }
}
