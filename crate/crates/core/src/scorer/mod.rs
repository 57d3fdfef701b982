//! The scoring-backend contract that stands in for a trained quality model,
//! deterministic mock backends, and a client for remotely hosted scorers.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AgavItem, ScoreTriple};
use crate::dimension::Dimension;
use crate::metrics::LevelLogits;

mod http;
mod mock;

pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, MockKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Capability {
    TripleScores,
    LevelLogits,
    MultiInputChoice,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::TripleScores => "triple scores",
            Capability::LevelLogits => "level logits",
            Capability::MultiInputChoice => "multi-input choice",
        })
    }
}

/// What a backend can answer. Serialises with the wire names
/// `triple`, `levels`, `choice`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BackendCapability {
    #[serde(rename = "triple")]
    pub supports_triple_scores: bool,
    #[serde(rename = "levels")]
    pub supports_level_logits: bool,
    #[serde(rename = "choice")]
    pub supports_multi_input_choice: bool,
}

impl BackendCapability {
    pub fn supports(&self, cap: Capability) -> bool {
        match cap {
            Capability::TripleScores => self.supports_triple_scores,
            Capability::LevelLogits => self.supports_level_logits,
            Capability::MultiInputChoice => self.supports_multi_input_choice,
        }
    }

    pub fn any(&self) -> bool {
        self.supports_triple_scores || self.supports_level_logits || self.supports_multi_input_choice
    }
}

/// 1-based position of the chosen audio in the presented order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceAnswer {
    pub selected_index: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend `{backend}` does not support {capability}")]
    Unsupported { backend: String, capability: Capability },
    #[error("media for `{item_id}` is unavailable: {reason}")]
    MediaUnavailable { item_id: String, reason: String },
    #[error("item `{0}` carries no ground truth")]
    MissingGroundTruth(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("remote rejected request with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_protocol_violation(&self) -> bool {
        matches!(self, BackendError::ProtocolViolation(_))
    }
}

/// A quality scorer. Implementations must be shareable across worker
/// threads. Operations a backend does not advertise return
/// [`BackendError::Unsupported`].
pub trait ScoringBackend: Send + Sync {
    fn name(&self) -> String;

    fn capabilities(&self) -> BackendCapability;

    fn score(&self, item: &AgavItem) -> Result<ScoreTriple, BackendError> {
        let _ = item;
        Err(self.unsupported(Capability::TripleScores))
    }

    fn level_logits(&self, item: &AgavItem, dimension: Dimension) -> Result<LevelLogits, BackendError> {
        let _ = (item, dimension);
        Err(self.unsupported(Capability::LevelLogits))
    }

    /// Picks the candidate audio that best matches the video.
    fn choose(&self, video_uri: &str, candidates: &[&AgavItem]) -> Result<ChoiceAnswer, BackendError> {
        let _ = (video_uri, candidates);
        Err(self.unsupported(Capability::MultiInputChoice))
    }

    fn unsupported(&self, capability: Capability) -> BackendError {
        BackendError::Unsupported {
            backend: self.name(),
            capability,
        }
    }

    fn require(&self, capability: Capability) -> Result<(), BackendError> {
        if self.capabilities().supports(capability) {
            Ok(())
        } else {
            Err(self.unsupported(capability))
        }
    }
}

impl<T: ScoringBackend + ?Sized> ScoringBackend for Arc<T> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn capabilities(&self) -> BackendCapability {
        (**self).capabilities()
    }
    fn score(&self, item: &AgavItem) -> Result<ScoreTriple, BackendError> {
        (**self).score(item)
    }
    fn level_logits(&self, item: &AgavItem, dimension: Dimension) -> Result<LevelLogits, BackendError> {
        (**self).level_logits(item, dimension)
    }
    fn choose(&self, video_uri: &str, candidates: &[&AgavItem]) -> Result<ChoiceAnswer, BackendError> {
        (**self).choose(video_uri, candidates)
    }
}

/// A parsed `--backend` value.
///
/// Accepted forms: `mock:oracle-triple`, `mock:oracle-levels`,
/// `mock:oracle-choice`, `mock:uniform-random[:SEED]`, `mock:first-position`,
/// `mock:adversarial`, `mock:noisy:SIGMA[:SEED]`, `http` (base URL supplied
/// separately) or an `http://` / `https://` base URL.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    Mock(MockKind),
    Http { base_url: Option<String> },
}

impl BackendSpec {
    /// `default_seed` fills in mock seeds that the spec leaves out.
    pub fn parse(spec: &str, default_seed: u64) -> Result<Self, BackendError> {
        if spec == "http" {
            return Ok(BackendSpec::Http { base_url: None });
        }
        if spec.starts_with("http://") || spec.starts_with("https://") {
            return Ok(BackendSpec::Http {
                base_url: Some(spec.to_string()),
            });
        }
        let rest = spec
            .strip_prefix("mock:")
            .ok_or_else(|| BackendError::Config(format!("unknown backend `{spec}`")))?;
        let parts: Vec<&str> = rest.split(':').collect();
        let num = |s: &str| -> Result<f64, BackendError> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| BackendError::Config(format!("bad number `{s}` in `{spec}`")))
        };
        let seed = |s: Option<&&str>| -> Result<u64, BackendError> {
            match s {
                None => Ok(default_seed),
                Some(s) => s
                    .parse()
                    .map_err(|_| BackendError::Config(format!("bad seed `{s}` in `{spec}`"))),
            }
        };
        let kind = match parts.as_slice() {
            ["oracle-triple"] => MockKind::OracleTriple,
            ["oracle-levels"] => MockKind::OracleLevels,
            ["oracle-choice"] => MockKind::OracleChoice,
            ["first-position"] => MockKind::FirstPosition,
            ["adversarial"] => MockKind::Adversarial,
            ["uniform-random", tail @ ..] if tail.len() <= 1 => MockKind::UniformRandom {
                seed: seed(tail.first())?,
            },
            ["noisy", sigma, tail @ ..] if tail.len() <= 1 => MockKind::Noisy {
                sigma: num(sigma)?,
                seed: seed(tail.first())?,
            },
            _ => return Err(BackendError::Config(format!("unknown mock backend `{spec}`"))),
        };
        Ok(BackendSpec::Mock(kind))
    }

    /// Instantiates the backend. Oracle choice and adversarial mocks use
    /// `correct_items` to know which candidate is the labelled best; HTTP
    /// specs without a URL take `http.base_url`.
    pub fn build(
        self,
        correct_items: HashSet<String>,
        http: Option<HttpConfig>,
    ) -> Result<Arc<dyn ScoringBackend>, BackendError> {
        match self {
            BackendSpec::Mock(kind) => Ok(Arc::new(MockBackend::new(kind).with_correct_items(correct_items))),
            BackendSpec::Http { base_url } => {
                let mut cfg = http.unwrap_or_else(|| HttpConfig::new(String::new()));
                if let Some(url) = base_url {
                    cfg.base_url = url;
                }
                Ok(Arc::new(HttpBackend::connect(cfg)?))
            }
        }
    }
}

pub(crate) fn default_timeout() -> Duration {
    Duration::from_secs(30)
}
