//! Client for a scorer hosted behind a small JSON API:
//!
//! ```text
//! GET  {base}/capabilities  -> {"triple": bool, "levels": bool, "choice": bool}
//! POST {base}/score         {"item_id", "video_uri", "audio_uri"}
//!                           -> {"audio_quality", "consistency", "overall"}
//! POST {base}/level_logits  {"item_id", "video_uri", "audio_uri", "dimension"}
//!                           -> {"logits": {"excellent", "good", "fair", "poor", "bad"}}
//! POST {base}/choose        {"video_uri", "audio_uris": [...]}
//!                           -> {"selected_index"}
//! ```

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{BackendCapability, BackendError, Capability, ChoiceAnswer, ScoringBackend};
use crate::dataset::{AgavItem, ScoreTriple};
use crate::dimension::Dimension;
use crate::metrics::LevelLogits;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Upper bound on concurrent requests.
    pub max_in_flight: usize,
    /// First retry delay; doubles on each further attempt.
    pub backoff: Duration,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: super::default_timeout(),
            max_retries: 3,
            max_in_flight: 8,
            backoff: Duration::from_millis(200),
        }
    }

    fn validate(&self) -> Result<(), BackendError> {
        let uri: ureq::http::Uri = self
            .base_url
            .parse()
            .map_err(|e| BackendError::Config(format!("bad base URL `{}`: {e}", self.base_url)))?;
        if !matches!(uri.scheme_str(), Some("http" | "https")) || uri.authority().is_none() {
            return Err(BackendError::Config(format!(
                "base URL `{}` needs an http(s) scheme and a host",
                self.base_url
            )));
        }
        if self.timeout.is_zero() {
            return Err(BackendError::Config("timeout must be > 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(BackendError::Config("in-flight limit must be >= 1".into()));
        }
        Ok(())
    }
}

struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: Agent,
    caps: BackendCapability,
    limiter: Limiter,
    retries: AtomicU64,
    requests: AtomicU64,
}

#[derive(Serialize)]
struct ItemBody<'a> {
    item_id: &'a str,
    video_uri: &'a str,
    audio_uri: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    dimension: Option<&'a str>,
}

#[derive(Serialize)]
struct ChooseBody<'a> {
    video_uri: &'a str,
    audio_uris: Vec<&'a str>,
}

#[derive(Deserialize)]
struct LogitsBody {
    logits: LevelMap,
}

#[derive(Deserialize)]
struct LevelMap {
    excellent: f64,
    good: f64,
    fair: f64,
    poor: f64,
    bad: f64,
}

enum Attempt<T> {
    Done(Result<T, BackendError>),
    Retry(String),
}

impl HttpBackend {
    /// Validates the configuration and fetches the advertised capabilities.
    pub fn connect(config: HttpConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut backend = Self {
            limiter: Limiter::new(config.max_in_flight),
            config,
            agent,
            caps: BackendCapability::default(),
            retries: AtomicU64::new(0),
            requests: AtomicU64::new(0),
        };
        backend.caps = backend.request::<(), BackendCapability>("capabilities", None)?;
        if !backend.caps.any() {
            return Err(BackendError::ProtocolViolation(
                "remote advertises no capability".into(),
            ));
        }
        Ok(backend)
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    /// Retries performed over the backend's lifetime.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    /// Logical requests issued, not counting retries.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.base_url.trim_end_matches('/'))
    }

    fn request<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<R, BackendError> {
        let _permit = self.limiter.acquire();
        self.requests.fetch_add(1, Ordering::Relaxed);
        let url = self.url(path);
        let mut attempt: u32 = 0;
        loop {
            let outcome = match body {
                Some(b) => self.agent.post(&url).send_json(b),
                None => self.agent.get(&url).call(),
            };
            let step = match outcome {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        Attempt::Done(resp.body_mut().read_json::<R>().map_err(|e| {
                            BackendError::ProtocolViolation(format!("malformed response from /{path}: {e}"))
                        }))
                    } else if status >= 500 || status == 429 {
                        Attempt::Retry(format!("status {status} from /{path}"))
                    } else {
                        let message = resp.body_mut().read_to_string().unwrap_or_default();
                        Attempt::Done(Err(BackendError::Rejected { status, message }))
                    }
                }
                Err(ureq::Error::BadUri(e)) => Attempt::Done(Err(BackendError::Config(e))),
                Err(e) => Attempt::Retry(e.to_string()),
            };
            match step {
                Attempt::Done(result) => return result,
                Attempt::Retry(message) if attempt >= self.config.max_retries => {
                    return Err(BackendError::Transport {
                        message,
                        attempts: attempt + 1,
                    });
                }
                Attempt::Retry(_) => {
                    std::thread::sleep(self.config.backoff * 2u32.saturating_pow(attempt));
                    attempt += 1;
                    self.retries.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    }
}

impl ScoringBackend for HttpBackend {
    fn name(&self) -> String {
        format!("http:{}", self.config.base_url)
    }

    fn capabilities(&self) -> BackendCapability {
        self.caps
    }

    fn score(&self, item: &AgavItem) -> Result<ScoreTriple, BackendError> {
        self.require(Capability::TripleScores)?;
        let body = ItemBody {
            item_id: &item.id,
            video_uri: &item.video_uri,
            audio_uri: &item.audio_uri,
            dimension: None,
        };
        let triple: ScoreTriple = self.request("score", Some(&body))?;
        if [triple.audio_quality, triple.consistency, triple.overall]
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(BackendError::ProtocolViolation("non-finite score".into()));
        }
        Ok(triple)
    }

    fn level_logits(&self, item: &AgavItem, dimension: Dimension) -> Result<LevelLogits, BackendError> {
        self.require(Capability::LevelLogits)?;
        let body = ItemBody {
            item_id: &item.id,
            video_uri: &item.video_uri,
            audio_uri: &item.audio_uri,
            dimension: Some(dimension.as_str()),
        };
        let LogitsBody { logits: m } = self.request("level_logits", Some(&body))?;
        LevelLogits::new([m.excellent, m.good, m.fair, m.poor, m.bad])
            .map_err(|e| BackendError::ProtocolViolation(e.to_string()))
    }

    fn choose(&self, video_uri: &str, candidates: &[&AgavItem]) -> Result<ChoiceAnswer, BackendError> {
        self.require(Capability::MultiInputChoice)?;
        let body = ChooseBody {
            video_uri,
            audio_uris: candidates.iter().map(|c| c.audio_uri.as_str()).collect(),
        };
        let answer: ChoiceAnswer = self.request("choose", Some(&body))?;
        if answer.selected_index == 0 || answer.selected_index > candidates.len() {
            return Err(BackendError::ProtocolViolation(format!(
                "selected index {} outside 1..={}",
                answer.selected_index,
                candidates.len()
            )));
        }
        Ok(answer)
    }
}
