//! Clients for the external model services (speech recognition with
//! language ID, translation, quality estimation, punctuation restoration).
//!
//! [`ModelBackend`] is the raw transport; [`Services`] wraps any backend and
//! enforces the request preconditions and response invariants, so pipeline
//! code never sees a malformed result whichever backend is plugged in.

mod http;
mod mock;
mod retry;
pub mod wire;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub use http::{HttpBackend, Semaphore};
pub use mock::{MockBackend, MockRates};
pub use retry::{with_retry, AttemptError, RetryPolicy};

/// A time window within the referenced audio, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscribedSegment {
    /// Seconds relative to the requested window start.
    #[serde(rename = "start")]
    pub start_s: f64,
    #[serde(rename = "end")]
    pub end_s: f64,
    pub text: String,
    pub lid: String,
    pub lid_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptionResult {
    pub segments: Vec<TranscribedSegment>,
    pub detected_lang: String,
    pub detected_lang_prob: f64,
}

impl TranscriptionResult {
    /// Sorted, non-overlapping segments inside `[0, window_len]` with
    /// probabilities in `[0, 1]`.
    pub fn check(&self, window_len: f64) -> Result<(), String> {
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if !in_unit(self.detected_lang_prob) {
            return Err(format!("detected_lang_prob {} outside [0,1]", self.detected_lang_prob));
        }
        let mut prev_end = 0.0;
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.start_s >= prev_end && s.end_s > s.start_s && s.end_s <= window_len) {
                return Err(format!(
                    "segment {i} [{}, {}] is unsorted, overlapping or outside [0, {window_len}]",
                    s.start_s, s.end_s
                ));
            }
            if !in_unit(s.lid_prob) {
                return Err(format!("segment {i} lid_prob {} outside [0,1]", s.lid_prob));
            }
            prev_end = s.end_s;
        }
        Ok(())
    }

    pub fn text(&self) -> String {
        let parts: Vec<&str> = self.segments.iter().map(|s| s.text.trim()).filter(|t| !t.is_empty()).collect();
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageGuess {
    pub lang: String,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QeScore {
    pub score: f64,
    /// The service answered outside `[0, 1]` and the value was clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("{service}: transport failure after {attempts} attempts: {message}")]
    Transport { service: String, attempts: u32, message: String },
    #[error("{service}: HTTP {status} after {attempts} attempts: {body}")]
    Http { service: String, status: u16, attempts: u32, body: String },
    #[error("{service}: undecodable response: {message}")]
    InvalidResponse { service: String, message: String },
    #[error("invalid_segments: {0}")]
    InvalidSegments(String),
    #[error("empty_translation")]
    EmptyTranslation,
    #[error("empty input text")]
    EmptyInput,
    #[error("source and target language are both {0:?}")]
    SameLanguage(String),
    #[error("mock: {0}")]
    Mock(String),
}

impl ClientError {
    pub fn attempts(&self) -> Option<u32> {
        match self {
            ClientError::Transport { attempts, .. } | ClientError::Http { attempts, .. } => Some(*attempts),
            _ => None,
        }
    }
}

/// Raw transport to the model services. Implementations may return anything
/// the remote side returns; [`Services`] validates it.
pub trait ModelBackend: Send + Sync {
    fn detect_language(&self, audio_ref: &str) -> Result<LanguageGuess, ClientError>;
    fn transcribe(&self, audio_ref: &str, lang_hint: &str, window: Window) -> Result<TranscriptionResult, ClientError>;
    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ClientError>;
    fn qe_score(&self, src_text: &str, tgt_text: &str, src: &str, tgt: &str) -> Result<f64, ClientError>;
    fn restore(&self, prompt: &str, lang: &str) -> Result<String, ClientError>;
}

/// Contract-enforcing facade over a backend. Cheap to clone.
#[derive(Clone)]
pub struct Services {
    backend: Arc<dyn ModelBackend>,
}

impl Services {
    pub fn new(backend: Arc<dyn ModelBackend>) -> Self {
        Self { backend }
    }

    pub fn detect_language(&self, audio_ref: &str) -> Result<LanguageGuess, ClientError> {
        let g = self.backend.detect_language(audio_ref)?;
        if g.lang.is_empty() || !(0.0..=1.0).contains(&g.prob) {
            return Err(ClientError::InvalidResponse {
                service: "asr".into(),
                message: format!("language guess {g:?}"),
            });
        }
        Ok(g)
    }

    pub fn transcribe(&self, audio_ref: &str, lang_hint: &str, window: Window) -> Result<TranscriptionResult, ClientError> {
        let r = self.backend.transcribe(audio_ref, lang_hint, window)?;
        r.check(window.len()).map_err(ClientError::InvalidSegments)?;
        Ok(r)
    }

    pub fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ClientError> {
        if text.trim().is_empty() {
            return Err(ClientError::EmptyInput);
        }
        if src == tgt {
            return Err(ClientError::SameLanguage(src.to_owned()));
        }
        let out = self.backend.translate(text, src, tgt)?;
        if out.trim().is_empty() {
            return Err(ClientError::EmptyTranslation);
        }
        Ok(out)
    }

    pub fn qe_score(&self, src_text: &str, tgt_text: &str, src: &str, tgt: &str) -> Result<QeScore, ClientError> {
        if src_text.trim().is_empty() || tgt_text.trim().is_empty() {
            return Err(ClientError::EmptyInput);
        }
        let raw = self.backend.qe_score(src_text, tgt_text, src, tgt)?;
        if raw.is_nan() {
            return Err(ClientError::InvalidResponse { service: "qe".into(), message: "NaN score".into() });
        }
        let score = raw.clamp(0.0, 1.0);
        if score != raw {
            log::warn!("qe score {raw} clamped to {score}");
        }
        Ok(QeScore { score, clamped: score != raw })
    }

    pub fn restore(&self, prompt: &str, lang: &str) -> Result<String, ClientError> {
        self.backend.restore(prompt, lang)
    }
}

/// Connection settings for one service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub base_url: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_base_s: f64,
    pub max_in_flight: usize,
    /// Forwarded to the backend untouched.
    pub decode_params: Map<String, Value>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            timeout_s: 120.0,
            max_retries: 2,
            backoff_base_s: 1.0,
            max_in_flight: 16,
            decode_params: Map::new(),
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self, name: &str) -> Result<(), String> {
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(format!("{name}.timeout_s must be positive"));
        }
        if !(self.backoff_base_s >= 0.0) {
            return Err(format!("{name}.backoff_base_s must be non-negative"));
        }
        if self.max_in_flight == 0 {
            return Err(format!("{name}.max_in_flight must be at least 1"));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy { max_retries: self.max_retries, backoff_base_s: self.backoff_base_s }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    /// In-process deterministic mocks.
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServicesConfig {
    pub backend: BackendKind,
    pub asr: ServiceConfig,
    pub translation: ServiceConfig,
    pub qe: ServiceConfig,
    pub restoration: ServiceConfig,
}

impl Default for ServicesConfig {
    fn default() -> Self {
        let asr = ServiceConfig {
            decode_params: as_map(json!({"beam_size": 5, "batch_size": 16})),
            ..ServiceConfig::default()
        };
        let translation =
            ServiceConfig { decode_params: as_map(json!({"strategy": "greedy"})), ..ServiceConfig::default() };
        let restoration = ServiceConfig { max_retries: 1, ..ServiceConfig::default() };
        Self { backend: BackendKind::Mock, asr, translation, qe: ServiceConfig::default(), restoration }
    }
}

fn as_map(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

pub const SERVICES_ENV: &str = "GRANARY_SERVICES";

impl ServicesConfig {
    /// Apply a `GRANARY_SERVICES` value: either one URL for every service or
    /// comma-separated `name=url` pairs with names asr, translation, qe,
    /// restoration.
    pub fn apply_overrides(&mut self, value: &str) -> Result<(), String> {
        let value = value.trim();
        if value.is_empty() {
            return Ok(());
        }
        if !value.contains('=') {
            for svc in [&mut self.asr, &mut self.translation, &mut self.qe, &mut self.restoration] {
                svc.base_url = value.to_owned();
            }
            return Ok(());
        }
        let mut seen = BTreeMap::new();
        for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, url) = part.split_once('=').ok_or_else(|| format!("bad override {part:?}"))?;
            seen.insert(name.trim().to_owned(), url.trim().to_owned());
        }
        for (name, url) in seen {
            let svc = match name.as_str() {
                "asr" => &mut self.asr,
                "translation" | "translate" => &mut self.translation,
                "qe" => &mut self.qe,
                "restoration" | "pnc" => &mut self.restoration,
                other => return Err(format!("unknown service {other:?} in {SERVICES_ENV}")),
            };
            svc.base_url = url;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.asr.validate("asr")?;
        self.translation.validate("translation")?;
        self.qe.validate("qe")?;
        self.restoration.validate("restoration")
    }

    pub fn connect(&self, seed: u64) -> Services {
        match self.backend {
            BackendKind::Http => Services::new(Arc::new(HttpBackend::new(self))),
            BackendKind::Mock => Services::new(Arc::new(MockBackend::new(seed))),
        }
    }
}
