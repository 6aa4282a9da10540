//! Blocking HTTP/JSON backend.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use super::retry::{with_retry, AttemptError};
use super::wire::*;
use super::{ClientError, LanguageGuess, ModelBackend, ServiceConfig, ServicesConfig, TranscriptionResult, Window};

/// Counting semaphore capping in-flight requests per service.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits), cv: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.cv.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

const BODY_EXCERPT: usize = 200;

struct Endpoint {
    name: &'static str,
    agent: ureq::Agent,
    cfg: ServiceConfig,
    in_flight: Semaphore,
}

impl Endpoint {
    fn new(name: &'static str, cfg: &ServiceConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s)))
            .http_status_as_error(false)
            .max_idle_connections_per_host(cfg.max_in_flight)
            .build()
            .into();
        Self { name, agent, cfg: cfg.clone(), in_flight: Semaphore::new(cfg.max_in_flight) }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.cfg.base_url.trim_end_matches('/'))
    }

    /// POST `body` and decode the reply. Transport errors and 5xx replies are
    /// retried; 4xx replies are not.
    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, ClientError> {
        let url = self.url(path);
        let _permit = self.in_flight.acquire();
        let (res, attempts) = with_retry(&self.cfg.retry_policy(), std::thread::sleep, |_| {
            let mut resp = match self.agent.post(&url).send_json(body) {
                Ok(r) => r,
                Err(e) => return Err(AttemptError::Retryable(Failure::Transport(e.to_string()))),
            };
            let status = resp.status().as_u16();
            if status != 200 {
                let mut text = resp.body_mut().read_to_string().unwrap_or_default();
                truncate_chars(&mut text, BODY_EXCERPT);
                let f = Failure::Status(status, text);
                return Err(if status >= 500 { AttemptError::Retryable(f) } else { AttemptError::Fatal(f) });
            }
            match resp.body_mut().read_to_string() {
                Ok(s) => Ok(s),
                Err(e) => Err(AttemptError::Retryable(Failure::Transport(e.to_string()))),
            }
        });
        let service = self.name.to_owned();
        match res {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| ClientError::InvalidResponse { service, message: e.to_string() }),
            Err(Failure::Transport(message)) => Err(ClientError::Transport { service, attempts, message }),
            Err(Failure::Status(status, body)) => Err(ClientError::Http { service, status, attempts, body }),
        }
    }

    fn decode_params(&self) -> Map<String, Value> {
        self.cfg.decode_params.clone()
    }
}

enum Failure {
    Transport(String),
    Status(u16, String),
}

fn truncate_chars(s: &mut String, max: usize) {
    if let Some((idx, _)) = s.char_indices().nth(max) {
        s.truncate(idx);
    }
}

/// Talks to the four services over plain HTTP with JSON bodies.
pub struct HttpBackend {
    asr: Endpoint,
    translation: Endpoint,
    qe: Endpoint,
    restoration: Endpoint,
}

impl HttpBackend {
    pub fn new(cfg: &ServicesConfig) -> Self {
        Self {
            asr: Endpoint::new("asr", &cfg.asr),
            translation: Endpoint::new("translation", &cfg.translation),
            qe: Endpoint::new("qe", &cfg.qe),
            restoration: Endpoint::new("restoration", &cfg.restoration),
        }
    }
}

impl ModelBackend for HttpBackend {
    fn detect_language(&self, audio_ref: &str) -> Result<LanguageGuess, ClientError> {
        let r: DetectLanguageResponse =
            self.asr.post(DETECT_LANGUAGE, &DetectLanguageRequest { audio_ref: audio_ref.to_owned() })?;
        Ok(LanguageGuess { lang: r.lang, prob: r.prob })
    }

    fn transcribe(&self, audio_ref: &str, lang_hint: &str, window: Window) -> Result<TranscriptionResult, ClientError> {
        let req = TranscribeRequest {
            audio_ref: audio_ref.to_owned(),
            lang_hint: lang_hint.to_owned(),
            start: window.start,
            end: window.end,
            decode_params: self.asr.decode_params(),
        };
        self.asr.post(TRANSCRIBE, &req)
    }

    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ClientError> {
        let req = TranslateRequest {
            text: text.to_owned(),
            src: src.to_owned(),
            tgt: tgt.to_owned(),
            decode_params: self.translation.decode_params(),
        };
        let r: TextResponse = self.translation.post(TRANSLATE, &req)?;
        Ok(r.text)
    }

    fn qe_score(&self, src_text: &str, tgt_text: &str, src: &str, tgt: &str) -> Result<f64, ClientError> {
        let req = QeRequest {
            src_text: src_text.to_owned(),
            tgt_text: tgt_text.to_owned(),
            src: src.to_owned(),
            tgt: tgt.to_owned(),
        };
        let r: QeResponse = self.qe.post(QE_SCORE, &req)?;
        Ok(r.score)
    }

    fn restore(&self, prompt: &str, lang: &str) -> Result<String, ClientError> {
        let req = RestoreRequest {
            prompt: prompt.to_owned(),
            lang: lang.to_owned(),
            decode_params: self.restoration.decode_params(),
        };
        let r: TextResponse = self.restoration.post(RESTORE_PNC, &req)?;
        Ok(r.text)
    }
}
