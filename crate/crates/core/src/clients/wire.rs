//! JSON bodies of the model-service HTTP endpoints.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const DETECT_LANGUAGE: &str = "/v1/detect_language";
pub const TRANSCRIBE: &str = "/v1/transcribe";
pub const TRANSLATE: &str = "/v1/translate";
pub const QE_SCORE: &str = "/v1/qe_score";
pub const RESTORE_PNC: &str = "/v1/restore_pnc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectLanguageRequest {
    pub audio_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectLanguageResponse {
    pub lang: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscribeRequest {
    pub audio_ref: String,
    pub lang_hint: String,
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub decode_params: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateRequest {
    pub text: String,
    pub src: String,
    pub tgt: String,
    #[serde(default)]
    pub decode_params: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QeRequest {
    pub src_text: String,
    pub tgt_text: String,
    pub src: String,
    pub tgt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QeResponse {
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestoreRequest {
    pub prompt: String,
    pub lang: String,
    #[serde(default)]
    pub decode_params: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}
