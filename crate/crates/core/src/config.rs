//! Pipeline configuration: the stage list plus every per-stage setting.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asr_filters::AsrFilterConfig;
use crate::ast_filters::AstFilterConfig;
use crate::clients::{ServicesConfig, SERVICES_ENV};
use crate::pnc::PncConfig;
use crate::segmentation::SegmentationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Segment,
    Transcribe,
    LidFilter,
    AsrFilter,
    PncRestore,
    Translate,
    AstFilter,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Validate,
        Stage::Segment,
        Stage::Transcribe,
        Stage::LidFilter,
        Stage::AsrFilter,
        Stage::PncRestore,
        Stage::Translate,
        Stage::AstFilter,
        Stage::Stats,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Segment => "segment",
            Stage::Transcribe => "transcribe",
            Stage::LidFilter => "lid_filter",
            Stage::AsrFilter => "asr_filter",
            Stage::PncRestore => "pnc_restore",
            Stage::Translate => "translate",
            Stage::AstFilter => "ast_filter",
            Stage::Stats => "stats",
        }
    }

    /// Stages that talk to a model service.
    pub fn needs_services(self) -> bool {
        matches!(self, Stage::Transcribe | Stage::PncRestore | Stage::Translate)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `(a, b)`: when both are configured, `a` must run before `b`.
const PRECEDENCE: &[(Stage, Stage)] = &[
    (Stage::Segment, Stage::Transcribe),
    (Stage::Transcribe, Stage::LidFilter),
    (Stage::Transcribe, Stage::AsrFilter),
    (Stage::Transcribe, Stage::PncRestore),
    (Stage::Transcribe, Stage::Translate),
    (Stage::PncRestore, Stage::Translate),
    (Stage::Translate, Stage::AstFilter),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: Vec<Stage>,
    pub shard_count: usize,
    pub worker_count: usize,
    pub seed: u64,
    /// Capacity of each shard queue.
    pub queue_capacity: usize,
    /// Records admitted but not yet written; bounds the reorder buffer.
    pub max_in_flight_records: usize,
    /// Fraction of records that may fail with `service_error` before the run
    /// is reported as a service failure.
    pub max_error_rate: f64,
    pub target_lang: String,
    pub segmentation: SegmentationConfig,
    pub asr: AsrFilterConfig,
    pub pnc: PncConfig,
    pub ast: AstFilterConfig,
    pub services: ServicesConfig,
    /// Directory that relative data paths resolve against; the config file's
    /// directory when loaded from disk.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: Stage::ALL.to_vec(),
            shard_count: 1,
            worker_count: 1,
            seed: 0,
            queue_capacity: 256,
            max_in_flight_records: 4096,
            max_error_rate: 0.05,
            target_lang: "en".into(),
            segmentation: SegmentationConfig::default(),
            asr: AsrFilterConfig::default(),
            pnc: PncConfig::default(),
            ast: AstFilterConfig::default(),
            services: ServicesConfig::default(),
            base_dir: PathBuf::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("stage {later} must come after {earlier}")]
    StageOrder { earlier: Stage, later: Stage },
    #[error("stage {0} listed twice")]
    DuplicateStage(Stage),
    #[error("{0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn with_stages(stages: &[Stage]) -> Self {
        Self { stages: stages.to_vec(), ..Self::default() }
    }

    /// TOML by default; `.json` files are read as JSON.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let content = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&content)
        } else {
            Self::from_toml(&content)
        }
        .map_err(|message| ConfigError::Parse { path: shown, message })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(content: &str) -> Result<Self, String> {
        toml::from_str(content).map_err(|e| e.to_string())
    }

    pub fn from_json(content: &str) -> Result<Self, String> {
        serde_json::from_str(content).map_err(|e| e.to_string())
    }

    /// Apply `GRANARY_SERVICES` from the environment, if set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(v) = std::env::var(SERVICES_ENV) {
            self.services.apply_overrides(&v).map_err(ConfigError::Invalid)?;
        }
        Ok(())
    }

    pub fn has(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn workers_per_shard(&self) -> usize {
        self.worker_count.div_ceil(self.shard_count).max(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.stages.is_empty() {
            return invalid("stage list is empty".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if self.stages[..i].contains(s) {
                return Err(ConfigError::DuplicateStage(*s));
            }
        }
        let pos = |s: Stage| self.stages.iter().position(|&x| x == s);
        if let Some(p) = pos(Stage::Validate) {
            if p != 0 {
                return Err(ConfigError::StageOrder { earlier: Stage::Validate, later: self.stages[0] });
            }
        }
        if let Some(p) = pos(Stage::Stats) {
            if p + 1 != self.stages.len() {
                return Err(ConfigError::StageOrder { earlier: self.stages[p + 1], later: Stage::Stats });
            }
        }
        for &(a, b) in PRECEDENCE {
            if let (Some(pa), Some(pb)) = (pos(a), pos(b)) {
                if pa > pb {
                    return Err(ConfigError::StageOrder { earlier: a, later: b });
                }
            }
        }
        if self.shard_count == 0 {
            return invalid("shard_count must be at least 1".into());
        }
        if self.worker_count == 0 {
            return invalid("worker_count must be at least 1".into());
        }
        if self.queue_capacity == 0 || self.max_in_flight_records == 0 {
            return invalid("queue_capacity and max_in_flight_records must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.max_error_rate) {
            return invalid(format!("max_error_rate {} outside [0, 1]", self.max_error_rate));
        }
        if self.target_lang.is_empty() {
            return invalid("target_lang is empty".into());
        }
        self.segmentation.validate().map_err(ConfigError::Invalid)?;
        self.asr.validate().map_err(ConfigError::Invalid)?;
        self.ast.validate().map_err(ConfigError::Invalid)?;
        if !(0.0..=1.0).contains(&self.pnc.pnc_cer_threshold) {
            return invalid(format!("pnc_cer_threshold {} outside [0, 1]", self.pnc.pnc_cer_threshold));
        }
        self.services.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }
}
