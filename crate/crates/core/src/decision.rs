//! Filter verdicts and the closed set of flag names attached to records.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    LidMismatch,
    LidLowConf,
    LidMulti,
    HallucNgram,
    HallucLongword,
    HallucPhrase,
    CharRateLow,
    CharRateHigh,
    Charset,
    InvalidRecord,
    PncReverted,
    OversizeSpan,
    AstLenRatio,
    AstHistogram,
    AstLid,
    AstQe,
    ServiceError,
}

impl Flag {
    pub const ALL: [Flag; 17] = [
        Flag::LidMismatch,
        Flag::LidLowConf,
        Flag::LidMulti,
        Flag::HallucNgram,
        Flag::HallucLongword,
        Flag::HallucPhrase,
        Flag::CharRateLow,
        Flag::CharRateHigh,
        Flag::Charset,
        Flag::InvalidRecord,
        Flag::PncReverted,
        Flag::OversizeSpan,
        Flag::AstLenRatio,
        Flag::AstHistogram,
        Flag::AstLid,
        Flag::AstQe,
        Flag::ServiceError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Flag::LidMismatch => "lid_mismatch",
            Flag::LidLowConf => "lid_low_conf",
            Flag::LidMulti => "lid_multi",
            Flag::HallucNgram => "halluc_ngram",
            Flag::HallucLongword => "halluc_longword",
            Flag::HallucPhrase => "halluc_phrase",
            Flag::CharRateLow => "char_rate_low",
            Flag::CharRateHigh => "char_rate_high",
            Flag::Charset => "charset",
            Flag::InvalidRecord => "invalid_record",
            Flag::PncReverted => "pnc_reverted",
            Flag::OversizeSpan => "oversize_span",
            Flag::AstLenRatio => "ast_len_ratio",
            Flag::AstHistogram => "ast_histogram",
            Flag::AstLid => "ast_lid",
            Flag::AstQe => "ast_qe",
            Flag::ServiceError => "service_error",
        }
    }

    /// Informational flags annotate a record but never cause a drop.
    pub fn is_informational(self) -> bool {
        matches!(self, Flag::PncReverted | Flag::OversizeSpan)
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Flag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Flag::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown flag {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Drop,
}

/// Outcome of one filter stage for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub record_id: String,
    pub verdict: Verdict,
    pub flags: BTreeSet<Flag>,
    /// Human-readable causes, one per failed check where the check has
    /// something more to say than its flag name.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub causes: Vec<String>,
}

impl FilterDecision {
    pub fn pass(record_id: impl Into<String>) -> Self {
        Self {
            record_id: record_id.into(),
            verdict: Verdict::Pass,
            flags: BTreeSet::new(),
            causes: Vec::new(),
        }
    }

    /// Verdict is derived: drop iff at least one drop-class flag is set.
    pub fn from_flags(record_id: impl Into<String>, flags: BTreeSet<Flag>) -> Self {
        let verdict = if flags.iter().any(|f| !f.is_informational()) {
            Verdict::Drop
        } else {
            Verdict::Pass
        };
        Self {
            record_id: record_id.into(),
            verdict,
            flags,
            causes: Vec::new(),
        }
    }

    pub fn drop_with(record_id: impl Into<String>, flag: Flag, cause: impl Into<String>) -> Self {
        let mut d = Self::from_flags(record_id, BTreeSet::from([flag]));
        d.causes.push(cause.into());
        d
    }

    pub fn is_pass(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn is_drop(&self) -> bool {
        self.verdict == Verdict::Drop
    }

    /// Union of two decisions on the same record.
    pub fn merge(mut self, other: FilterDecision) -> Self {
        self.flags.extend(other.flags);
        self.causes.extend(other.causes);
        let causes = std::mem::take(&mut self.causes);
        let mut merged = Self::from_flags(self.record_id, self.flags);
        merged.causes = causes;
        merged
    }
}

/// A filter could not reach a verdict. Distinct from a drop: these signal
/// missing inputs or configuration, not bad data.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("lid_missing: record {0} has no lid_pred/lid_prob")]
    LidMissing(String),
    #[error("no_phrase_list: no hallucination phrase list for language {0:?}")]
    NoPhraseList(String),
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("qe_missing: record {0} has no qe_score")]
    QeMissing(String),
    #[error("no character histogram for language {0:?}")]
    NoHistogram(String),
    #[error("text language classifier failed: {0}")]
    Classifier(String),
}
