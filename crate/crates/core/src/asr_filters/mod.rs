//! Transcript-level filters: language-ID verification, the three
//! hallucination flags, character rate and character set.

mod charset;
mod ngram;
mod phrases;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use charset::{charset_check, Charset, CharsetError, OffendingChar};
pub use ngram::{has_long_word, has_repeated_ngram, RepetitionRule};
pub use phrases::{detect_hallucinated_phrases, fold_case, parse_phrase_list, PhraseIndex, PhraseLibrary};

use crate::decision::{FilterDecision, FilterError, Flag};
use crate::manifest::UtteranceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBounds {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsrFilterConfig {
    pub min_lid_prob: f64,
    /// Inclusive range of n for the n-gram repetition check.
    pub ngram_n_range: (usize, usize),
    pub ngram_min_consecutive_repeats: usize,
    pub unigram_min_consecutive_repeats: usize,
    pub max_word_chars: usize,
    pub char_rate_default: RateBounds,
    /// Keyed by `<lang>` or `<corpus>/<lang>`; the corpus-specific key wins.
    pub char_rate_bounds: BTreeMap<String, RateBounds>,
    /// Directory of `<lang>.txt` phrase lists.
    pub phrase_dir: Option<PathBuf>,
    /// Explicit per-language lists; override files found in `phrase_dir`.
    pub phrase_lists: BTreeMap<String, PathBuf>,
    pub phrase_lists_optional: bool,
    /// Allowed character file. Without one the charset check is skipped.
    pub charset: Option<PathBuf>,
}

impl Default for AsrFilterConfig {
    fn default() -> Self {
        Self {
            min_lid_prob: 0.8,
            ngram_n_range: (2, 5),
            ngram_min_consecutive_repeats: 4,
            unigram_min_consecutive_repeats: 5,
            max_word_chars: 40,
            char_rate_default: RateBounds { min: 1.0, max: 30.0 },
            char_rate_bounds: BTreeMap::new(),
            phrase_dir: None,
            phrase_lists: BTreeMap::new(),
            phrase_lists_optional: false,
            charset: None,
        }
    }
}

impl AsrFilterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.min_lid_prob) {
            return Err(format!("min_lid_prob {} outside [0,1]", self.min_lid_prob));
        }
        let (lo, hi) = self.ngram_n_range;
        if !(1 <= lo && lo <= hi && hi <= 10) {
            return Err(format!("ngram_n_range ({lo}, {hi}) must lie within 1..=10"));
        }
        if self.ngram_min_consecutive_repeats < 2 || self.unigram_min_consecutive_repeats < 2 {
            return Err("repeat thresholds must be at least 2".into());
        }
        for (key, b) in std::iter::once(("default", &self.char_rate_default))
            .chain(self.char_rate_bounds.iter().map(|(k, v)| (k.as_str(), v)))
        {
            if !(b.min >= 0.0 && b.min < b.max) {
                return Err(format!("char rate bounds for {key}: min {} must be below max {}", b.min, b.max));
            }
        }
        Ok(())
    }

    pub fn repetition_rule(&self) -> RepetitionRule {
        RepetitionRule {
            n_min: self.ngram_n_range.0,
            n_max: self.ngram_n_range.1,
            min_repeats: self.ngram_min_consecutive_repeats,
            unigram_min_repeats: self.unigram_min_consecutive_repeats,
        }
    }

    pub fn rate_bounds(&self, corpus: &str, lang: &str) -> RateBounds {
        self.char_rate_bounds
            .get(&format!("{corpus}/{lang}"))
            .or_else(|| self.char_rate_bounds.get(lang))
            .copied()
            .unwrap_or(self.char_rate_default)
    }
}

pub fn detect_repeated_ngrams(text: &str, cfg: &AsrFilterConfig) -> bool {
    has_repeated_ngram(text, &cfg.repetition_rule())
}

pub fn detect_long_words(text: &str, cfg: &AsrFilterConfig) -> bool {
    has_long_word(text, cfg.max_word_chars)
}

/// Unicode scalar values per second of audio.
pub fn char_rate(text: &str, duration_s: f64) -> Result<f64, FilterError> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(FilterError::NonPositiveDuration(duration_s));
    }
    Ok(text.chars().count() as f64 / duration_s)
}

/// Drop on language mismatch, low LID confidence, or more than one
/// language across the per-segment predictions.
pub fn lid_filter(r: &UtteranceRecord, cfg: &AsrFilterConfig) -> Result<FilterDecision, FilterError> {
    let (Some(pred), Some(prob)) = (r.lid_pred.as_deref(), r.lid_prob) else {
        return Err(FilterError::LidMissing(r.id.clone()));
    };
    let mut flags = BTreeSet::new();
    let mut causes = Vec::new();
    if pred != r.lang_target {
        flags.insert(Flag::LidMismatch);
        causes.push(format!("predicted {pred}, expected {}", r.lang_target));
    }
    if prob < cfg.min_lid_prob {
        flags.insert(Flag::LidLowConf);
        causes.push(format!("lid_prob {prob} < {}", cfg.min_lid_prob));
    }
    if let Some(lids) = &r.segment_lids {
        let distinct: BTreeSet<&str> = lids.iter().map(String::as_str).collect();
        if distinct.len() > 1 {
            flags.insert(Flag::LidMulti);
            causes.push(format!("segment languages {distinct:?}"));
        }
    }
    let mut d = FilterDecision::from_flags(&r.id, flags);
    d.causes = causes;
    Ok(d)
}

/// Loaded filter resources. Immutable once built and shareable across workers.
#[derive(Debug, Clone)]
pub struct AsrFilters {
    pub cfg: AsrFilterConfig,
    pub phrases: PhraseLibrary,
    pub charset: Option<Charset>,
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("phrase list {path}: {source}")]
    Phrases { path: String, source: std::io::Error },
    #[error(transparent)]
    Charset(#[from] CharsetError),
}

impl AsrFilters {
    pub fn new(cfg: AsrFilterConfig, phrases: PhraseLibrary, charset: Option<Charset>) -> Self {
        Self { cfg, phrases, charset }
    }

    /// Load phrase lists and the charset; relative paths resolve against `base`.
    pub fn load(cfg: AsrFilterConfig, base: &Path) -> Result<Self, LoadError> {
        let mut phrases = match &cfg.phrase_dir {
            Some(dir) => {
                let dir = base.join(dir);
                PhraseLibrary::load_dir(&dir, cfg.phrase_lists_optional)
                    .map_err(|source| LoadError::Phrases { path: dir.display().to_string(), source })?
            }
            None => PhraseLibrary::new(cfg.phrase_lists_optional),
        };
        for (lang, path) in &cfg.phrase_lists {
            let path = base.join(path);
            phrases
                .load_file(lang, &path)
                .map_err(|source| LoadError::Phrases { path: path.display().to_string(), source })?;
        }
        let charset = cfg.charset.as_ref().map(|p| Charset::load(&base.join(p))).transpose()?;
        Ok(Self { cfg, phrases, charset })
    }

    /// Hallucination, character-rate and charset checks on `r.text`. Every
    /// check runs so the flag set is complete.
    pub fn filter_text(&self, r: &UtteranceRecord) -> Result<FilterDecision, FilterError> {
        let text = r.text.as_str();
        let mut flags = BTreeSet::new();
        let mut causes = Vec::new();

        if detect_repeated_ngrams(text, &self.cfg) {
            flags.insert(Flag::HallucNgram);
        }
        if detect_long_words(text, &self.cfg) {
            flags.insert(Flag::HallucLongword);
        }
        if detect_hallucinated_phrases(text, &r.lang_target, &self.phrases)? {
            flags.insert(Flag::HallucPhrase);
        }
        let rate = char_rate(text, r.duration_s)?;
        let bounds = self.cfg.rate_bounds(&r.corpus, &r.lang_target);
        if rate < bounds.min {
            flags.insert(Flag::CharRateLow);
            causes.push(format!("{rate:.3} chars/s < {}", bounds.min));
        } else if rate > bounds.max {
            flags.insert(Flag::CharRateHigh);
            causes.push(format!("{rate:.3} chars/s > {}", bounds.max));
        }
        if let Some(set) = &self.charset {
            if let Some(bad) = charset_check(text, set) {
                flags.insert(Flag::Charset);
                causes.push(format!("invalid character {:?} at {}", bad.ch, bad.index));
            }
        }
        let mut d = FilterDecision::from_flags(&r.id, flags);
        d.causes = causes;
        Ok(d)
    }

    /// LID verification plus every text filter.
    pub fn filter_record(&self, r: &UtteranceRecord) -> Result<FilterDecision, FilterError> {
        let lid = lid_filter(r, &self.cfg)?;
        Ok(lid.merge(self.filter_text(r)?))
    }
}
