//! Bitext filtration for synthetic speech-translation pairs: word-count
//! length ratio, character histograms, text language ID and a quality
//! estimation threshold.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::asr_filters::{Charset, CharsetError};
use crate::decision::{FilterDecision, FilterError, Flag};
use crate::manifest::UtteranceRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationPair {
    pub id: String,
    pub src_text: String,
    pub tgt_text: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub qe_score: Option<f64>,
    #[serde(default)]
    pub flags: BTreeSet<Flag>,
}

impl TranslationPair {
    /// The pair carried by a manifest record, if it has a translation.
    pub fn from_record(r: &UtteranceRecord) -> Option<Self> {
        let tgt_text = r.tgt_text.clone()?;
        Some(Self {
            id: r.id.clone(),
            src_text: r.src_text.clone().unwrap_or_else(|| r.best_text().to_owned()),
            tgt_text,
            src_lang: r.src_lang.clone().unwrap_or_else(|| r.lang_target.clone()),
            tgt_lang: r.tgt_lang.clone().unwrap_or_else(|| "en".into()),
            qe_score: r.qe_score,
            flags: r.flags.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TextLidConfig {
    /// Pick the language whose character histogram best covers the text.
    Histogram,
    /// Lookup table file: `text<TAB>lang<TAB>prob` per line.
    Table { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AstFilterConfig {
    pub max_len_ratio: f64,
    pub min_words: usize,
    pub max_words: usize,
    pub histogram_threshold: f64,
    /// Directory of `<lang>.hist` files.
    pub histogram_dir: Option<PathBuf>,
    pub lid_min_prob: f64,
    /// Check the source side with text LID too, not only the translation.
    pub lid_check_source: bool,
    pub text_lid: TextLidConfig,
    /// Backend-specific; tune per QE model.
    pub qe_threshold: f64,
}

impl Default for AstFilterConfig {
    fn default() -> Self {
        Self {
            max_len_ratio: 9.0,
            min_words: 1,
            max_words: 250,
            histogram_threshold: 0.8,
            histogram_dir: None,
            lid_min_prob: 0.5,
            lid_check_source: false,
            text_lid: TextLidConfig::Histogram,
            qe_threshold: 0.5,
        }
    }
}

impl AstFilterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.max_len_ratio.is_finite() && self.max_len_ratio > 0.0) {
            return Err("max_len_ratio must be positive".into());
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(format!("word bounds [{}, {}] invalid", self.min_words, self.max_words));
        }
        for (name, v) in [
            ("histogram_threshold", self.histogram_threshold),
            ("lid_min_prob", self.lid_min_prob),
            ("qe_threshold", self.qe_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} {v} outside [0,1]"));
            }
        }
        Ok(())
    }
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Both sides have `min_words..=max_words` words and the longer side is at
/// most `max_len_ratio` times the shorter.
pub fn length_ratio_ok(pair: &TranslationPair, cfg: &AstFilterConfig) -> bool {
    let (a, b) = (word_count(&pair.src_text), word_count(&pair.tgt_text));
    let in_bounds = |n: usize| (cfg.min_words..=cfg.max_words).contains(&n);
    if !in_bounds(a) || !in_bounds(b) {
        return false;
    }
    a.max(b) as f64 / a.min(b) as f64 <= cfg.max_len_ratio
}

/// Frequent-character sets per language.
#[derive(Debug, Clone, Default)]
pub struct HistogramSet {
    by_lang: HashMap<String, Charset>,
}

impl HistogramSet {
    pub fn insert(&mut self, lang: impl Into<String>, chars: Charset) {
        self.by_lang.insert(lang.into(), chars);
    }

    pub fn get(&self, lang: &str) -> Option<&Charset> {
        self.by_lang.get(lang)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Charset)> {
        self.by_lang.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn load_dir(dir: &Path) -> Result<Self, CharsetError> {
        let io = |source| CharsetError::Io { path: dir.display().to_string(), source };
        let mut set = Self::default();
        for entry in fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("hist") {
                continue;
            }
            let Some(lang) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            set.insert(lang.to_owned(), Charset::load(&path)?);
        }
        Ok(set)
    }
}

/// Fraction of non-whitespace characters that belong to the language's
/// histogram. Empty text scores 1.0.
pub fn char_histogram_score(text: &str, lang: &str, histograms: &HistogramSet) -> Result<f64, FilterError> {
    let hist = histograms.get(lang).ok_or_else(|| FilterError::NoHistogram(lang.to_owned()))?;
    Ok(histogram_fraction(text, hist))
}

fn histogram_fraction(text: &str, hist: &Charset) -> f64 {
    let (mut total, mut hits) = (0usize, 0usize);
    for c in text.chars().filter(|c| !c.is_whitespace()) {
        total += 1;
        hits += usize::from(hist.contains(c));
    }
    if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    }
}

/// Text language identification.
pub trait TextLanguageClassifier: Send + Sync {
    /// Top label and its probability.
    fn classify(&self, text: &str) -> Result<(String, f64), FilterError>;
}

/// Fixed answers per text with an optional fallback.
#[derive(Debug, Clone, Default)]
pub struct TableClassifier {
    table: HashMap<String, (String, f64)>,
    pub fallback: Option<(String, f64)>,
}

impl TableClassifier {
    pub fn with(mut self, text: &str, lang: &str, prob: f64) -> Self {
        self.table.insert(text.to_owned(), (lang.to_owned(), prob));
        self
    }

    /// `text<TAB>lang<TAB>prob` per line; a `*` text sets the fallback.
    pub fn parse(content: &str) -> Result<Self, String> {
        let mut t = Self::default();
        for (i, line) in content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut parts = line.split('\t');
            let (Some(text), Some(lang), Some(prob), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(format!("line {}: expected text<TAB>lang<TAB>prob", i + 1));
            };
            let prob: f64 = prob.trim().parse().map_err(|e| format!("line {}: {e}", i + 1))?;
            let label = (lang.trim().to_owned(), prob);
            if text == "*" {
                t.fallback = Some(label);
            } else {
                t.table.insert(text.to_owned(), label);
            }
        }
        Ok(t)
    }
}

impl TextLanguageClassifier for TableClassifier {
    fn classify(&self, text: &str) -> Result<(String, f64), FilterError> {
        self.table
            .get(text)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| FilterError::Classifier(format!("no label for {text:?}")))
    }
}

/// Picks the language whose histogram covers the largest share of the
/// text; ties go to the smaller (more specific) histogram, then the code.
#[derive(Debug, Clone)]
pub struct HistogramClassifier {
    langs: Vec<(String, Charset, usize)>,
}

impl HistogramClassifier {
    pub fn new(histograms: &HistogramSet) -> Self {
        let mut langs: Vec<_> = histograms.iter().map(|(l, c)| (l.to_owned(), c.clone(), c.len())).collect();
        langs.sort_by(|a, b| a.2.cmp(&b.2).then_with(|| a.0.cmp(&b.0)));
        Self { langs }
    }
}

impl TextLanguageClassifier for HistogramClassifier {
    fn classify(&self, text: &str) -> Result<(String, f64), FilterError> {
        let mut best: Option<(&str, f64)> = None;
        for (lang, hist, _) in &self.langs {
            let s = histogram_fraction(text, hist);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((lang, s));
            }
        }
        best.map(|(l, s)| (l.to_owned(), s))
            .ok_or_else(|| FilterError::Classifier("no histograms loaded".into()))
    }
}

pub fn lid_text_check(
    text: &str,
    expected_lang: &str,
    classifier: &dyn TextLanguageClassifier,
    cfg: &AstFilterConfig,
) -> Result<bool, FilterError> {
    let (lang, prob) = classifier.classify(text)?;
    Ok(lang == expected_lang && prob >= cfg.lid_min_prob)
}

/// Inclusive threshold on the quality-estimation score.
pub fn qe_filter(pair: &TranslationPair, cfg: &AstFilterConfig) -> Result<bool, FilterError> {
    let score = pair.qe_score.ok_or_else(|| FilterError::QeMissing(pair.id.clone()))?;
    Ok(score >= cfg.qe_threshold)
}

/// Loaded bitext filters, shared read-only across workers.
#[derive(Clone)]
pub struct AstFilters {
    pub cfg: AstFilterConfig,
    pub histograms: HistogramSet,
    pub classifier: Arc<dyn TextLanguageClassifier>,
}

#[derive(Debug, thiserror::Error)]
pub enum AstLoadError {
    #[error(transparent)]
    Histogram(#[from] CharsetError),
    #[error("text LID table {path}: {message}")]
    Table { path: String, message: String },
}

impl AstFilters {
    pub fn new(cfg: AstFilterConfig, histograms: HistogramSet, classifier: Arc<dyn TextLanguageClassifier>) -> Self {
        Self { cfg, histograms, classifier }
    }

    pub fn load(cfg: AstFilterConfig, base: &Path) -> Result<Self, AstLoadError> {
        let histograms = match &cfg.histogram_dir {
            Some(dir) => HistogramSet::load_dir(&base.join(dir))?,
            None => HistogramSet::default(),
        };
        let classifier: Arc<dyn TextLanguageClassifier> = match &cfg.text_lid {
            TextLidConfig::Histogram => Arc::new(HistogramClassifier::new(&histograms)),
            TextLidConfig::Table { path } => {
                let path = base.join(path);
                let err = |message: String| AstLoadError::Table { path: path.display().to_string(), message };
                let content = fs::read_to_string(&path).map_err(|e| err(e.to_string()))?;
                Arc::new(TableClassifier::parse(&content).map_err(err)?)
            }
        };
        Ok(Self { cfg, histograms, classifier })
    }

    /// Runs length ratio, histogram, LID and QE checks in that order, all of
    /// them, and flags each failure.
    pub fn filter_pair(&self, pair: &TranslationPair) -> Result<FilterDecision, FilterError> {
        let cfg = &self.cfg;
        let mut flags = BTreeSet::new();
        let mut causes = Vec::new();

        if !length_ratio_ok(pair, cfg) {
            flags.insert(Flag::AstLenRatio);
            causes.push(format!(
                "word counts {} / {}",
                word_count(&pair.src_text),
                word_count(&pair.tgt_text)
            ));
        }
        let src_hist = char_histogram_score(&pair.src_text, &pair.src_lang, &self.histograms)?;
        let tgt_hist = char_histogram_score(&pair.tgt_text, &pair.tgt_lang, &self.histograms)?;
        if src_hist < cfg.histogram_threshold || tgt_hist < cfg.histogram_threshold {
            flags.insert(Flag::AstHistogram);
            causes.push(format!("histogram scores {src_hist:.3} / {tgt_hist:.3}"));
        }
        let mut lid_ok = lid_text_check(&pair.tgt_text, &pair.tgt_lang, self.classifier.as_ref(), cfg)?;
        if cfg.lid_check_source {
            lid_ok &= lid_text_check(&pair.src_text, &pair.src_lang, self.classifier.as_ref(), cfg)?;
        }
        if !lid_ok {
            flags.insert(Flag::AstLid);
        }
        if !qe_filter(pair, cfg)? {
            flags.insert(Flag::AstQe);
        }
        let mut d = FilterDecision::from_flags(&pair.id, flags);
        d.causes = causes;
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(src: &str, tgt: &str, qe: f64) -> TranslationPair {
        TranslationPair {
            id: "p".into(),
            src_text: src.into(),
            tgt_text: tgt.into(),
            src_lang: "fr".into(),
            tgt_lang: "en".into(),
            qe_score: Some(qe),
            flags: BTreeSet::new(),
        }
    }

    fn words(n: usize) -> String {
        vec!["mot"; n].join(" ")
    }

    #[test]
    fn length_ratio_examples() {
        let cfg = AstFilterConfig::default();
        assert!(!length_ratio_ok(&pair(&words(10), &words(95), 0.9), &cfg));
        assert!(length_ratio_ok(&pair(&words(10), &words(90), 0.9), &cfg));
        assert!(length_ratio_ok(&pair(&words(7), &words(7), 0.9), &cfg));
        assert!(!length_ratio_ok(&pair(&words(7), "", 0.9), &cfg));
        assert!(!length_ratio_ok(&pair(&words(251), &words(251), 0.9), &cfg));
    }

    fn hist() -> HistogramSet {
        let mut h = HistogramSet::default();
        h.insert("fr", "abcdefghijklmnopqrstuvwxyzéèàç".chars().collect());
        h.insert("en", "abcdefghijklmnopqrstuvwxyz".chars().collect());
        h.insert("de", "abcdefghijklmnopqrstuvwxyzäöüß".chars().collect());
        h
    }

    #[test]
    fn histogram_examples() {
        let mut h = HistogramSet::default();
        h.insert("xx", "abc".chars().collect());
        assert_eq!(char_histogram_score("abc", "xx", &h).unwrap(), 1.0);
        assert_eq!(char_histogram_score("", "xx", &h).unwrap(), 1.0);
        assert_eq!(char_histogram_score("a b\u{4E2D}d", "xx", &h).unwrap(), 0.5);
        assert!(char_histogram_score("abc", "yy", &h).is_err());
    }

    #[test]
    fn lid_examples() {
        let cfg = AstFilterConfig::default();
        let t = TableClassifier::default()
            .with("hello world", "en", 0.99)
            .with("guten tag", "de", 0.9)
            .with("hmm", "en", 0.4);
        assert!(lid_text_check("hello world", "en", &t, &cfg).unwrap());
        assert!(!lid_text_check("guten tag", "fr", &t, &cfg).unwrap());
        assert!(!lid_text_check("hmm", "en", &t, &cfg).unwrap());
        assert!(lid_text_check("unknown", "en", &t, &cfg).is_err());
    }

    #[test]
    fn histogram_classifier_prefers_specific_sets() {
        let c = HistogramClassifier::new(&hist());
        assert_eq!(c.classify("hello world").unwrap(), ("en".into(), 1.0));
        assert_eq!(c.classify("straße über").unwrap().0, "de");
        assert_eq!(c.classify("café crème").unwrap().0, "fr");
    }

    #[test]
    fn qe_examples() {
        let cfg = AstFilterConfig::default();
        assert!(qe_filter(&pair("a", "b", 0.9), &cfg).unwrap());
        assert!(qe_filter(&pair("a", "b", 0.5), &cfg).unwrap());
        assert!(!qe_filter(&pair("a", "b", 0.1), &cfg).unwrap());
        let mut p = pair("a", "b", 0.1);
        p.qe_score = None;
        assert_eq!(qe_filter(&p, &cfg), Err(FilterError::QeMissing("p".into())));
    }

    fn filters() -> AstFilters {
        let t = TableClassifier { fallback: Some(("en".into(), 0.9)), ..Default::default() }.with("xyz ßßß", "de", 0.8);
        AstFilters::new(AstFilterConfig::default(), hist(), Arc::new(t))
    }

    #[test]
    fn filter_pair_examples() {
        let f = filters();
        assert!(f.filter_pair(&pair("bonjour le monde", "hello world", 0.9)).unwrap().is_pass());

        let d = f.filter_pair(&pair("bonjour le monde", "hëllö wörld", 0.2)).unwrap();
        assert_eq!(d.flags, BTreeSet::from([Flag::AstHistogram, Flag::AstQe]));

        let d = f.filter_pair(&pair("bonjour le monde", "", 0.9)).unwrap();
        assert!(d.flags.contains(&Flag::AstLenRatio));
        assert!(d.is_drop());

        let d = f.filter_pair(&pair("bonjour", "xyz ßßß", 0.9)).unwrap();
        assert!(d.flags.contains(&Flag::AstLid));
    }

    #[test]
    fn pair_from_record() {
        let mut r = UtteranceRecord::new("r", "a", 0.0, 1.0, "fr").with_text("bonjour");
        assert!(TranslationPair::from_record(&r).is_none());
        r.text_restored = Some("Bonjour.".into());
        r.tgt_text = Some("Hello.".into());
        r.qe_score = Some(0.7);
        let p = TranslationPair::from_record(&r).unwrap();
        assert_eq!(p.src_text, "Bonjour.");
        assert_eq!((p.src_lang.as_str(), p.tgt_lang.as_str()), ("fr", "en"));
    }

    #[test]
    fn table_file_parsing() {
        let t = TableClassifier::parse("hello\ten\t0.9\n\nhallo\tde\t0.8\n").unwrap();
        assert_eq!(t.classify("hallo").unwrap(), ("de".into(), 0.8));
        assert!(TableClassifier::parse("a\tb").is_err());
        assert!(t.classify("other").is_err());
        let t = TableClassifier::parse("*\ten\t0.6\n").unwrap();
        assert_eq!(t.classify("anything").unwrap(), ("en".into(), 0.6));
    }
}
