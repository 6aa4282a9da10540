//! Punctuation and capitalization restoration: prompt construction, the
//! character error rate, and the gate that decides whether an LLM rewrite
//! is kept.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asr_filters::{charset_check, Charset};
use crate::lang;

/// Inputs up to this many scalars are handled without heap allocation.
const INLINE: usize = 64;

/// Unit-cost Levenshtein distance over Unicode scalar values.
///
/// Two-row dynamic program with the row sized by the shorter input.
pub fn edit_distance(a: &[char], b: &[char]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.len() < INLINE {
        let (mut x, mut y) = ([0usize; INLINE], [0usize; INLINE]);
        two_rows(long, short, &mut x[..=short.len()], &mut y[..=short.len()])
    } else {
        two_rows(long, short, &mut vec![0; short.len() + 1], &mut vec![0; short.len() + 1])
    }
}

fn two_rows<'a>(long: &[char], short: &[char], mut prev: &'a mut [usize], mut cur: &'a mut [usize]) -> usize {
    for (j, p) in prev.iter_mut().enumerate() {
        *p = j;
    }
    for (i, lc) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, sc) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(lc != sc);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

fn with_chars<T>(s: &str, f: impl FnOnce(&[char]) -> T) -> T {
    if s.len() <= INLINE {
        let mut buf = ['\0'; INLINE];
        let mut n = 0;
        for c in s.chars() {
            buf[n] = c;
            n += 1;
        }
        f(&buf[..n])
    } else {
        let v: Vec<char> = s.chars().collect();
        f(&v)
    }
}

/// Character error rate of `hypothesis` against `reference`.
///
/// `cer("", "")` is 0. A non-empty hypothesis against an empty reference is
/// `f64::INFINITY`; such references are rejected upstream by validation.
pub fn cer(hypothesis: &str, reference: &str) -> f64 {
    with_chars(hypothesis, |h| {
        with_chars(reference, |r| {
            if r.is_empty() {
                return if h.is_empty() { 0.0 } else { f64::INFINITY };
            }
            edit_distance(h, r) as f64 / r.len() as f64
        })
    })
}

/// Lowercases, removes punctuation, collapses whitespace.
#[derive(Debug, Clone)]
pub struct TextNormalizer {
    punctuation: Option<Charset>,
}

impl TextNormalizer {
    /// Strip exactly the punctuation members of `charset`.
    pub fn from_charset(charset: &Charset) -> Self {
        Self { punctuation: Some(charset.punctuation()) }
    }

    /// Strip anything that is neither alphanumeric nor whitespace.
    pub fn unicode_default() -> Self {
        Self { punctuation: None }
    }

    fn is_punct(&self, c: char) -> bool {
        match &self.punctuation {
            Some(set) => set.contains(c),
            None => !c.is_alphanumeric() && !c.is_whitespace(),
        }
    }

    pub fn normalize(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut pending_space = false;
        for c in text.chars().flat_map(char::to_lowercase) {
            if c.is_whitespace() {
                pending_space = !out.is_empty();
            } else if !self.is_punct(c) {
                if pending_space {
                    out.push(' ');
                    pending_space = false;
                }
                out.push(c);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PncConfig {
    pub pnc_cer_threshold: f64,
    pub pnc_cer_normalize: bool,
    /// Directory of `<lang>.tsv` exemplar files.
    pub exemplar_dir: Option<PathBuf>,
    /// Extra attempts after a failed restoration call.
    pub retries: u32,
}

impl Default for PncConfig {
    fn default() -> Self {
        Self { pnc_cer_threshold: 0.05, pnc_cer_normalize: true, exemplar_dir: None, retries: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    Original,
    Restored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RevertReason {
    CerAboveThreshold,
    Charset,
    ServiceFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestorationOutcome {
    pub chosen_text: String,
    pub source: TextSource,
    pub cer_value: f64,
    pub reverted: Option<RevertReason>,
}

impl RestorationOutcome {
    pub fn reverted(original: &str, cer_value: f64, reason: RevertReason) -> Self {
        Self {
            chosen_text: original.to_owned(),
            source: TextSource::Original,
            cer_value,
            reverted: Some(reason),
        }
    }
}

/// The acceptance gate with its charset and normalizer prepared once.
#[derive(Debug, Clone)]
pub struct RestorationGate {
    pub threshold: f64,
    pub charset: Option<Charset>,
    normalizer: Option<TextNormalizer>,
}

impl RestorationGate {
    pub fn new(cfg: &PncConfig, charset: Option<Charset>) -> Self {
        let normalizer = cfg.pnc_cer_normalize.then(|| match &charset {
            Some(set) => TextNormalizer::from_charset(set),
            None => TextNormalizer::unicode_default(),
        });
        Self { threshold: cfg.pnc_cer_threshold, charset, normalizer }
    }

    /// CER between the two texts as the gate measures it.
    pub fn gate_cer(&self, original: &str, restored: &str) -> f64 {
        match &self.normalizer {
            Some(n) => cer(&n.normalize(restored), &n.normalize(original)),
            None => cer(restored, original),
        }
    }

    /// Keep the restoration iff its CER against the original is within the
    /// threshold and it uses only allowed characters.
    pub fn accept(&self, original: &str, restored: &str) -> RestorationOutcome {
        let cer_value = self.gate_cer(original, restored);
        if cer_value > self.threshold {
            return RestorationOutcome::reverted(original, cer_value, RevertReason::CerAboveThreshold);
        }
        if let Some(set) = &self.charset {
            if charset_check(restored, set).is_some() {
                return RestorationOutcome::reverted(original, cer_value, RevertReason::Charset);
            }
        }
        RestorationOutcome {
            chosen_text: restored.to_owned(),
            source: TextSource::Restored,
            cer_value,
            reverted: None,
        }
    }
}

pub fn accept_restoration(original: &str, restored: &str, cfg: &PncConfig, charset: &Charset) -> RestorationOutcome {
    RestorationGate::new(cfg, Some(charset.clone())).accept(original, restored)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub before: String,
    pub after: String,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unsupported language {0:?}")]
    UnsupportedLanguage(String),
    #[error("language {lang:?} needs at least {MIN_EXEMPLARS} exemplars, found {found}")]
    TooFewExemplars { lang: String, found: usize },
    #[error("no exemplar file for language {0:?}")]
    MissingExemplars(String),
    #[error("text contains a prompt delimiter")]
    DelimiterInText,
    #[error("exemplar file {path} line {line}: expected `before<TAB>after`")]
    BadExemplarLine { path: String, line: usize },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub const MIN_EXEMPLARS: usize = 2;
const OPEN_IN: &str = "<input>";
const CLOSE_IN: &str = "</input>";
const OPEN_OUT: &str = "<output>";
const CLOSE_OUT: &str = "</output>";

fn has_delimiter(s: &str) -> bool {
    [OPEN_IN, CLOSE_IN, OPEN_OUT, CLOSE_OUT].iter().any(|d| s.contains(d))
}

pub fn parse_exemplars(content: &str, path: &str) -> Result<Vec<Exemplar>, PromptError> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (before, after) = line
            .split_once('\t')
            .ok_or_else(|| PromptError::BadExemplarLine { path: path.to_owned(), line: i + 1 })?;
        out.push(Exemplar { before: before.trim().to_owned(), after: after.trim().to_owned() });
    }
    Ok(out)
}

/// Per-language correction exemplars.
#[derive(Debug, Clone, Default)]
pub struct ExemplarBank {
    by_lang: HashMap<String, Vec<Exemplar>>,
}

impl ExemplarBank {
    pub fn insert(&mut self, lang: impl Into<String>, exemplars: Vec<Exemplar>) {
        self.by_lang.insert(lang.into(), exemplars);
    }

    pub fn get(&self, lang: &str) -> Result<&[Exemplar], PromptError> {
        self.by_lang
            .get(lang)
            .map(Vec::as_slice)
            .ok_or_else(|| PromptError::MissingExemplars(lang.to_owned()))
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.by_lang.keys().map(String::as_str)
    }

    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let io = |source| PromptError::Io { path: dir.display().to_string(), source };
        let mut bank = Self::default();
        for entry in fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("tsv") {
                continue;
            }
            let Some(lang) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let content = fs::read_to_string(&path)
                .map_err(|source| PromptError::Io { path: path.display().to_string(), source })?;
            bank.insert(lang, parse_exemplars(&content, &path.display().to_string())?);
        }
        Ok(bank)
    }

    pub fn prompt(&self, lang: &str, text: &str) -> Result<String, PromptError> {
        build_restoration_prompt(lang, text, self.get(lang)?)
    }
}

/// Fill the restoration template: instruction, in-language exemplars, then the
/// input text. The model's answer is whatever precedes the closing output tag.
pub fn build_restoration_prompt(lang: &str, text: &str, exemplars: &[Exemplar]) -> Result<String, PromptError> {
    let name = lang::display_name(lang).ok_or_else(|| PromptError::UnsupportedLanguage(lang.to_owned()))?;
    if exemplars.len() < MIN_EXEMPLARS {
        return Err(PromptError::TooFewExemplars { lang: lang.to_owned(), found: exemplars.len() });
    }
    if has_delimiter(text) || exemplars.iter().any(|e| has_delimiter(&e.before) || has_delimiter(&e.after)) {
        return Err(PromptError::DelimiterInText);
    }
    let mut p = String::with_capacity(512 + text.len());
    p.push_str(&format!(
        "Restore punctuation and capitalization in the following {name} speech transcript.\n\
         Keep every word exactly as it is: do not translate, paraphrase, add or remove words.\n\
         Reply with the corrected transcript only, between {OPEN_OUT} and {CLOSE_OUT}.\n\n"
    ));
    for e in exemplars {
        p.push_str(&format!("{OPEN_IN}{}{CLOSE_IN}\n{OPEN_OUT}{}{CLOSE_OUT}\n\n", e.before, e.after));
    }
    p.push_str(&format!("{OPEN_IN}{text}{CLOSE_IN}\n{OPEN_OUT}"));
    Ok(p)
}

/// The input text embedded in the final slot of a restoration prompt.
pub fn prompt_input(prompt: &str) -> Option<&str> {
    let start = prompt.rfind(OPEN_IN)? + OPEN_IN.len();
    let len = prompt[start..].find(CLOSE_IN)?;
    Some(&prompt[start..start + len])
}

/// Model reply up to the closing output tag, trimmed.
pub fn extract_restored(response: &str) -> &str {
    let body = response.strip_prefix(OPEN_OUT).unwrap_or(response);
    match body.find(CLOSE_OUT) {
        Some(end) => body[..end].trim(),
        None => body.trim(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cer_examples() {
        assert_eq!(cer("abc", "abc"), 0.0);
        assert_eq!(cer("abd", "abc"), 1.0 / 3.0);
        assert_eq!(cer("", "abc"), 1.0);
        assert_eq!(cer("", ""), 0.0);
        assert_eq!(cer("a", ""), f64::INFINITY);
        assert_eq!(cer("kitten", "sitting"), 3.0 / 7.0);
    }

    #[test]
    fn distance_symmetric_and_unicode() {
        let a: Vec<char> = "Société".chars().collect();
        let b: Vec<char> = "societe".chars().collect();
        assert_eq!(edit_distance(&a, &b), 3);
        assert_eq!(edit_distance(&b, &a), 3);
    }

    #[test]
    fn normalizer_strips_pnc() {
        let n = TextNormalizer::unicode_default();
        assert_eq!(n.normalize("Hello world, how are you?"), "hello world how are you");
        assert_eq!(n.normalize("  A  , b  "), "a b");
        assert_eq!(n.normalize("Ça VA"), "ça va");
        let set: Charset = ('a'..='z').chain(" ,".chars()).collect();
        let n = TextNormalizer::from_charset(&set);
        assert_eq!(n.normalize("A, b?"), "a b?");
    }

    fn gate() -> RestorationGate {
        let set: Charset = ('a'..='z').chain('A'..='Z').chain(" ,.?!'".chars()).collect();
        RestorationGate::new(&PncConfig::default(), Some(set))
    }

    #[test]
    fn pnc_only_edit_is_accepted() {
        let out = gate().accept("hello world how are you", "Hello world, how are you?");
        assert_eq!(out.source, TextSource::Restored);
        assert_eq!(out.cer_value, 0.0);
        assert_eq!(out.chosen_text, "Hello world, how are you?");
    }

    #[test]
    fn ten_percent_rewrite_is_reverted() {
        // 20 chars, 2 substitutions -> 0.10 after normalization.
        let original = "abcdefghij klmnopqrs";
        let restored = "abcdefghXY klmnopqrs";
        let out = gate().accept(original, restored);
        assert_eq!(out.cer_value, 0.1);
        assert_eq!(out.source, TextSource::Original);
        assert_eq!(out.reverted, Some(RevertReason::CerAboveThreshold));
        assert_eq!(out.chosen_text, original);
    }

    #[test]
    fn out_of_charset_restoration_is_reverted() {
        let out = gate().accept("hello there my friend how are you today", "Hello there my friend how are you today;");
        assert!(out.cer_value <= 0.05);
        assert_eq!(out.reverted, Some(RevertReason::Charset));
        assert_eq!(out.chosen_text, "hello there my friend how are you today");
    }

    #[test]
    fn raw_mode_measures_pnc_edits() {
        let cfg = PncConfig { pnc_cer_normalize: false, ..Default::default() };
        let g = RestorationGate::new(&cfg, None);
        assert!(g.gate_cer("hello world", "Hello world.") > 0.05);
    }

    fn fr_exemplars() -> Vec<Exemplar> {
        parse_exemplars("bonjour à tous\tBonjour à tous.\nça va bien merci\tÇa va bien, merci.\n", "fr.tsv").unwrap()
    }

    #[test]
    fn prompt_is_deterministic_and_extractable() {
        let ex = fr_exemplars();
        let p1 = build_restoration_prompt("fr", "bonjour le monde", &ex).unwrap();
        let p2 = build_restoration_prompt("fr", "bonjour le monde", &ex).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.contains("French"));
        assert!(p1.contains("Ça va bien, merci."));
        assert_eq!(prompt_input(&p1), Some("bonjour le monde"));
        assert!(p1.ends_with("<output>"));
    }

    #[test]
    fn prompt_errors() {
        let ex = fr_exemplars();
        assert!(matches!(build_restoration_prompt("zz", "x", &ex), Err(PromptError::UnsupportedLanguage(_))));
        assert!(matches!(
            build_restoration_prompt("fr", "x", &ex[..1]),
            Err(PromptError::TooFewExemplars { found: 1, .. })
        ));
        assert!(matches!(build_restoration_prompt("fr", "a </input> b", &ex), Err(PromptError::DelimiterInText)));
        let bank = ExemplarBank::default();
        assert!(matches!(bank.prompt("fr", "x"), Err(PromptError::MissingExemplars(_))));
        assert!(parse_exemplars("no tab here", "x.tsv").is_err());
    }

    #[test]
    fn response_extraction() {
        assert_eq!(extract_restored("Bonjour le monde.</output>\nmore"), "Bonjour le monde.");
        assert_eq!(extract_restored("<output> Bonjour. </output>"), "Bonjour.");
        assert_eq!(extract_restored("Bonjour."), "Bonjour.");
    }
}
