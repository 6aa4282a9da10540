//! Deterministic in-process stand-ins for the model services.
//!
//! Every answer is a pure function of the request and the seed. Lookup
//! tables take precedence; anything not in a table is synthesized, with a
//! configurable fraction of planted defects (language switches, repeated
//! n-grams, boilerplate phrases, runaway translations and so on) so that the
//! downstream filters have something to catch.

use std::collections::{HashMap, HashSet};

use super::{ClientError, LanguageGuess, ModelBackend, TranscribedSegment, TranscriptionResult, Window};
use crate::lang::{self, LANGUAGES};
use crate::pnc::prompt_input;

/// Fractions of synthesized answers that carry each planted defect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockRates {
    pub lid_mismatch: f64,
    pub lid_low_conf: f64,
    pub segment_lid_switch: f64,
    pub ngram_halluc: f64,
    pub longword_halluc: f64,
    pub phrase_halluc: f64,
    pub translation_verbose: f64,
    pub translation_wrong_lang: f64,
    pub qe_low: f64,
    pub pnc_rewrite: f64,
}

impl Default for MockRates {
    fn default() -> Self {
        Self {
            lid_mismatch: 0.04,
            lid_low_conf: 0.04,
            segment_lid_switch: 0.03,
            ngram_halluc: 0.03,
            longword_halluc: 0.02,
            phrase_halluc: 0.02,
            translation_verbose: 0.03,
            translation_wrong_lang: 0.03,
            qe_low: 0.04,
            pnc_rewrite: 0.1,
        }
    }
}

impl MockRates {
    /// No planted defects at all.
    pub fn clean() -> Self {
        Self {
            lid_mismatch: 0.0,
            lid_low_conf: 0.0,
            segment_lid_switch: 0.0,
            ngram_halluc: 0.0,
            longword_halluc: 0.0,
            phrase_halluc: 0.0,
            translation_verbose: 0.0,
            translation_wrong_lang: 0.0,
            qe_low: 0.0,
            pnc_rewrite: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub seed: u64,
    pub rates: MockRates,
    pub qe_high: f64,
    pub qe_low: f64,
    lid_table: HashMap<String, LanguageGuess>,
    transcript_table: HashMap<String, TranscriptionResult>,
    translation_table: HashMap<(String, String, String), String>,
    qe_table: HashMap<(String, String), f64>,
    restoration_table: HashMap<String, String>,
    failing_refs: HashSet<String>,
}

const SYNTH_PHRASE: &str = "thank you very much";
const WORDS_PER_SECOND: f64 = 2.5;

const ENGLISH: [&str; 48] = [
    "the", "people", "council", "report", "time", "work", "year", "water", "city", "market", "country", "today",
    "question", "answer", "house", "school", "child", "family", "music", "energy", "story", "program", "river",
    "road", "policy", "member", "debate", "future", "health", "money", "night", "morning", "friend", "voice",
    "world", "change", "language", "village", "garden", "window", "paper", "table", "light", "number", "system",
    "problem", "idea", "project",
];

const GERMAN: [&str; 12] = [
    "über", "schön", "größer", "mädchen", "straße", "fröhlich", "müssen", "häuser", "können", "grüße", "zurück",
    "während",
];

fn fnv(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for part in parts {
        for b in part.iter().copied().chain(std::iter::once(0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    splitmix(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// A small stream of draws derived from one hash.
struct Draws(u64);

impl Draws {
    fn next(&mut self) -> u64 {
        self.0 = splitmix(self.0);
        self.0
    }

    fn unit(&mut self) -> f64 {
        unit(self.next())
    }

    fn below(&mut self, n: usize) -> usize {
        (self.next() % n as u64) as usize
    }
}

/// Consonants, vowels and a few language-specific letters.
fn alphabet(lang: &str) -> (&'static str, &'static str, &'static str) {
    match lang {
        "el" => ("βγδζθκλμνξπρστφχ", "αεηιουω", "άέήίόύώ"),
        "bg" => ("бвгдзклмнпрстфхцчш", "аеиоу", "ъюя"),
        "ru" => ("бвгдзклмнпрстфхцчш", "аеиоу", "ыэюя"),
        "uk" => ("бвгдзклмнпрстфхцчш", "аеиоу", "іїєґ"),
        "fr" => ("bcdfglmnprstv", "aeiou", "éèàç"),
        "de" => ("bcdfghklmnrstwz", "aeiou", "äöüß"),
        "es" => ("bcdfglmnprstv", "aeiou", "ñáéó"),
        "pt" => ("bcdfglmnprstv", "aeiou", "ãçõé"),
        "it" => ("bcdfglmnprstv", "aeiou", "àèù"),
        "pl" => ("bcdgklmnprstwz", "aeiouy", "ąęłśż"),
        "cs" => ("bcdhklmnprstvz", "aeiouy", "čřšžě"),
        "sk" => ("bcdhklmnprstvz", "aeiouy", "čšžľô"),
        "sl" | "hr" => ("bcdgklmnprstvz", "aeiou", "čšž"),
        "hu" => ("bdfghklmnrstvz", "aeiou", "őűáé"),
        "ro" => ("bcdfglmnprstv", "aeiou", "ăâîșț"),
        "lt" => ("bdgjklmnprstvz", "aeiou", "ąėįųū"),
        "lv" => ("bdgjklmnprstvz", "aeiou", "āēīūš"),
        "et" | "fi" => ("hjklmnprstv", "aeiouy", "äö"),
        "sv" | "da" => ("bdfghjklmnprstv", "aeiouy", "åäø"),
        "mt" => ("bdfgħjklmnprstż", "aeiou", "ċġ"),
        _ => ("bcdfghklmnprstvw", "aeiou", ""),
    }
}

fn synth_word(lang: &str, draws: &mut Draws) -> String {
    let (cons, vows, extra) = alphabet(lang);
    let cons: Vec<char> = cons.chars().collect();
    let vows: Vec<char> = vows.chars().collect();
    let extra: Vec<char> = extra.chars().collect();
    let syllables = 1 + draws.below(3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(cons[draws.below(cons.len())]);
        if !extra.is_empty() && draws.below(6) == 0 {
            w.push(extra[draws.below(extra.len())]);
        } else {
            w.push(vows[draws.below(vows.len())]);
        }
    }
    w
}

fn capitalize_sentence(words: &[&str]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.chars().next() {
        let upper: String = first.to_uppercase().collect();
        s.replace_range(..first.len_utf8(), &upper);
    }
    if !s.ends_with(['.', '?', '!']) {
        s.push('.');
    }
    s
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed, rates: MockRates::default(), qe_high: 0.9, qe_low: 0.1, ..Default::default() }
    }

    pub fn with_rates(mut self, rates: MockRates) -> Self {
        self.rates = rates;
        self
    }

    pub fn with_lid(mut self, audio_ref: impl Into<String>, lang: impl Into<String>, prob: f64) -> Self {
        self.lid_table.insert(audio_ref.into(), LanguageGuess { lang: lang.into(), prob });
        self
    }

    pub fn with_transcript(mut self, audio_ref: impl Into<String>, result: TranscriptionResult) -> Self {
        self.transcript_table.insert(audio_ref.into(), result);
        self
    }

    pub fn with_translation(mut self, text: &str, src: &str, tgt: &str, out: impl Into<String>) -> Self {
        self.translation_table.insert((text.into(), src.into(), tgt.into()), out.into());
        self
    }

    pub fn with_qe(mut self, src_text: &str, tgt_text: &str, score: f64) -> Self {
        self.qe_table.insert((src_text.into(), tgt_text.into()), score);
        self
    }

    pub fn with_restoration(mut self, text: &str, restored: impl Into<String>) -> Self {
        self.restoration_table.insert(text.into(), restored.into());
        self
    }

    /// Requests about this audio fail like a crashed backend.
    pub fn failing(mut self, audio_ref: impl Into<String>) -> Self {
        self.failing_refs.insert(audio_ref.into());
        self
    }

    fn h(&self, parts: &[&[u8]]) -> u64 {
        fnv(self.seed, parts)
    }

    fn check_failing(&self, audio_ref: &str) -> Result<(), ClientError> {
        if self.failing_refs.contains(audio_ref) {
            Err(ClientError::Mock(format!("backend failure for {audio_ref}")))
        } else {
            Ok(())
        }
    }

    /// Language named by a path component of the locator, else English.
    pub fn language_of_ref(audio_ref: &str) -> &'static str {
        audio_ref
            .split(['/', ':', '_', '.'])
            .find_map(|part| LANGUAGES.iter().find(|(c, _)| *c == part).map(|(c, _)| *c))
            .unwrap_or("en")
    }

    /// The defect-free translation this mock would produce.
    pub fn canonical_translation(&self, text: &str) -> String {
        let words: Vec<&str> = text
            .split_whitespace()
            .map(|w| {
                let key = w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
                ENGLISH[(self.h(&[b"word", key.as_bytes()]) % ENGLISH.len() as u64) as usize]
            })
            .collect();
        capitalize_sentence(&words)
    }

    /// The defect-free restoration of raw text.
    pub fn canonical_restoration(text: &str) -> String {
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.is_empty() {
            return String::new();
        }
        capitalize_sentence(&words)
    }
}

impl ModelBackend for MockBackend {
    fn detect_language(&self, audio_ref: &str) -> Result<LanguageGuess, ClientError> {
        self.check_failing(audio_ref)?;
        if let Some(g) = self.lid_table.get(audio_ref) {
            return Ok(g.clone());
        }
        let true_lang = Self::language_of_ref(audio_ref);
        let mut d = Draws(self.h(&[b"lid", audio_ref.as_bytes()]));
        let r = d.unit();
        let (lang, prob) = if r < self.rates.lid_mismatch {
            let other = loop {
                let c = LANGUAGES[d.below(LANGUAGES.len())].0;
                if c != true_lang {
                    break c;
                }
            };
            (other, 0.85 + 0.1 * d.unit())
        } else if r < self.rates.lid_mismatch + self.rates.lid_low_conf {
            (true_lang, 0.4 + 0.39 * d.unit())
        } else {
            (true_lang, 0.82 + 0.18 * d.unit())
        };
        Ok(LanguageGuess { lang: lang.to_owned(), prob })
    }

    fn transcribe(&self, audio_ref: &str, lang_hint: &str, window: Window) -> Result<TranscriptionResult, ClientError> {
        self.check_failing(audio_ref)?;
        if let Some(t) = self.transcript_table.get(audio_ref) {
            return Ok(t.clone());
        }
        let lang = if lang::is_supported(lang_hint) { lang_hint } else { "en" };
        let mut d = Draws(self.h(&[
            b"asr",
            audio_ref.as_bytes(),
            lang.as_bytes(),
            &window.start.to_bits().to_le_bytes(),
            &window.end.to_bits().to_le_bytes(),
        ]));
        let len = window.len().max(0.0);
        let n = if len < 3.0 { 1 } else { 1 + d.below(3) };
        let gap = (len / n as f64 * 0.05).min(0.2);
        let defect = d.unit();
        let switch_segment = (n > 1 && d.unit() < self.rates.segment_lid_switch).then(|| d.below(n));

        let mut segments = Vec::with_capacity(n);
        for k in 0..n {
            let start = len * k as f64 / n as f64;
            let end = if k + 1 == n { len } else { len * (k + 1) as f64 / n as f64 - gap };
            if end <= start {
                continue;
            }
            let words = ((end - start) * WORDS_PER_SECOND).round().max(1.0) as usize;
            let text: Vec<String> = (0..words).map(|_| synth_word(lang, &mut d)).collect();
            let seg_lang = if switch_segment == Some(k) {
                if lang == "en" { "de" } else { "en" }
            } else {
                lang
            };
            segments.push(TranscribedSegment {
                start_s: start,
                end_s: end,
                text: text.join(" "),
                lid: seg_lang.to_owned(),
                lid_prob: 0.8 + 0.2 * d.unit(),
            });
        }

        if let Some(last) = segments.last_mut() {
            let r = &self.rates;
            if defect < r.ngram_halluc {
                let w = synth_word(lang, &mut d);
                for _ in 0..6 {
                    last.text.push(' ');
                    last.text.push_str(&w);
                }
            } else if defect < r.ngram_halluc + r.longword_halluc {
                let glued: String = (0..12).map(|_| synth_word(lang, &mut d)).collect();
                last.text.push(' ');
                last.text.push_str(&glued);
            } else if defect < r.ngram_halluc + r.longword_halluc + r.phrase_halluc {
                last.text.push(' ');
                last.text.push_str(SYNTH_PHRASE);
            }
        }

        let prob = segments.first().map_or(0.0, |s| s.lid_prob);
        Ok(TranscriptionResult { segments, detected_lang: lang.to_owned(), detected_lang_prob: prob })
    }

    fn translate(&self, text: &str, src: &str, tgt: &str) -> Result<String, ClientError> {
        if let Some(t) = self.translation_table.get(&(text.to_owned(), src.to_owned(), tgt.to_owned())) {
            return Ok(t.clone());
        }
        let canonical = self.canonical_translation(text);
        let mut d = Draws(self.h(&[b"mt", text.as_bytes(), src.as_bytes(), tgt.as_bytes()]));
        let r = d.unit();
        if r < self.rates.translation_verbose {
            return Ok([canonical.as_str(); 12].join(" "));
        }
        if r < self.rates.translation_verbose + self.rates.translation_wrong_lang {
            let n = text.split_whitespace().count().max(1);
            let words: Vec<&str> = (0..n).map(|_| GERMAN[d.below(GERMAN.len())]).collect();
            return Ok(capitalize_sentence(&words));
        }
        Ok(canonical)
    }

    fn qe_score(&self, src_text: &str, tgt_text: &str, _src: &str, _tgt: &str) -> Result<f64, ClientError> {
        if let Some(s) = self.qe_table.get(&(src_text.to_owned(), tgt_text.to_owned())) {
            return Ok(*s);
        }
        if tgt_text != self.canonical_translation(src_text) {
            return Ok(self.qe_low);
        }
        if unit(self.h(&[b"qe", src_text.as_bytes()])) < self.rates.qe_low {
            return Ok(0.3);
        }
        Ok(self.qe_high)
    }

    fn restore(&self, prompt: &str, _lang: &str) -> Result<String, ClientError> {
        let input = prompt_input(prompt).ok_or_else(|| ClientError::Mock("prompt has no input slot".into()))?;
        if let Some(r) = self.restoration_table.get(input) {
            return Ok(format!("{r}</output>"));
        }
        let mut restored = Self::canonical_restoration(input);
        if unit(self.h(&[b"pnc", input.as_bytes()])) < self.rates.pnc_rewrite {
            let words: Vec<&str> = restored.split(' ').enumerate().map(|(i, w)| if i % 3 == 1 { "lorem" } else { w }).collect();
            restored = words.join(" ");
        }
        Ok(format!("{restored}</output>"))
    }
}
