//! Per-language hallucinated-phrase lists matched with one Aho-Corasick
//! automaton per language.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use aho_corasick::AhoCorasick;

use crate::decision::FilterError;

/// Case folding shared by index construction and lookup.
pub fn fold_case(s: &str) -> String {
    s.to_lowercase()
}

#[derive(Debug, Clone)]
pub struct PhraseIndex {
    automaton: AhoCorasick,
    len: usize,
}

impl PhraseIndex {
    pub fn new<I, S>(phrases: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let folded: Vec<String> = phrases
            .into_iter()
            .map(|p| fold_case(p.as_ref().trim()))
            .filter(|p| !p.is_empty())
            .collect();
        let automaton = AhoCorasick::new(&folded).expect("phrase automaton size within limits");
        Self { automaton, len: folded.len() }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// True iff any listed phrase occurs in `text`, ignoring case.
    pub fn matches(&self, text: &str) -> bool {
        self.len > 0 && self.automaton.is_match(&fold_case(text))
    }
}

/// Phrase list file: one phrase per line, `#` starts a comment line.
pub fn parse_phrase_list(content: &str) -> Vec<String> {
    content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

/// Phrase indexes for every configured language.
#[derive(Debug, Clone, Default)]
pub struct PhraseLibrary {
    by_lang: HashMap<String, PhraseIndex>,
    /// When set, languages without a list simply never match.
    pub optional: bool,
}

impl PhraseLibrary {
    pub fn new(optional: bool) -> Self {
        Self { by_lang: HashMap::new(), optional }
    }

    pub fn insert(&mut self, lang: impl Into<String>, index: PhraseIndex) {
        self.by_lang.insert(lang.into(), index);
    }

    pub fn get(&self, lang: &str) -> Option<&PhraseIndex> {
        self.by_lang.get(lang)
    }

    /// Load every `<lang>.txt` in `dir`.
    pub fn load_dir(dir: &Path, optional: bool) -> io::Result<Self> {
        let mut lib = Self::new(optional);
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(lang) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let content = fs::read_to_string(&path)?;
            lib.insert(lang.to_owned(), PhraseIndex::new(parse_phrase_list(&content)));
        }
        Ok(lib)
    }

    pub fn load_file(&mut self, lang: &str, path: &Path) -> io::Result<()> {
        let content = fs::read_to_string(path)?;
        self.insert(lang.to_owned(), PhraseIndex::new(parse_phrase_list(&content)));
        Ok(())
    }
}

pub fn detect_hallucinated_phrases(text: &str, lang: &str, lib: &PhraseLibrary) -> Result<bool, FilterError> {
    match lib.get(lang) {
        Some(index) => Ok(index.matches(text)),
        None if lib.optional => Ok(false),
        None => Err(FilterError::NoPhraseList(lang.to_owned())),
    }
}
