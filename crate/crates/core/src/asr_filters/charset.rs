//! Allowed-character sets.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CharsetError {
    #[error("reading charset {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("charset line {line}: expected one character or \\uXXXX escape, got {got:?}")]
    BadLine { line: usize, got: String },
}

/// A set of allowed Unicode scalar values with an ASCII fast path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Charset {
    ascii: [bool; 128],
    other: HashSet<char>,
}

/// First character of a text that is not in the allowed set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OffendingChar {
    /// Index in Unicode scalar values, not bytes.
    pub index: usize,
    pub ch: char,
}

impl Charset {
    pub fn empty() -> Self {
        Self { ascii: [false; 128], other: HashSet::new() }
    }

    pub fn insert(&mut self, c: char) {
        if c.is_ascii() {
            self.ascii[c as usize] = true;
        } else {
            self.other.insert(c);
        }
    }

    pub fn contains(&self, c: char) -> bool {
        if c.is_ascii() {
            self.ascii[c as usize]
        } else {
            self.other.contains(&c)
        }
    }

    pub fn len(&self) -> usize {
        self.ascii.iter().filter(|b| **b).count() + self.other.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        (0u8..128)
            .filter(|b| self.ascii[*b as usize])
            .map(char::from)
            .chain(self.other.iter().copied())
    }

    /// Members that are neither alphanumeric nor whitespace.
    pub fn punctuation(&self) -> Charset {
        self.chars()
            .filter(|c| !c.is_alphanumeric() && !c.is_whitespace())
            .collect()
    }

    /// One character per line; `\uXXXX` escapes allowed. Only the line
    /// terminator is stripped, so a line holding a single space adds U+0020.
    pub fn parse(content: &str) -> Result<Self, CharsetError> {
        let mut set = Self::empty();
        for (i, raw) in content.split('\n').enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.is_empty() {
                continue;
            }
            let bad = || CharsetError::BadLine { line: i + 1, got: line.to_owned() };
            let c = if let Some(hex) = line.strip_prefix("\\u") {
                u32::from_str_radix(hex, 16).ok().and_then(char::from_u32).ok_or_else(bad)?
            } else {
                let mut it = line.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => c,
                    _ => return Err(bad()),
                }
            };
            set.insert(c);
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, CharsetError> {
        let content = fs::read_to_string(path)
            .map_err(|source| CharsetError::Io { path: path.display().to_string(), source })?;
        Self::parse(&content)
    }
}

impl FromIterator<char> for Charset {
    fn from_iter<T: IntoIterator<Item = char>>(iter: T) -> Self {
        let mut set = Self::empty();
        for c in iter {
            set.insert(c);
        }
        set
    }
}

/// `None` when every character of `text` is allowed.
pub fn charset_check(text: &str, allowed: &Charset) -> Option<OffendingChar> {
    text.chars()
        .enumerate()
        .find(|(_, c)| !allowed.contains(*c))
        .map(|(index, ch)| OffendingChar { index, ch })
}
