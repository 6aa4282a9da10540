//! Reference implementations used by the acceptance suite. Each one is the
//! slow, obvious version of a pipeline component and reads the shipped data
//! files on its own.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

pub fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn data() -> PathBuf {
    repo().join("data")
}

/// One character per line, `\uXXXX` escapes allowed.
pub fn load_char_file(path: &Path) -> HashSet<char> {
    fs::read_to_string(path)
        .unwrap()
        .split('\n')
        .filter(|l| !l.is_empty())
        .map(|l| match l.strip_prefix("\\u") {
            Some(hex) => char::from_u32(u32::from_str_radix(hex, 16).unwrap()).unwrap(),
            None => l.chars().next().unwrap(),
        })
        .collect()
}

pub fn charset() -> HashSet<char> {
    load_char_file(&data().join("charset.txt"))
}

pub fn histograms() -> HashMap<String, HashSet<char>> {
    fs::read_dir(data().join("histograms"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "hist"))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), load_char_file(&p)))
        .collect()
}

/// Lowercased, trimmed phrases per language.
pub fn phrase_lists() -> HashMap<String, Vec<String>> {
    fs::read_dir(data().join("phrases"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let lang = p.file_stem().unwrap().to_string_lossy().into_owned();
            let text = fs::read_to_string(&p).unwrap();
            let list = text
                .lines()
                .map(|l| l.trim())
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(|l| l.to_lowercase())
                .collect();
            (lang, list)
        })
        .collect()
}

pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

pub fn cer(hyp: &str, reference: &str) -> f64 {
    let (h, r): (Vec<char>, Vec<char>) = (hyp.chars().collect(), reference.chars().collect());
    match (h.is_empty(), r.is_empty()) {
        (true, true) => 0.0,
        (false, true) => f64::INFINITY,
        _ => levenshtein(&h, &r) as f64 / r.len() as f64,
    }
}

/// Lowercase, drop the charset's punctuation, collapse whitespace.
pub fn normalize(text: &str, charset: &HashSet<char>) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !(charset.contains(c) && !c.is_alphanumeric() && !c.is_whitespace()))
        .collect();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Does some window of `n` tokens repeat `need` times back to back?
pub fn repeats(tokens: &[&str], n: usize, need: usize) -> bool {
    (0..tokens.len()).any(|start| {
        let mut copies = 0;
        while start + (copies + 1) * n <= tokens.len()
            && tokens[start + copies * n..start + (copies + 1) * n] == tokens[start..start + n]
        {
            copies += 1;
        }
        copies >= need
    })
}

pub fn ngram_oracle(text: &str, lo: usize, hi: usize, need: usize, unigram_need: usize) -> bool {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    repeats(&tokens, 1, unigram_need) || (lo..=hi).any(|n| repeats(&tokens, n, need))
}

/// Padded bounds of span `i` under the midpoint rule.
pub fn padded(spans: &[(f64, f64)], i: usize, pad: f64, audio: f64) -> (f64, f64) {
    let (s, e) = spans[i];
    let start = match i.checked_sub(1) {
        None => (s - pad).max(0.0),
        Some(j) if s - spans[j].1 < 2.0 * pad => (spans[j].1 + s) / 2.0,
        Some(_) => s - pad,
    };
    let end = match spans.get(i + 1) {
        None => (e + pad).min(audio),
        Some(&(ns, _)) if ns - e < 2.0 * pad => (e + ns) / 2.0,
        Some(_) => e + pad,
    };
    (start, end)
}

/// Greedy grouping into (start, end, oversize).
pub fn greedy(spans: &[(f64, f64)], cap: f64, gap: f64) -> Vec<(f64, f64, bool)> {
    let mut out: Vec<(f64, f64, bool)> = Vec::new();
    let mut open = false;
    for &(s, e) in spans {
        if e - s > cap {
            out.push((s, e, true));
            open = false;
            continue;
        }
        match out.last_mut() {
            Some(last) if open && e - last.0 <= cap && s - last.1 <= gap => last.1 = e,
            _ => {
                out.push((s, e, false));
                open = true;
            }
        }
    }
    out
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Share of non-whitespace characters inside `hist`; 1 for empty text.
pub fn hist_share(text: &str, hist: &HashSet<char>) -> f64 {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    if chars.is_empty() {
        return 1.0;
    }
    chars.iter().filter(|c| hist.contains(c)).count() as f64 / chars.len() as f64
}
