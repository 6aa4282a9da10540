//! Hallucination heuristics over whitespace tokens.

/// Thresholds for the repetition and long-word checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepetitionRule {
    pub n_min: usize,
    pub n_max: usize,
    pub min_repeats: usize,
    pub unigram_min_repeats: usize,
}

/// True iff some n-gram (n in `n_min..=n_max`) appears at least
/// `min_repeats` times back to back, or one token appears at least
/// `unigram_min_repeats` times back to back.
pub fn has_repeated_ngram(text: &str, rule: &RepetitionRule) -> bool {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if longest_copies(&tokens, 1) >= rule.unigram_min_repeats {
        return true;
    }
    (rule.n_min..=rule.n_max).any(|n| longest_copies(&tokens, n) >= rule.min_repeats)
}

/// Maximum number of back-to-back copies of any n-gram.
///
/// A run of `len` consecutive positions with `t[p] == t[p + n]` means the
/// window starting at the run head repeats `len / n + 1` times.
fn longest_copies(tokens: &[&str], n: usize) -> usize {
    if n == 0 || tokens.len() < n {
        return 0;
    }
    let mut best = 1;
    let mut run = 0;
    for p in 0..tokens.len() - n {
        if tokens[p] == tokens[p + n] {
            run += 1;
            best = best.max(run / n + 1);
        } else {
            run = 0;
        }
    }
    best
}

/// True iff any token is longer than `max_chars` Unicode scalar values.
pub fn has_long_word(text: &str, max_chars: usize) -> bool {
    text.split_whitespace().any(|t| t.chars().count() > max_chars)
}
