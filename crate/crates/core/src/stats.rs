//! Hours and record accounting per (corpus, language), before and after
//! filtration, plus drop attribution by flag.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::decision::Flag;
use crate::manifest::UtteranceRecord;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyStats {
    pub unfiltered_hours: f64,
    pub filtered_hours: f64,
    pub unfiltered_count: u64,
    pub filtered_count: u64,
}

impl KeyStats {
    /// `filtered_hours / unfiltered_hours`, or 0 when nothing came in.
    pub fn retention_rate(&self) -> f64 {
        if self.unfiltered_hours > 0.0 {
            self.filtered_hours / self.unfiltered_hours
        } else {
            0.0
        }
    }

    fn add(&mut self, other: &KeyStats) {
        self.unfiltered_hours += other.unfiltered_hours;
        self.filtered_hours += other.filtered_hours;
        self.unfiltered_count += other.unfiltered_count;
        self.filtered_count += other.filtered_count;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CorpusKey {
    pub corpus: String,
    pub lang: String,
}

impl CorpusKey {
    pub fn new(corpus: impl Into<String>, lang: impl Into<String>) -> Self {
        Self { corpus: corpus.into(), lang: lang.into() }
    }

    pub fn of(r: &UtteranceRecord) -> Self {
        Self::new(r.corpus.clone(), r.lang_target.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    pub per_key: BTreeMap<CorpusKey, KeyStats>,
    /// Dropped records per flag; a record with two flags counts twice.
    pub flag_counts: BTreeMap<Flag, u64>,
    /// Dropped records per exact flag combination; sums to `dropped_count`.
    pub flag_set_counts: BTreeMap<String, u64>,
    pub dropped_count: u64,
    pub dropped_hours: f64,
}

fn hours(duration_s: f64) -> f64 {
    duration_s / 3600.0
}

impl CorpusStats {
    pub fn add_unfiltered(&mut self, key: CorpusKey, duration_s: f64) {
        let k = self.per_key.entry(key).or_default();
        k.unfiltered_hours += hours(duration_s);
        k.unfiltered_count += 1;
    }

    pub fn add_filtered(&mut self, key: CorpusKey, duration_s: f64) {
        let k = self.per_key.entry(key).or_default();
        k.filtered_hours += hours(duration_s);
        k.filtered_count += 1;
    }

    pub fn add_dropped(&mut self, flags: &BTreeSet<Flag>, duration_s: f64) {
        self.dropped_count += 1;
        self.dropped_hours += hours(duration_s);
        let drop_flags: Vec<Flag> = flags.iter().copied().filter(|f| !f.is_informational()).collect();
        for f in &drop_flags {
            *self.flag_counts.entry(*f).or_default() += 1;
        }
        let signature = drop_flags.iter().map(|f| f.as_str()).collect::<Vec<_>>().join("+");
        *self.flag_set_counts.entry(signature).or_default() += 1;
    }

    /// Insert precomputed totals for a key.
    pub fn set_key(&mut self, key: CorpusKey, stats: KeyStats) {
        self.per_key.insert(key, stats);
    }

    pub fn total(&self) -> KeyStats {
        let mut t = KeyStats::default();
        for k in self.per_key.values() {
            t.add(k);
        }
        t
    }

    pub fn retention_rate(&self) -> f64 {
        self.total().retention_rate()
    }

    /// Combine accounting from another shard.
    pub fn merge(&mut self, other: &CorpusStats) {
        for (key, s) in &other.per_key {
            self.per_key.entry(key.clone()).or_default().add(s);
        }
        for (f, n) in &other.flag_counts {
            *self.flag_counts.entry(*f).or_default() += n;
        }
        for (sig, n) in &other.flag_set_counts {
            *self.flag_set_counts.entry(sig.clone()).or_default() += n;
        }
        self.dropped_count += other.dropped_count;
        self.dropped_hours += other.dropped_hours;
    }

    /// Collapse languages: one row per corpus with its language count.
    pub fn by_corpus(&self) -> BTreeMap<String, (usize, KeyStats)> {
        let mut out: BTreeMap<String, (usize, KeyStats)> = BTreeMap::new();
        for (key, s) in &self.per_key {
            let e = out.entry(key.corpus.clone()).or_default();
            e.0 += 1;
            e.1.add(s);
        }
        out
    }

    pub fn language_count(&self) -> usize {
        self.per_key.keys().map(|k| k.lang.as_str()).collect::<BTreeSet<_>>().len()
    }
}

/// Hours and counts of an input manifest against its filtered output. Drop
/// attribution needs the sidecar; see [`CorpusStats::add_dropped`].
pub fn compute_stats<I, O, R1, R2>(input: I, output: O) -> CorpusStats
where
    I: IntoIterator<Item = R1>,
    O: IntoIterator<Item = R2>,
    R1: Borrow<UtteranceRecord>,
    R2: Borrow<UtteranceRecord>,
{
    let mut stats = CorpusStats::default();
    for r in input {
        let r = r.borrow();
        stats.add_unfiltered(CorpusKey::of(r), r.duration_s);
    }
    for r in output {
        let r = r.borrow();
        stats.add_filtered(CorpusKey::of(r), r.duration_s);
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" | "txt" => Ok(Self::Text),
            "json" => Ok(Self::Json),
            other => Err(ReportError::UnknownFormat(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Grouping {
    #[default]
    CorpusLanguage,
    Corpus,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("unknown report format {0:?} (expected text or json)")]
    UnknownFormat(String),
}

struct Row {
    corpus: String,
    language: String,
    stats: KeyStats,
}

fn rows(stats: &CorpusStats, grouping: Grouping) -> Vec<Row> {
    match grouping {
        Grouping::CorpusLanguage => stats
            .per_key
            .iter()
            .map(|(k, s)| Row { corpus: k.corpus.clone(), language: k.lang.clone(), stats: *s })
            .collect(),
        Grouping::Corpus => stats
            .by_corpus()
            .into_iter()
            .map(|(c, (n, s))| Row { corpus: c, language: n.to_string(), stats: s })
            .collect(),
    }
}

/// Render the retention table and drop attribution.
pub fn report(stats: &CorpusStats, format: &str, grouping: Grouping) -> Result<String, ReportError> {
    let format: ReportFormat = format.parse()?;
    let rows = rows(stats, grouping);
    let total = stats.total();
    Ok(match format {
        ReportFormat::Json => {
            let row_json = |corpus: &str, language: &str, s: &KeyStats| {
                json!({
                    "corpus": corpus,
                    "language": language,
                    "unfiltered_hours": s.unfiltered_hours,
                    "filtered_hours": s.filtered_hours,
                    "retention_rate": s.retention_rate(),
                    "unfiltered_count": s.unfiltered_count,
                    "filtered_count": s.filtered_count,
                })
            };
            let by_flag: BTreeMap<&str, u64> = stats.flag_counts.iter().map(|(f, n)| (f.as_str(), *n)).collect();
            let doc = json!({
                "rows": rows.iter().map(|r| row_json(&r.corpus, &r.language, &r.stats)).collect::<Vec<_>>(),
                "total": row_json("total", &stats.language_count().to_string(), &total),
                "dropped": {
                    "count": stats.dropped_count,
                    "hours": stats.dropped_hours,
                    "by_flag": by_flag,
                    "by_flag_set": stats.flag_set_counts,
                },
            });
            serde_json::to_string(&doc).expect("report serializes")
        }
        ReportFormat::Text => {
            let mut out = String::new();
            let lang_header = if grouping == Grouping::Corpus { "Languages" } else { "Language" };
            let _ = writeln!(
                out,
                "{:<12} {:>9} {:>16} {:>16} {:>11} {:>12} {:>12}",
                "Corpus", lang_header, "Unfiltered [h]", "Filtered [h]", "Retention %", "Records in", "Records out"
            );
            let mut line = |corpus: &str, lang: &str, s: &KeyStats| {
                let _ = writeln!(
                    out,
                    "{:<12} {:>9} {:>16.2} {:>16.2} {:>11.2} {:>12} {:>12}",
                    corpus,
                    lang,
                    s.unfiltered_hours,
                    s.filtered_hours,
                    100.0 * s.retention_rate(),
                    s.unfiltered_count,
                    s.filtered_count
                );
            };
            for r in &rows {
                line(&r.corpus, &r.language, &r.stats);
            }
            line("Total", &stats.language_count().to_string(), &total);
            if stats.dropped_count > 0 {
                let _ = writeln!(out, "\nDropped: {} records, {:.2} h", stats.dropped_count, stats.dropped_hours);
                let _ = writeln!(out, "By flag:");
                for (f, n) in &stats.flag_counts {
                    let _ = writeln!(out, "  {:<24} {n}", f.as_str());
                }
                let _ = writeln!(out, "By flag set:");
                for (sig, n) in &stats.flag_set_counts {
                    let _ = writeln!(out, "  {:<48} {n}", sig);
                }
            }
            out
        }
    })
}
