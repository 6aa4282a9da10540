//! Line-delimited JSON manifests: the record model, a streaming reader that
//! survives malformed lines, a writer, and per-record validation.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decision::{FilterDecision, Flag};
use crate::lang;
use crate::segmentation::SegmentSpan;

/// One audio segment and everything the pipeline has learned about it.
///
/// Field names on the wire follow the usual speech-manifest convention
/// (`audio_filepath`, `offset`, `duration`). Fields this type does not know
/// are kept in `extra` and written back unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    #[serde(default)]
    pub id: String,
    #[serde(rename = "audio_filepath", default)]
    pub audio_ref: String,
    #[serde(rename = "offset", default)]
    pub offset_s: f64,
    #[serde(rename = "duration", default)]
    pub duration_s: f64,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub lang_target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lid_pred: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lid_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_lids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_restored: Option<String>,
    #[serde(default)]
    pub flags: BTreeSet<Flag>,
    #[serde(default)]
    pub corpus: String,
    /// Speech regions awaiting segmentation, relative to `offset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<SegmentSpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_lang: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tgt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tgt_lang: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qe_score: Option<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl UtteranceRecord {
    pub fn new(
        id: impl Into<String>,
        audio_ref: impl Into<String>,
        offset_s: f64,
        duration_s: f64,
        lang_target: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            audio_ref: audio_ref.into(),
            offset_s,
            duration_s,
            text: String::new(),
            lang_target: lang_target.into(),
            lid_pred: None,
            lid_prob: None,
            segment_lids: None,
            text_restored: None,
            flags: BTreeSet::new(),
            corpus: String::new(),
            spans: None,
            src_text: None,
            src_lang: None,
            tgt_text: None,
            tgt_lang: None,
            qe_score: None,
            extra: Map::new(),
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = text.into();
        self
    }

    pub fn with_corpus(mut self, corpus: impl Into<String>) -> Self {
        self.corpus = corpus.into();
        self
    }

    pub fn with_lid(mut self, pred: impl Into<String>, prob: f64) -> Self {
        self.lid_pred = Some(pred.into());
        self.lid_prob = Some(prob);
        self
    }

    /// Text downstream stages should consume: the restored form when present.
    pub fn best_text(&self) -> &str {
        self.text_restored.as_deref().unwrap_or(&self.text)
    }
}

/// Stable id for records that arrive without one.
pub fn synthesize_id(audio_ref: &str, offset_s: f64, duration_s: f64) -> String {
    let mut h = Sha256::new();
    h.update(audio_ref.as_bytes());
    h.update([0x1f]);
    h.update(offset_s.to_string().as_bytes());
    h.update([0x1f]);
    h.update(duration_s.to_string().as_bytes());
    let digest = h.finalize();
    digest[..16].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("line {line}: {cause}")]
pub struct LineError {
    /// 1-based line number in the source.
    pub line: usize,
    pub cause: String,
    /// The offending line, lossily decoded.
    pub raw: String,
}

/// Streaming manifest reader. Holds one line in memory at a time.
pub struct ManifestReader<R> {
    source: R,
    buf: Vec<u8>,
    line: usize,
}

impl<R: BufRead> ManifestReader<R> {
    pub fn new(source: R) -> Self {
        Self { source, buf: Vec::with_capacity(1024), line: 0 }
    }
}

impl<R: BufRead> Iterator for ManifestReader<R> {
    type Item = Result<UtteranceRecord, LineError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            self.line += 1;
            match self.source.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    return Some(Err(LineError { line: self.line, cause: format!("read failed: {e}"), raw: String::new() }))
                }
            }
            let bytes = trim_ascii_ws(&self.buf);
            if bytes.is_empty() {
                continue;
            }
            return Some(parse_line(bytes, self.line));
        }
    }
}

fn trim_ascii_ws(b: &[u8]) -> &[u8] {
    let start = b.iter().position(|c| !c.is_ascii_whitespace()).unwrap_or(b.len());
    let end = b.iter().rposition(|c| !c.is_ascii_whitespace()).map_or(start, |i| i + 1);
    &b[start..end]
}

fn parse_line(bytes: &[u8], line: usize) -> Result<UtteranceRecord, LineError> {
    let text = std::str::from_utf8(bytes).map_err(|e| LineError {
        line,
        cause: format!("invalid UTF-8: {e}"),
        raw: String::from_utf8_lossy(bytes).into_owned(),
    })?;
    let mut rec: UtteranceRecord = serde_json::from_str(text).map_err(|e| LineError {
        line,
        cause: e.to_string(),
        raw: text.to_owned(),
    })?;
    if rec.id.is_empty() {
        rec.id = synthesize_id(&rec.audio_ref, rec.offset_s, rec.duration_s);
    }
    Ok(rec)
}

/// Lazily read records in file order. Malformed lines come through as `Err`
/// items and do not end the stream.
pub fn read_manifest<R: BufRead>(source: R) -> ManifestReader<R> {
    ManifestReader::new(source)
}

#[derive(Debug, Error)]
#[error("manifest write failed after {written} records: {source}")]
pub struct WriteError {
    pub written: usize,
    #[source]
    pub source: io::Error,
}

/// Serialize one record as a single manifest line (without the newline).
pub fn to_line(rec: &UtteranceRecord) -> String {
    serde_json::to_string(rec).expect("records always serialize")
}

pub fn write_record<W: Write>(sink: &mut W, rec: &UtteranceRecord) -> io::Result<()> {
    serde_json::to_writer(&mut *sink, rec).map_err(io::Error::from)?;
    sink.write_all(b"\n")
}

/// Write records one per line and return how many were written.
pub fn write_manifest<'a, I, W>(records: I, mut sink: W) -> Result<usize, WriteError>
where
    I: IntoIterator<Item = &'a UtteranceRecord>,
    W: Write,
{
    let mut written = 0;
    for rec in records {
        write_record(&mut sink, rec).map_err(|source| WriteError { written, source })?;
        written += 1;
    }
    sink.flush().map_err(|source| WriteError { written, source })?;
    Ok(written)
}

/// Check the record invariants. Never fails; problems become a drop decision
/// flagged `invalid_record` with one cause per violated invariant.
pub fn validate_record(r: &UtteranceRecord) -> FilterDecision {
    let mut causes = Vec::new();
    if r.id.is_empty() {
        causes.push("empty id".to_string());
    }
    if !(r.duration_s.is_finite() && r.duration_s > 0.0) {
        causes.push(format!("duration {} is not positive", r.duration_s));
    }
    if !(r.offset_s.is_finite() && r.offset_s >= 0.0) {
        causes.push(format!("offset {} is negative", r.offset_s));
    }
    if let Some(p) = r.lid_prob {
        if !(0.0..=1.0).contains(&p) {
            causes.push(format!("lid_prob {p} outside [0,1]"));
        }
    }
    if !lang::is_supported(&r.lang_target) {
        causes.push(format!("unsupported lang_target {:?}", r.lang_target));
    }
    if causes.is_empty() {
        FilterDecision::pass(&r.id)
    } else {
        let mut d = FilterDecision::drop_with(&r.id, Flag::InvalidRecord, causes.remove(0));
        d.causes.extend(causes);
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn rec(id: &str) -> UtteranceRecord {
        UtteranceRecord::new(id, "a.flac", 0.0, 5.0, "fr")
            .with_text("bonjour")
            .with_corpus("yodas")
    }

    #[test]
    fn empty_stream_yields_nothing() {
        let items: Vec<_> = read_manifest(Cursor::new("")).collect();
        assert!(items.is_empty());
    }

    #[test]
    fn reads_two_lines_in_order() {
        let mut buf = Vec::new();
        write_manifest(&[rec("a"), rec("b")], &mut buf).unwrap();
        let ids: Vec<_> = read_manifest(Cursor::new(buf)).map(|r| r.unwrap().id).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn malformed_line_is_reported_and_skipped() {
        let good = to_line(&rec("a"));
        let input = format!("{good}\n{{\"id\": \"b\", \"duration\": \n{}\n", to_line(&rec("c")));
        let items: Vec<_> = read_manifest(Cursor::new(input)).collect();
        assert_eq!(items.len(), 3);
        assert!(items[0].is_ok());
        let err = items[1].as_ref().unwrap_err();
        assert_eq!(err.line, 2);
        assert_eq!(items[2].as_ref().unwrap().id, "c");
    }

    #[test]
    fn invalid_utf8_line_is_an_error() {
        let mut input = to_line(&rec("a")).into_bytes();
        input.extend_from_slice(b"\n\xff\xfe\n");
        let items: Vec<_> = read_manifest(Cursor::new(input)).collect();
        assert_eq!(items.len(), 2);
        assert_eq!(items[1].as_ref().unwrap_err().line, 2);
    }

    #[test]
    fn absent_optionals_are_omitted_not_null() {
        let line = to_line(&rec("a"));
        assert!(!line.contains("null"));
        assert!(!line.contains("lid_pred"));
        assert!(line.contains("\"audio_filepath\":\"a.flac\""));
    }

    #[test]
    fn unknown_fields_pass_through() {
        let input = r#"{"id":"x","audio_filepath":"a","offset":0.0,"duration":1.5,"text":"","lang_target":"de","corpus":"ytc","channel":{"name":"n","n":3},"pnc":"yes"}"#;
        let r = read_manifest(Cursor::new(input)).next().unwrap().unwrap();
        assert_eq!(r.extra["channel"]["n"], 3);
        let out = to_line(&r);
        assert!(out.contains(r#""channel":{"name":"n","n":3}"#));
        assert!(out.contains(r#""pnc":"yes""#));
    }

    #[test]
    fn missing_id_is_synthesized_stably() {
        let input = r#"{"audio_filepath":"clip.wav","offset":1.25,"duration":3.0,"lang_target":"en"}"#;
        let a = read_manifest(Cursor::new(input)).next().unwrap().unwrap();
        let b = read_manifest(Cursor::new(input)).next().unwrap().unwrap();
        assert_eq!(a.id, b.id);
        assert_eq!(a.id, synthesize_id("clip.wav", 1.25, 3.0));
        assert_ne!(a.id, synthesize_id("clip.wav", 1.25, 3.5));
        assert_eq!(a.id.len(), 32);
    }

    #[test]
    fn awkward_floats_round_trip_bit_exact() {
        let mut r = rec("f");
        r.offset_s = 0.1 + 0.2;
        r.duration_s = 1.0 / 3.0;
        r.lid_prob = Some(0.123456789012345678);
        let line = to_line(&r);
        let back = read_manifest(Cursor::new(line)).next().unwrap().unwrap();
        assert_eq!(back.offset_s.to_bits(), r.offset_s.to_bits());
        assert_eq!(back.duration_s.to_bits(), r.duration_s.to_bits());
        assert_eq!(back, r);
    }

    #[test]
    fn validation_examples() {
        let mut ok = rec("a");
        ok.lid_prob = Some(0.9);
        assert!(validate_record(&ok).is_pass());

        let mut neg = rec("a");
        neg.duration_s = -1.0;
        let d = validate_record(&neg);
        assert!(d.is_drop());
        assert!(d.flags.contains(&Flag::InvalidRecord));
        assert!(!d.causes.is_empty());

        let mut prob = rec("a");
        prob.lid_prob = Some(1.3);
        assert!(validate_record(&prob).flags.contains(&Flag::InvalidRecord));

        let mut lang = rec("a");
        lang.lang_target = "zh".into();
        assert!(validate_record(&lang).is_drop());

        let mut many = rec("");
        many.offset_s = -2.0;
        many.duration_s = 0.0;
        assert_eq!(validate_record(&many).causes.len(), 3);
    }

    struct FailAfter(usize);
    impl Write for FailAfter {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            if buf == b"\n" {
                if self.0 == 0 {
                    return Err(io::Error::other("disk full"));
                }
                self.0 -= 1;
            }
            Ok(buf.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn sink_failure_reports_partial_count() {
        let recs = vec![rec("a"), rec("b"), rec("c")];
        let err = write_manifest(&recs, FailAfter(2)).unwrap_err();
        assert_eq!(err.written, 2);
    }
}
