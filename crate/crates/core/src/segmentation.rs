//! Turns timestamped speech regions into final audio segments: pad each
//! region, then greedily merge neighbours up to the segment length cap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpan {
    #[serde(rename = "start")]
    pub start_s: f64,
    #[serde(rename = "end")]
    pub end_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl SegmentSpan {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        Self { start_s, end_s, text: None }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub max_segment_s: f64,
    pub pad_s: f64,
    pub merge_gap_s: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self { max_segment_s: 40.0, pad_s: 0.4, merge_gap_s: 2.0 }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.max_segment_s) || !positive(self.pad_s) || !positive(self.merge_gap_s) {
            return Err("segmentation values must be strictly positive".into());
        }
        if self.pad_s >= self.max_segment_s {
            return Err(format!("pad_s {} must be below max_segment_s {}", self.pad_s, self.max_segment_s));
        }
        Ok(())
    }
}

/// A merged, padded segment ready for (re-)transcription.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub text: Option<String>,
    /// Set when a single input span already exceeded the cap.
    pub oversize: bool,
}

impl PlannedSegment {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentationError {
    #[error("span {index}: end {end} not after start {start}")]
    EmptySpan { index: usize, start: f64, end: f64 },
    #[error("span {index}: starts before the previous span ends")]
    Unsorted { index: usize },
    #[error("span {index}: [{start}, {end}] outside audio [0, {audio}]")]
    OutOfBounds { index: usize, start: f64, end: f64, audio: f64 },
}

fn check_spans(spans: &[SegmentSpan], audio_duration_s: Option<f64>) -> Result<(), SegmentationError> {
    let mut prev_end = f64::NEG_INFINITY;
    for (index, s) in spans.iter().enumerate() {
        if !(s.end_s > s.start_s) {
            return Err(SegmentationError::EmptySpan { index, start: s.start_s, end: s.end_s });
        }
        if s.start_s < prev_end {
            return Err(SegmentationError::Unsorted { index });
        }
        if let Some(audio) = audio_duration_s {
            if s.start_s < 0.0 || s.end_s > audio {
                return Err(SegmentationError::OutOfBounds { index, start: s.start_s, end: s.end_s, audio });
            }
        }
        prev_end = s.end_s;
    }
    Ok(())
}

/// Extend every span by `pad_s` on both sides, clamped to the audio. Where
/// two padded neighbours would overlap, both meet at the midpoint of the
/// original gap between them.
pub fn pad_spans(
    spans: &[SegmentSpan],
    pad_s: f64,
    audio_duration_s: f64,
) -> Result<Vec<SegmentSpan>, SegmentationError> {
    check_spans(spans, Some(audio_duration_s))?;
    let mut out: Vec<SegmentSpan> = spans.to_vec();
    for i in 0..out.len() {
        let start = if i == 0 {
            (spans[i].start_s - pad_s).max(0.0)
        } else {
            let gap_lo = spans[i - 1].end_s;
            let gap_hi = spans[i].start_s;
            if gap_hi - gap_lo < 2.0 * pad_s {
                (gap_lo + gap_hi) / 2.0
            } else {
                gap_hi - pad_s
            }
        };
        let end = if i + 1 == spans.len() {
            (spans[i].end_s + pad_s).min(audio_duration_s)
        } else {
            let gap_lo = spans[i].end_s;
            let gap_hi = spans[i + 1].start_s;
            if gap_hi - gap_lo < 2.0 * pad_s {
                (gap_lo + gap_hi) / 2.0
            } else {
                gap_lo + pad_s
            }
        };
        out[i].start_s = start;
        out[i].end_s = end;
    }
    Ok(out)
}

/// Greedy left-to-right merge. A span joins the open segment iff the merged
/// extent stays within `max_segment_s` and the silence before it is at most
/// `merge_gap_s`. Spans longer than the cap are emitted alone and marked
/// oversize.
pub fn merge_spans(
    spans: &[SegmentSpan],
    cfg: &SegmentationConfig,
) -> Result<Vec<PlannedSegment>, SegmentationError> {
    check_spans(spans, None)?;
    let mut out = Vec::new();
    let mut open: Option<PlannedSegment> = None;

    for span in spans {
        if span.duration() > cfg.max_segment_s {
            out.extend(open.take());
            out.push(PlannedSegment {
                start_s: span.start_s,
                end_s: span.end_s,
                text: span.text.clone(),
                oversize: true,
            });
            continue;
        }
        match open.as_mut() {
            Some(seg)
                if span.end_s - seg.start_s <= cfg.max_segment_s
                    && span.start_s - seg.end_s <= cfg.merge_gap_s =>
            {
                seg.end_s = span.end_s;
                seg.text = join_text(seg.text.take(), span.text.as_deref());
            }
            _ => {
                out.extend(open.take());
                open = Some(PlannedSegment {
                    start_s: span.start_s,
                    end_s: span.end_s,
                    text: span.text.clone(),
                    oversize: false,
                });
            }
        }
    }
    out.extend(open);
    Ok(out)
}

fn join_text(acc: Option<String>, next: Option<&str>) -> Option<String> {
    match (acc, next) {
        (Some(mut a), Some(b)) => {
            a.push(' ');
            a.push_str(b);
            Some(a)
        }
        (a, None) => a,
        (None, Some(b)) => Some(b.to_owned()),
    }
}

pub fn plan_segments(
    spans: &[SegmentSpan],
    cfg: &SegmentationConfig,
    audio_duration_s: f64,
) -> Result<Vec<PlannedSegment>, SegmentationError> {
    let padded = pad_spans(spans, cfg.pad_s, audio_duration_s)?;
    merge_spans(&padded, cfg)
}
