//! Sharded, order-preserving execution of the configured stage list.
//!
//! A reader thread numbers input records and routes them by id hash to
//! bounded shard queues; each shard has its own worker pool; the calling
//! thread writes results back in input order. Admission is capped by
//! `max_in_flight_records`, so memory does not grow with manifest length.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, BufWriter, Write};
use std::thread;

use crossbeam_channel::{bounded, Receiver, Sender};
use serde_json::Value;
use thiserror::Error;

use crate::asr_filters::{lid_filter, AsrFilters};
use crate::ast_filters::{AstFilters, TranslationPair};
use crate::clients::{ClientError, Services, Window};
use crate::config::{ConfigError, PipelineConfig, Stage};
use crate::decision::{FilterDecision, FilterError, Flag};
use crate::manifest::{validate_record, write_record, LineError, UtteranceRecord};
use crate::pnc::{extract_restored, ExemplarBank, RestorationGate};
use crate::segmentation::plan_segments;
use crate::stats::{CorpusKey, CorpusStats};

/// Field added to sidecar records listing why they were dropped.
pub const DROP_CAUSES_FIELD: &str = "drop_causes";

/// FNV-1a over the id bytes; stable across runs and platforms.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn shard_of(id: &str, shard_count: usize) -> usize {
    (stable_hash(id) % shard_count as u64) as usize
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("loading {what}: {message}")]
    Load { what: &'static str, message: String },
    #[error("writing {what}: {source}")]
    Io { what: &'static str, source: io::Error },
}

/// A record after the stages it reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub record: UtteranceRecord,
    pub dropped: bool,
    pub causes: Vec<String>,
}

enum Step {
    Continue,
    Drop(Vec<String>),
    Split(Vec<UtteranceRecord>),
}

enum Processed {
    Records(Vec<Outcome>),
    Malformed(LineError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    /// Input lines, malformed ones included.
    pub lines_read: u64,
    pub malformed: u64,
    /// Records entering the filter chain; exceeds the valid input lines when
    /// segmentation splits records.
    pub records_in: u64,
    pub kept: u64,
    pub dropped: u64,
    pub service_errors: u64,
    pub stats: CorpusStats,
}

impl RunSummary {
    pub fn service_error_rate(&self) -> f64 {
        if self.records_in == 0 {
            0.0
        } else {
            self.service_errors as f64 / self.records_in as f64
        }
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
    asr: Option<AsrFilters>,
    gate: Option<RestorationGate>,
    exemplars: ExemplarBank,
    ast: Option<AstFilters>,
    services: Option<Services>,
}

impl Pipeline {
    /// Validate `cfg`, load its data files and connect the configured backend.
    pub fn from_config(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        let services = cfg.stages.iter().any(|s| s.needs_services()).then(|| cfg.services.connect(cfg.seed));
        Self::build(cfg, services)
    }

    /// As [`Pipeline::from_config`] with an explicit service facade.
    pub fn with_services(cfg: PipelineConfig, services: Services) -> Result<Self, PipelineError> {
        Self::build(cfg, Some(services))
    }

    fn build(cfg: PipelineConfig, services: Option<Services>) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let base = cfg.base_dir.clone();
        let needs_asr = cfg.has(Stage::LidFilter) || cfg.has(Stage::AsrFilter) || cfg.has(Stage::PncRestore);
        let asr = needs_asr
            .then(|| AsrFilters::load(cfg.asr.clone(), &base))
            .transpose()
            .map_err(|e| PipelineError::Load { what: "asr filter data", message: e.to_string() })?;
        let (gate, exemplars) = if cfg.has(Stage::PncRestore) {
            let dir = cfg.pnc.exemplar_dir.as_ref().ok_or_else(|| {
                ConfigError::Invalid("pnc_restore requires pnc.exemplar_dir".into())
            })?;
            let bank = ExemplarBank::load_dir(&base.join(dir))
                .map_err(|e| PipelineError::Load { what: "restoration exemplars", message: e.to_string() })?;
            let charset = asr.as_ref().and_then(|a| a.charset.clone());
            (Some(RestorationGate::new(&cfg.pnc, charset)), bank)
        } else {
            (None, ExemplarBank::default())
        };
        let ast = cfg
            .has(Stage::AstFilter)
            .then(|| AstFilters::load(cfg.ast.clone(), &base))
            .transpose()
            .map_err(|e| PipelineError::Load { what: "ast filter data", message: e.to_string() })?;
        if services.is_none() && cfg.stages.iter().any(|s| s.needs_services()) {
            return Err(ConfigError::Invalid("service stages configured without services".into()).into());
        }
        Ok(Self { cfg, asr, gate, exemplars, ast, services })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Run one record through every stage. Segmentation may turn it into
    /// several; each leaves at the first stage that drops it.
    pub fn process(&self, record: UtteranceRecord) -> Vec<Outcome> {
        let mut out = Vec::with_capacity(1);
        self.run_from(0, record, &mut out);
        out
    }

    fn run_from(&self, first: usize, mut rec: UtteranceRecord, out: &mut Vec<Outcome>) {
        for (i, &stage) in self.cfg.stages.iter().enumerate().skip(first) {
            match self.apply(stage, &mut rec) {
                Step::Continue => {}
                Step::Drop(causes) => {
                    out.push(Outcome { record: rec, dropped: true, causes });
                    return;
                }
                Step::Split(children) => {
                    for child in children {
                        self.run_from(i + 1, child, out);
                    }
                    return;
                }
            }
        }
        out.push(Outcome { record: rec, dropped: false, causes: Vec::new() });
    }

    fn services(&self) -> &Services {
        self.services.as_ref().expect("services connected for service stages")
    }

    fn apply(&self, stage: Stage, rec: &mut UtteranceRecord) -> Step {
        match stage {
            Stage::Validate => decide(rec, Ok(validate_record(rec))),
            Stage::Segment => self.segment(rec),
            Stage::Transcribe => self.transcribe(rec).unwrap_or_else(|e| service_failure(rec, e)),
            Stage::LidFilter => {
                let d = lid_filter(rec, &self.asr.as_ref().expect("asr filters loaded").cfg);
                decide(rec, d)
            }
            Stage::AsrFilter => {
                let d = self.asr.as_ref().expect("asr filters loaded").filter_text(rec);
                decide(rec, d)
            }
            Stage::PncRestore => self.restore(rec),
            Stage::Translate => self.translate(rec).unwrap_or_else(|e| service_failure(rec, e)),
            Stage::AstFilter => match TranslationPair::from_record(rec) {
                Some(pair) => {
                    let d = self.ast.as_ref().expect("ast filters loaded").filter_pair(&pair);
                    decide(rec, d)
                }
                None => Step::Continue,
            },
            Stage::Stats => Step::Continue,
        }
    }

    fn segment(&self, rec: &mut UtteranceRecord) -> Step {
        let cfg = &self.cfg.segmentation;
        let spans = match rec.spans.take() {
            Some(s) if !s.is_empty() => s,
            other => {
                rec.spans = other;
                if rec.duration_s > cfg.max_segment_s {
                    rec.flags.insert(Flag::OversizeSpan);
                }
                return Step::Continue;
            }
        };
        match plan_segments(&spans, cfg, rec.duration_s) {
            Err(e) => {
                rec.spans = Some(spans);
                rec.flags.insert(Flag::InvalidRecord);
                Step::Drop(vec![e.to_string()])
            }
            Ok(plan) => Step::Split(
                plan.into_iter()
                    .enumerate()
                    .map(|(k, seg)| {
                        let mut child = rec.clone();
                        child.id = format!("{}#{k}", rec.id);
                        child.offset_s = rec.offset_s + seg.start_s;
                        child.duration_s = seg.end_s - seg.start_s;
                        child.text = seg.text.clone().unwrap_or_default();
                        if seg.oversize {
                            child.flags.insert(Flag::OversizeSpan);
                        }
                        child
                    })
                    .collect(),
            ),
        }
    }

    /// Language ID first, then transcription with the detected language as
    /// the hint.
    fn transcribe(&self, rec: &mut UtteranceRecord) -> Result<Step, ClientError> {
        let svc = self.services();
        let guess = svc.detect_language(&rec.audio_ref)?;
        let window = Window::new(rec.offset_s, rec.offset_s + rec.duration_s);
        let result = svc.transcribe(&rec.audio_ref, &guess.lang, window)?;
        rec.text = result.text();
        rec.segment_lids = Some(result.segments.iter().map(|s| s.lid.clone()).collect());
        rec.lid_pred = Some(guess.lang);
        rec.lid_prob = Some(guess.prob);
        rec.text_restored = None;
        Ok(Step::Continue)
    }

    fn restore(&self, rec: &mut UtteranceRecord) -> Step {
        let original = rec.text.clone();
        if original.trim().is_empty() {
            return Step::Continue;
        }
        let lang = rec.lang_target.clone();
        let prompt = match self.exemplars.prompt(&lang, &original) {
            Ok(p) => p,
            Err(e) => {
                log::debug!("{}: no restoration prompt: {e}", rec.id);
                rec.flags.insert(Flag::PncReverted);
                return Step::Continue;
            }
        };
        let svc = self.services();
        let mut reply = None;
        for attempt in 0..=self.cfg.pnc.retries {
            match svc.restore(&prompt, &lang) {
                Ok(r) => {
                    reply = Some(r);
                    break;
                }
                Err(e) => log::debug!("{}: restoration attempt {} failed: {e}", rec.id, attempt + 1),
            }
        }
        let Some(reply) = reply else {
            rec.flags.insert(Flag::PncReverted);
            return Step::Continue;
        };
        let outcome = self.gate.as_ref().expect("gate built").accept(&original, extract_restored(&reply));
        if outcome.reverted.is_some() {
            rec.flags.insert(Flag::PncReverted);
            rec.text_restored = None;
        } else {
            rec.text_restored = Some(outcome.chosen_text);
        }
        Step::Continue
    }

    fn translate(&self, rec: &mut UtteranceRecord) -> Result<Step, ClientError> {
        let target = self.cfg.target_lang.as_str();
        if rec.lang_target == target {
            return Ok(Step::Continue);
        }
        let src_text = rec.best_text().to_owned();
        if src_text.trim().is_empty() {
            rec.flags.insert(Flag::InvalidRecord);
            return Ok(Step::Drop(vec!["empty source text".into()]));
        }
        let svc = self.services();
        let tgt_text = svc.translate(&src_text, &rec.lang_target, target)?;
        let qe = svc.qe_score(&src_text, &tgt_text, &rec.lang_target, target)?;
        rec.src_lang = Some(rec.lang_target.clone());
        rec.src_text = Some(src_text);
        rec.tgt_text = Some(tgt_text);
        rec.tgt_lang = Some(target.to_owned());
        rec.qe_score = Some(qe.score);
        Ok(Step::Continue)
    }

    /// Stream `input` through the stages. Kept records go to `output`,
    /// dropped ones to `sidecar`, unparseable lines to `errors`.
    pub fn run<I>(
        &self,
        input: I,
        output: &mut dyn Write,
        sidecar: &mut dyn Write,
        errors: Option<&mut dyn Write>,
    ) -> Result<RunSummary, PipelineError>
    where
        I: IntoIterator<Item = Result<UtteranceRecord, LineError>>,
        I::IntoIter: Send,
    {
        let input = input.into_iter();
        let shards = self.cfg.shard_count;
        let per_shard = self.cfg.workers_per_shard();
        let check_duplicates = self.cfg.has(Stage::Validate);

        thread::scope(|scope| {
            let (done_tx, done_rx) = bounded::<(u64, Processed)>(self.cfg.queue_capacity);
            let (window_tx, window_rx) = bounded::<()>(self.cfg.max_in_flight_records);
            let mut shard_txs = Vec::with_capacity(shards);
            for _ in 0..shards {
                let (tx, rx) = bounded::<(u64, UtteranceRecord)>(self.cfg.queue_capacity);
                shard_txs.push(tx);
                for _ in 0..per_shard {
                    let rx: Receiver<(u64, UtteranceRecord)> = rx.clone();
                    let done = done_tx.clone();
                    scope.spawn(move || {
                        for (index, rec) in rx {
                            if done.send((index, Processed::Records(self.process(rec)))).is_err() {
                                break;
                            }
                        }
                    });
                }
            }
            let reader_done = done_tx;
            scope.spawn(move || read_loop(input, shards, check_duplicates, shard_txs, reader_done, window_tx));
            write_loop(done_rx, window_rx, output, sidecar, errors)
        })
    }
}

fn decide(rec: &mut UtteranceRecord, d: Result<FilterDecision, FilterError>) -> Step {
    match d {
        Ok(d) => {
            let drop = d.is_drop();
            rec.flags.extend(d.flags);
            if drop {
                Step::Drop(d.causes)
            } else {
                Step::Continue
            }
        }
        Err(e) => {
            rec.flags.insert(Flag::InvalidRecord);
            Step::Drop(vec![e.to_string()])
        }
    }
}

fn service_failure(rec: &mut UtteranceRecord, e: ClientError) -> Step {
    rec.flags.insert(Flag::ServiceError);
    Step::Drop(vec![e.to_string()])
}

fn read_loop<I>(
    input: I,
    shards: usize,
    check_duplicates: bool,
    shard_txs: Vec<Sender<(u64, UtteranceRecord)>>,
    done: Sender<(u64, Processed)>,
    window: Sender<()>,
) where
    I: Iterator<Item = Result<UtteranceRecord, LineError>>,
{
    let mut seen: HashSet<u64> = HashSet::new();
    for (index, item) in input.enumerate() {
        let index = index as u64;
        if window.send(()).is_err() {
            return;
        }
        let sent = match item {
            Err(e) => done.send((index, Processed::Malformed(e))).is_ok(),
            Ok(mut rec) => {
                if check_duplicates && !rec.id.is_empty() && !seen.insert(stable_hash(&rec.id)) {
                    rec.flags.insert(Flag::InvalidRecord);
                    let outcome = Outcome { record: rec, dropped: true, causes: vec!["duplicate id".into()] };
                    done.send((index, Processed::Records(vec![outcome]))).is_ok()
                } else {
                    let shard = shard_of(&rec.id, shards);
                    shard_txs[shard].send((index, rec)).is_ok()
                }
            }
        };
        if !sent {
            return;
        }
    }
}

fn io_err(what: &'static str) -> impl Fn(io::Error) -> PipelineError {
    move |source| PipelineError::Io { what, source }
}

fn write_loop(
    done: Receiver<(u64, Processed)>,
    window: Receiver<()>,
    output: &mut dyn Write,
    sidecar: &mut dyn Write,
    mut errors: Option<&mut dyn Write>,
) -> Result<RunSummary, PipelineError> {
    let mut output = BufWriter::new(output);
    let mut sidecar = BufWriter::new(sidecar);
    let mut summary = RunSummary::default();
    let mut pending: BTreeMap<u64, Processed> = BTreeMap::new();
    let mut next = 0u64;

    for (index, item) in done.iter() {
        pending.insert(index, item);
        while let Some(item) = pending.remove(&next) {
            next += 1;
            let _ = window.recv();
            summary.lines_read += 1;
            match item {
                Processed::Malformed(e) => {
                    summary.malformed += 1;
                    if let Some(w) = errors.as_deref_mut() {
                        let line = serde_json::to_string(&e).expect("line error serializes");
                        writeln!(w, "{line}").map_err(io_err("error log"))?;
                    }
                }
                Processed::Records(outcomes) => {
                    for o in outcomes {
                        account(&mut summary, &o);
                        if o.dropped {
                            let mut rec = o.record;
                            rec.extra.insert(
                                DROP_CAUSES_FIELD.into(),
                                Value::Array(o.causes.into_iter().map(Value::String).collect()),
                            );
                            write_record(&mut sidecar, &rec).map_err(io_err("sidecar"))?;
                        } else {
                            write_record(&mut output, &o.record).map_err(io_err("output"))?;
                        }
                    }
                }
            }
        }
    }
    output.flush().map_err(io_err("output"))?;
    sidecar.flush().map_err(io_err("sidecar"))?;
    if let Some(w) = errors {
        w.flush().map_err(io_err("error log"))?;
    }
    Ok(summary)
}

fn account(summary: &mut RunSummary, o: &Outcome) {
    let r = &o.record;
    let key = CorpusKey::of(r);
    summary.records_in += 1;
    summary.stats.add_unfiltered(key.clone(), r.duration_s);
    if o.dropped {
        summary.dropped += 1;
        if r.flags.contains(&Flag::ServiceError) {
            summary.service_errors += 1;
        }
        summary.stats.add_dropped(&r.flags, r.duration_s);
    } else {
        summary.kept += 1;
        summary.stats.add_filtered(key, r.duration_s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::{MockBackend, MockRates};
    use crate::manifest::read_manifest;
    use crate::segmentation::SegmentSpan;
    use std::sync::Arc;

    fn rec(i: usize) -> UtteranceRecord {
        UtteranceRecord::new(format!("r{i}"), format!("fr/a{i}.wav"), 0.0, 4.0, "fr")
            .with_text("bonjour tout le monde ici")
            .with_corpus("test")
            .with_lid("fr", 0.95)
    }

    fn filter_only() -> PipelineConfig {
        let mut cfg = PipelineConfig::with_stages(&[Stage::Validate, Stage::LidFilter, Stage::AsrFilter, Stage::Stats]);
        cfg.asr.phrase_lists_optional = true;
        cfg
    }

    fn run_to_vec(p: &Pipeline, input: Vec<UtteranceRecord>) -> (Vec<u8>, Vec<u8>, RunSummary) {
        let (mut out, mut side) = (Vec::new(), Vec::new());
        let s = p.run(input.into_iter().map(Ok), &mut out, &mut side, None).unwrap();
        (out, side, s)
    }

    #[test]
    fn empty_input() {
        let p = Pipeline::from_config(filter_only()).unwrap();
        let (out, side, s) = run_to_vec(&p, vec![]);
        assert!(out.is_empty() && side.is_empty());
        assert_eq!(s.records_in, 0);
    }

    #[test]
    fn clean_records_pass_in_order() {
        let p = Pipeline::from_config(filter_only()).unwrap();
        let input: Vec<_> = (0..500).map(rec).collect();
        for shards in [1, 3, 8] {
            let cfg = PipelineConfig { shard_count: shards, worker_count: 4, ..filter_only() };
            let p2 = Pipeline::from_config(cfg).unwrap();
            let (out, side, s) = run_to_vec(&p2, input.clone());
            assert!(side.is_empty());
            assert_eq!(s.kept, 500);
            let back: Vec<_> = read_manifest(&out[..]).map(Result::unwrap).collect();
            assert_eq!(back, input);
        }
        let _ = p;
    }

    #[test]
    fn drops_go_to_sidecar_with_causes() {
        let p = Pipeline::from_config(filter_only()).unwrap();
        let mut input: Vec<_> = (0..10).map(rec).collect();
        input[3].lid_prob = Some(0.5);
        input[7].text = "a a a a a a a".into();
        let (out, side, s) = run_to_vec(&p, input);
        assert_eq!((s.kept, s.dropped), (8, 2));
        let dropped: Vec<_> = read_manifest(&side[..]).map(Result::unwrap).collect();
        assert_eq!(dropped[0].id, "r3");
        assert!(dropped[0].flags.contains(&Flag::LidLowConf));
        assert!(dropped[0].extra.contains_key(DROP_CAUSES_FIELD));
        assert!(dropped[1].flags.contains(&Flag::HallucNgram));
        assert_eq!(read_manifest(&out[..]).count(), 8);
    }

    #[test]
    fn duplicate_ids_dropped_once() {
        let p = Pipeline::from_config(filter_only()).unwrap();
        let input = vec![rec(1), rec(2), rec(1)];
        let (_, side, s) = run_to_vec(&p, input);
        assert_eq!(s.dropped, 1);
        assert!(String::from_utf8(side).unwrap().contains("duplicate id"));
    }

    #[test]
    fn malformed_lines_are_logged() {
        let p = Pipeline::from_config(filter_only()).unwrap();
        let text = format!(
            "{}\nnot json\n{}\n",
            crate::manifest::to_line(&rec(0)),
            crate::manifest::to_line(&rec(1))
        );
        let (mut out, mut side, mut errs) = (Vec::new(), Vec::new(), Vec::new());
        let s = p.run(read_manifest(text.as_bytes()), &mut out, &mut side, Some(&mut errs)).unwrap();
        assert_eq!((s.lines_read, s.malformed, s.kept), (3, 1, 2));
        assert!(String::from_utf8(errs).unwrap().contains("\"line\":2"));
    }

    #[test]
    fn segmentation_splits_records() {
        let cfg = PipelineConfig::with_stages(&[Stage::Validate, Stage::Segment]);
        let p = Pipeline::from_config(cfg).unwrap();
        let mut r = rec(0);
        r.duration_s = 100.0;
        r.spans = Some(vec![
            SegmentSpan::new(1.0, 10.0).with_text("one"),
            SegmentSpan::new(50.0, 60.0).with_text("two"),
        ]);
        let out = p.process(r);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].record.id, "r0#0");
        assert_eq!(out[1].record.text, "two");
        assert!((out[1].record.offset_s - 49.6).abs() < 1e-9);
        assert!(out.iter().all(|o| !o.dropped && o.record.spans.is_none()));
    }

    #[test]
    fn service_failure_goes_to_sidecar() {
        let backend = MockBackend::new(1).with_rates(MockRates::clean()).failing("fr/a2.wav");
        let cfg = PipelineConfig::with_stages(&[Stage::Validate, Stage::Transcribe, Stage::LidFilter]);
        let p = Pipeline::with_services(cfg, Services::new(Arc::new(backend))).unwrap();
        let (_, _, s) = run_to_vec(&p, (0..5).map(rec).collect());
        assert_eq!((s.kept, s.service_errors), (4, 1));
        assert!((s.service_error_rate() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn writer_failure_stops_the_run() {
        struct Broken;
        impl Write for Broken {
            fn write(&mut self, _: &[u8]) -> io::Result<usize> {
                Err(io::Error::other("disk full"))
            }
            fn flush(&mut self) -> io::Result<()> {
                Ok(())
            }
        }
        let cfg = PipelineConfig { queue_capacity: 2, max_in_flight_records: 4, ..filter_only() };
        let p = Pipeline::from_config(cfg).unwrap();
        let input: Vec<_> = (0..100_000).map(rec).collect();
        let mut side = Vec::new();
        let r = p.run(input.into_iter().map(Ok), &mut Broken, &mut side, None);
        assert!(matches!(r, Err(PipelineError::Io { what: "output", .. })));
    }
}
