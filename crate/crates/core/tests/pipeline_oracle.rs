use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use granary_core::ast_filters::TextLidConfig;
use granary_core::clients::{MockBackend, MockRates, Services};
use granary_core::config::{PipelineConfig, Stage};
use granary_core::decision::Flag;
use granary_core::lang;
use granary_core::manifest::{read_manifest, to_line, UtteranceRecord};
use granary_core::pipeline::{Pipeline, DROP_CAUSES_FIELD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn preset(stages: &[Stage]) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(&repo().join("configs/full.toml")).unwrap();
    cfg.stages = stages.to_vec();
    cfg
}

fn run(p: &Pipeline, input: &[UtteranceRecord]) -> (Vec<UtteranceRecord>, Vec<UtteranceRecord>, Vec<u8>, Vec<u8>) {
    let (mut out, mut side) = (Vec::new(), Vec::new());
    p.run(input.iter().cloned().map(Ok), &mut out, &mut side, None).unwrap();
    let parse = |b: &[u8]| read_manifest(b).map(Result::unwrap).collect::<Vec<_>>();
    (parse(&out), parse(&side), out, side)
}

// Independent oracles over the shipped data files.

fn load_char_file(path: &Path) -> HashSet<char> {
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

struct Oracle {
    charset: HashSet<char>,
    phrases: Vec<(String, Vec<String>)>,
    hist: Vec<(String, HashSet<char>)>,
    lid_table: Vec<(String, String, f64)>,
}

impl Oracle {
    fn load(lid_table: Vec<(String, String, f64)>) -> Self {
        let data = repo().join("data");
        let mut phrases = Vec::new();
        let mut hist = Vec::new();
        for code in lang::codes() {
            let list = fs::read_to_string(data.join(format!("phrases/{code}.txt"))).unwrap();
            let list = list.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
            phrases.push((code.to_owned(), list.map(str::to_lowercase).collect()));
            hist.push((code.to_owned(), load_char_file(&data.join(format!("histograms/{code}.hist")))));
        }
        Self { charset: load_char_file(&data.join("charset.txt")), phrases, hist, lid_table }
    }

    fn validate(r: &UtteranceRecord) -> BTreeSet<Flag> {
        let ok = !r.id.is_empty() && r.duration_s > 0.0 && r.offset_s >= 0.0 && lang::is_supported(&r.lang_target);
        if ok { BTreeSet::new() } else { BTreeSet::from([Flag::InvalidRecord]) }
    }

    fn lid(r: &UtteranceRecord) -> BTreeSet<Flag> {
        let mut f = BTreeSet::new();
        if r.lid_pred.as_deref() != Some(r.lang_target.as_str()) {
            f.insert(Flag::LidMismatch);
        }
        if r.lid_prob.unwrap() < 0.8 {
            f.insert(Flag::LidLowConf);
        }
        if let Some(s) = &r.segment_lids {
            if s.iter().any(|l| l != &s[0]) {
                f.insert(Flag::LidMulti);
            }
        }
        f
    }

    fn asr(&self, r: &UtteranceRecord) -> BTreeSet<Flag> {
        let mut f = BTreeSet::new();
        let words: Vec<&str> = r.text.split(' ').filter(|w| !w.is_empty()).collect();
        let run_of = |n: usize| {
            (0..words.len()).any(|i| {
                let need = if n == 1 { 5 } else { 4 };
                i + need * n <= words.len() && (1..need).all(|k| words[i + k * n..i + (k + 1) * n] == words[i..i + n])
            })
        };
        if (1..=5).any(run_of) {
            f.insert(Flag::HallucNgram);
        }
        if words.iter().any(|w| w.chars().count() > 40) {
            f.insert(Flag::HallucLongword);
        }
        let lower = r.text.to_lowercase();
        let list = &self.phrases.iter().find(|(l, _)| *l == r.lang_target).unwrap().1;
        if list.iter().any(|p| lower.contains(p.as_str())) {
            f.insert(Flag::HallucPhrase);
        }
        let rate = r.text.chars().count() as f64 / r.duration_s;
        if rate < 1.0 {
            f.insert(Flag::CharRateLow);
        }
        if rate > 30.0 {
            f.insert(Flag::CharRateHigh);
        }
        if r.text.chars().any(|c| !self.charset.contains(&c)) {
            f.insert(Flag::Charset);
        }
        f
    }

    fn ast(&self, r: &UtteranceRecord) -> BTreeSet<Flag> {
        let mut f = BTreeSet::new();
        let (src, tgt) = (r.src_text.as_deref().unwrap(), r.tgt_text.as_deref().unwrap());
        let (a, b) = (src.split_whitespace().count(), tgt.split_whitespace().count());
        if a == 0 || b == 0 || a > 250 || b > 250 || (a.max(b) as f64) > 9.0 * a.min(b) as f64 {
            f.insert(Flag::AstLenRatio);
        }
        let share = |text: &str, lang: &str| {
            let h = &self.hist.iter().find(|(l, _)| l == lang).unwrap().1;
            let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
            if chars.is_empty() {
                1.0
            } else {
                chars.iter().filter(|c| h.contains(c)).count() as f64 / chars.len() as f64
            }
        };
        if share(src, r.src_lang.as_deref().unwrap()) < 0.8 || share(tgt, "en") < 0.8 {
            f.insert(Flag::AstHistogram);
        }
        let (_, l, p) = self.lid_table.iter().find(|(t, _, _)| t == tgt).unwrap();
        if l != "en" || *p < 0.5 {
            f.insert(Flag::AstLid);
        }
        if r.qe_score.unwrap() < 0.5 {
            f.insert(Flag::AstQe);
        }
        f
    }

    /// Flags of the first stage that drops the record.
    fn expected(&self, r: &UtteranceRecord) -> BTreeSet<Flag> {
        let v = Self::validate(r);
        if !v.is_empty() {
            return v;
        }
        let l = Self::lid(r);
        if !l.is_empty() {
            return l;
        }
        let a = self.asr(r);
        if !a.is_empty() {
            return a;
        }
        self.ast(r)
    }
}

const CLEAN: [(&str, &str); 4] = [
    ("fr", "nous avons parlé du projet avec le conseil de la ville ce matin"),
    ("de", "wir haben heute mit dem rat der stadt über das neue projekt gesprochen"),
    ("pl", "rozmawialiśmy dzisiaj z radą miasta o nowym projekcie szkoły"),
    ("es", "hablamos hoy con el consejo de la ciudad sobre el nuevo proyecto"),
];
const TRANSLATION: &str = "We talked with the city council about the new project today.";
const GERMANIC: &str = "Über schöne größere Häuser müssen Mädchen fröhlich grüßen.";

fn clean(i: usize) -> UtteranceRecord {
    let (lang, text) = CLEAN[i % CLEAN.len()];
    let mut r = UtteranceRecord::new(format!("utt{i:03}"), format!("corpus/{lang}/clip{i}.flac"), 1.5 * i as f64, 6.0, lang)
        .with_text(text)
        .with_corpus("fixture")
        .with_lid(lang, 0.95);
    r.segment_lids = Some(vec![lang.into(), lang.into()]);
    r.src_text = Some(text.into());
    r.src_lang = Some(lang.into());
    r.tgt_text = Some(TRANSLATION.into());
    r.tgt_lang = Some("en".into());
    r.qe_score = Some(0.9);
    r.extra.insert("speaker".into(), serde_json::json!(i % 7));
    r
}

fn defective(i: usize, kind: usize) -> UtteranceRecord {
    let mut r = clean(i);
    match kind {
        0 => r.duration_s = 0.0,
        1 => r.lang_target = "xx".into(),
        2 => r.lid_pred = Some(if r.lang_target == "de" { "nl".into() } else { "de".into() }),
        3 => {
            r.lid_prob = Some(0.5);
            r.segment_lids = Some(vec![r.lang_target.clone(), "en".into()]);
        }
        4 => r.text.push_str(" ja ja ja ja ja"),
        5 => r.text.push_str(&format!(" {}", "überlang".repeat(6))),
        6 => r.text.push_str(" thank you very much"),
        7 => {
            r.duration_s = 1.0;
            r.text.push_str(" das das das das das");
        }
        8 => r.text.push_str(" 中文"),
        9 => match i % 3 {
            0 => r.qe_score = Some(0.2),
            1 => r.tgt_text = Some("Yes.".into()),
            _ => {
                r.tgt_text = Some(GERMANIC.into());
                r.qe_score = Some(0.3);
            }
        },
        _ => unreachable!(),
    }
    r
}

fn table_file(dir: &Path) -> (PathBuf, Vec<(String, String, f64)>) {
    let table = vec![
        (TRANSLATION.to_owned(), "en".to_owned(), 0.97),
        ("Yes.".to_owned(), "en".to_owned(), 0.4),
        (GERMANIC.to_owned(), "de".to_owned(), 0.93),
    ];
    let body: String = table.iter().map(|(t, l, p)| format!("{t}\t{l}\t{p}\n")).collect();
    let path = dir.join("lid_table.tsv");
    fs::write(&path, body).unwrap();
    (path, table)
}

#[test]
fn forty_of_hundred_go_to_sidecar_with_predicted_flags() {
    let mut input: Vec<UtteranceRecord> = (0..60).map(clean).collect();
    input.extend((0..40).map(|k| defective(60 + k, k % 10)));
    input.shuffle(&mut ChaCha8Rng::seed_from_u64(11));

    let dir = tempfile::tempdir().unwrap();
    let (table_path, table) = table_file(dir.path());
    let mut cfg = preset(&[Stage::Validate, Stage::LidFilter, Stage::AsrFilter, Stage::AstFilter, Stage::Stats]);
    cfg.ast.text_lid = TextLidConfig::Table { path: table_path };
    cfg.shard_count = 3;
    cfg.worker_count = 3;
    let pipeline = Pipeline::from_config(cfg).unwrap();
    let oracle = Oracle::load(table);

    let (out, side, _, _) = run(&pipeline, &input);
    assert_eq!(side.len(), 40);
    assert_eq!(out.len(), 60);

    let planted: Vec<&UtteranceRecord> = input.iter().filter(|r| r.id.as_str() >= "utt060").collect();
    assert_eq!(side.iter().map(|r| &r.id).collect::<Vec<_>>(), planted.iter().map(|r| &r.id).collect::<Vec<_>>());
    for (got, orig) in side.iter().zip(&planted) {
        let expected = oracle.expected(orig);
        assert!(!expected.is_empty(), "{} should fail a filter", orig.id);
        assert_eq!(got.flags, expected, "{}: {:?}", orig.id, got.extra.get(DROP_CAUSES_FIELD));
    }
    for r in &out {
        assert!(oracle.expected(r).is_empty(), "{} kept", r.id);
    }
    let combined: BTreeSet<_> = side.iter().map(|r| r.flags.len()).collect();
    assert!(combined.contains(&2), "fixture includes multi-flag drops");
}

#[test]
fn all_clean_manifest_passes_unchanged() {
    let input: Vec<UtteranceRecord> = (0..40).map(clean).collect();
    let dir = tempfile::tempdir().unwrap();
    let (table_path, _) = table_file(dir.path());
    let mut cfg = preset(&[Stage::Validate, Stage::LidFilter, Stage::AsrFilter, Stage::AstFilter, Stage::Stats]);
    cfg.ast.text_lid = TextLidConfig::Table { path: table_path };
    let (out, side, _, _) = run(&Pipeline::from_config(cfg).unwrap(), &input);
    assert!(side.is_empty());
    assert_eq!(out, input);
}

fn synthetic(n: usize, seed: u64) -> Vec<UtteranceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<&str> = lang::codes().collect();
    (0..n)
        .map(|i| {
            let lang = *codes.choose(&mut rng).unwrap();
            let dur = 2.0 + (i % 29) as f64;
            UtteranceRecord::new(format!("s{i}"), format!("yodas/{lang}/{i}.flac"), 0.0, dur, lang).with_corpus("yodas")
        })
        .collect()
}

#[test]
fn mock_runs_are_bit_identical() {
    let input = synthetic(100, 3);
    let mut outputs = Vec::new();
    for shards in [1, 4] {
        let mut cfg = preset(&Stage::ALL);
        cfg.seed = 7;
        cfg.shard_count = shards;
        cfg.worker_count = shards;
        let p = Pipeline::from_config(cfg).unwrap();
        for _ in 0..2 {
            let (out, side, ob, sb) = run(&p, &input);
            assert_eq!(out.len() + side.len(), 100);
            outputs.push((ob, sb));
        }
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn clean_mock_services_keep_everything() {
    let input = synthetic(300, 5);
    let cfg = preset(&Stage::ALL);
    let services = Services::new(Arc::new(MockBackend::new(1).with_rates(MockRates::clean())));
    let p = Pipeline::with_services(cfg, services).unwrap();
    let (out, side, _, _) = run(&p, &input);
    let causes: Vec<_> = side.iter().map(|r| (r.id.clone(), r.lang_target.clone(), r.flags.clone(), r.extra.get(DROP_CAUSES_FIELD).cloned())).collect();
    assert!(side.is_empty(), "{causes:#?}");
    assert_eq!(out.iter().map(|r| &r.id).collect::<Vec<_>>(), input.iter().map(|r| &r.id).collect::<Vec<_>>());
    for (o, i) in out.iter().zip(&input) {
        assert_eq!((o.audio_ref.as_str(), o.duration_s, o.corpus.as_str()), (i.audio_ref.as_str(), i.duration_s, i.corpus.as_str()));
        assert!(!o.text.is_empty() && o.lid_pred.as_deref() == Some(i.lang_target.as_str()));
        assert!(o.text_restored.is_some());
        assert_eq!(o.tgt_text.is_some(), i.lang_target != "en");
    }
}

#[test]
fn sidecar_lines_reparse_and_conserve() {
    let input = synthetic(200, 9);
    let p = Pipeline::from_config(preset(&Stage::ALL)).unwrap();
    let (out, side, _, sb) = run(&p, &input);
    assert_eq!(out.len() + side.len(), 200);
    let ids: BTreeSet<_> = out.iter().chain(&side).map(|r| r.id.clone()).collect();
    assert_eq!(ids, input.iter().map(|r| r.id.clone()).collect());
    assert!(side.iter().all(|r| r.flags.iter().any(|f| !f.is_informational())));
    assert!(String::from_utf8(sb).unwrap().lines().all(|l| l.contains(DROP_CAUSES_FIELD)));
    let line = to_line(&input[0]);
    assert!(!line.contains("null"));
}
