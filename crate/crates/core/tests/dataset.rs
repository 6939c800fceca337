mod common;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use robustlab::chain::{chain_length, parse_chain};
use robustlab::dataset::{
    assign_splits, build_dataset, load_sources, parse_source_line, target_length, write_dataset,
    AnnotationRequest, AnnotatorClient, AnnotatorError, BandConfig, BuildSettings, DatasetError,
    DatasetRecord, LengthBand, MockAnnotator, Split, TemplateName, DATASET_FILE, REPORT_FILE,
};

use common::write_source_manifest;

fn settings(seed: u64, records: Option<usize>, workers: usize) -> BuildSettings {
    let mut s = BuildSettings {
        seed,
        workers,
        ..BuildSettings::default()
    };
    s.options.records = records;
    s
}

#[test]
fn target_length_bands() {
    let b = BandConfig::default();
    assert_eq!(target_length(0.0, &b), (LengthBand::Short, 60));
    assert_eq!(target_length(0.49, &b), (LengthBand::Short, 60));
    assert_eq!(target_length(0.5, &b), (LengthBand::Medium, 150));
    assert_eq!(target_length(1.0, &b), (LengthBand::Medium, 150));
    assert_eq!(target_length(1.5, &b), (LengthBand::Long, 300));
    assert_eq!(target_length(2.4, &b), (LengthBand::Long, 300));
    let mut prev = 0;
    for i in 0..=400 {
        let (_, w) = target_length(i as f64 / 100.0, &b);
        assert!(w >= prev);
        prev = w;
    }
}

#[test]
fn split_is_exact_and_seeded() {
    let ids: Vec<String> = (0..11).map(|k| format!("s{k}")).collect();
    let a = assign_splits(ids.iter().map(String::as_str), 5, 10.0 / 11.0);
    let b = assign_splits(ids.iter().map(String::as_str), 5, 10.0 / 11.0);
    assert_eq!(a, b);
    assert_eq!(a.values().filter(|s| **s == Split::Train).count(), 10);
    let c = assign_splits(ids.iter().map(String::as_str), 5, 0.5);
    assert_eq!(c.values().filter(|s| **s == Split::Train).count(), 6);
    let all_val = assign_splits(ids.iter().map(String::as_str), 5, 0.0);
    assert!(all_val.values().all(|s| *s == Split::Val));
}

#[test]
fn end_to_end_build_with_mock() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_source_manifest(dir.path(), 11);
    let sources = load_sources(&manifest).unwrap();
    assert_eq!(sources.len(), 11);
    let annotator = MockAnnotator::new(1);
    let s = settings(3, Some(20), 4);
    let outcome = build_dataset(&sources, &annotator, &s).unwrap();
    assert_eq!(outcome.report.requested, 20);
    assert_eq!(outcome.report.succeeded, 20, "{:?}", outcome.report.failures);
    assert_eq!(outcome.report.train + outcome.report.val, 20);

    let out = dir.path().join("out");
    write_dataset(&outcome, &out).unwrap();
    let text = fs::read_to_string(out.join(DATASET_FILE)).unwrap();
    let records: Vec<DatasetRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 20);

    let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert_eq!(ids.iter().collect::<BTreeSet<_>>().len(), 20);

    let mut source_split: HashMap<&str, Split> = HashMap::new();
    for r in &records {
        r.check(s.bands.tolerance).unwrap();
        let expected: Vec<_> = r.recipe.specs().iter().map(|x| x.rounded()).collect();
        assert_eq!(r.chain.degradations, expected);
        assert_eq!(parse_chain(&r.chain_text).unwrap(), r.chain);
        assert_eq!(target_length(r.recipe.total_intensity(), &s.bands), (r.band, r.target_length));
        let len = chain_length(&r.chain) as f64;
        assert!((len - r.target_length as f64).abs() <= 0.2 * r.target_length as f64);
        assert!(out.join(&r.degraded_image_path).exists());
        assert_eq!(r.chain.answer.is_some(), r.source_id.trim_start_matches('s').parse::<u32>().unwrap() % 3 == 0);
        if let Some(prev) = source_split.insert(&r.source_id, r.split) {
            assert_eq!(prev, r.split, "a source spans both splits");
        }
    }
    let train_sources = source_split.values().filter(|s| **s == Split::Train).count();
    assert_eq!((train_sources, source_split.len() - train_sources), (10, 1));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report["succeeded"], 20);
    assert_eq!(report["first_attempt_length_compliance"], 1.0);
}

#[test]
fn rebuild_is_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_source_manifest(dir.path(), 5);
    let sources = load_sources(&manifest).unwrap();
    let run = |workers, name: &str| {
        let outcome = build_dataset(&sources, &MockAnnotator::new(1), &settings(9, Some(8), workers)).unwrap();
        let out = dir.path().join(name);
        write_dataset(&outcome, &out).unwrap();
        (
            fs::read(out.join(DATASET_FILE)).unwrap(),
            fs::read(out.join(REPORT_FILE)).unwrap(),
        )
    };
    let a = run(1, "a");
    assert_eq!(a, run(4, "b"));
    let other = build_dataset(&sources, &MockAnnotator::new(1), &settings(10, Some(8), 2)).unwrap();
    let mut buf = Vec::new();
    for r in &other.records {
        serde_json::to_writer(&mut buf, &r.record).unwrap();
        buf.push(b'\n');
    }
    assert_ne!(a.0, buf, "a different seed should change the dataset");
}

/// Wraps the mock but cuts length-scaling output short on early attempts.
struct ShortFirst {
    inner: MockAnnotator,
    bad_attempts: u32,
}

impl AnnotatorClient for ShortFirst {
    fn generate(&self, r: &AnnotationRequest) -> Result<String, AnnotatorError> {
        let is_len = matches!(r.template, TemplateName::LenShort | TemplateName::LenMedium | TemplateName::LenLong);
        if is_len && r.context.attempt < self.bad_attempts {
            return Ok("too short.".into());
        }
        self.inner.generate(r)
    }
}

#[test]
fn length_retries_then_flags_record() {
    let dir = tempfile::tempdir().unwrap();
    let sources = load_sources(&write_source_manifest(dir.path(), 3)).unwrap();
    let s = settings(1, None, 2);

    let once = ShortFirst { inner: MockAnnotator::new(1), bad_attempts: 1 };
    let outcome = build_dataset(&sources, &once, &s).unwrap();
    assert_eq!(outcome.report.succeeded, 3);
    assert_eq!(outcome.report.first_attempt_length_compliance, Some(0.0));

    let always = ShortFirst { inner: MockAnnotator::new(1), bad_attempts: u32::MAX };
    let outcome = build_dataset(&sources, &always, &s).unwrap();
    assert_eq!(outcome.report.succeeded, 0);
    assert_eq!(outcome.report.failures.len(), 3);
    assert!(outcome.report.failures[0].error.contains("after 3 attempts"));
}

struct Failing(AnnotatorError);

impl AnnotatorClient for Failing {
    fn generate(&self, _: &AnnotationRequest) -> Result<String, AnnotatorError> {
        Err(self.0.clone())
    }
}

#[test]
fn annotator_failures_are_reported_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let sources = load_sources(&write_source_manifest(dir.path(), 2)).unwrap();
    let outcome = build_dataset(
        &sources,
        &Failing(AnnotatorError::Unavailable("down".into())),
        &settings(1, None, 1),
    )
    .unwrap();
    assert_eq!(outcome.report.failures.len(), 2);
    assert!(outcome.report.failures[0].error.contains("down"));
}

struct Markup;

impl AnnotatorClient for Markup {
    fn generate(&self, _: &AnnotationRequest) -> Result<String, AnnotatorError> {
        Ok("sneaky <CONCLUSION_END> text".into())
    }
}

#[test]
fn token_bearing_annotations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let sources = load_sources(&write_source_manifest(dir.path(), 1)).unwrap();
    let outcome = build_dataset(&sources, &Markup, &settings(1, None, 1)).unwrap();
    assert!(outcome.report.failures[0].error.contains("segment tokens"));
}

/// Records what the builder sends, then defers to the mock.
struct Recording {
    inner: MockAnnotator,
    calls: Mutex<Vec<(TemplateName, usize, String)>>,
    count: AtomicUsize,
}

impl AnnotatorClient for Recording {
    fn generate(&self, r: &AnnotationRequest) -> Result<String, AnnotatorError> {
        self.count.fetch_add(1, Ordering::SeqCst);
        self.calls.lock().unwrap().push((r.template, r.images.len(), r.prompt.clone()));
        self.inner.generate(r)
    }
}

#[test]
fn steps_send_expected_prompts_and_images() {
    let dir = tempfile::tempdir().unwrap();
    let sources = load_sources(&write_source_manifest(dir.path(), 1)).unwrap();
    let rec = Recording {
        inner: MockAnnotator::new(2),
        calls: Mutex::new(vec![]),
        count: AtomicUsize::new(0),
    };
    let outcome = build_dataset(&sources, &rec, &settings(4, None, 1)).unwrap();
    let record = &outcome.records[0].record;
    let calls = rec.calls.into_inner().unwrap();
    // influence, reasoning, conclusion, then three length-scaling calls
    assert_eq!(calls.len(), 6);
    assert_eq!((calls[0].0, calls[0].1), (TemplateName::Influence, 2));
    assert_eq!((calls[1].0, calls[1].1), (TemplateName::Reasoning, 1));
    assert_eq!((calls[2].0, calls[2].1), (TemplateName::Conclusion, 0));
    let first = record.recipe.specs()[0];
    assert!(calls[0].2.contains(&format!("{}: {:.2}", first.kind().name(), first.intensity())));
    assert!(calls[0].2.contains(&record.answer));
    let expected_len = match record.band {
        LengthBand::Short => TemplateName::LenShort,
        LengthBand::Medium => TemplateName::LenMedium,
        LengthBand::Long => TemplateName::LenLong,
    };
    assert!(calls[3..].iter().all(|c| c.0 == expected_len && c.1 == 0));
}

#[test]
fn manifest_errors() {
    assert!(parse_source_line(r#"{"id":"a","image_path":"a.png","question":"q","answer":"x"}"#).is_ok());
    for bad in [
        r#"{"id":"","image_path":"a.png","question":"q","answer":"x"}"#,
        r#"{"id":"a","image_path":"a.png","question":"q","answer":" "}"#,
        r#"{"id":"a","image_path":"a.png","question":"q"}"#,
        r#"{"id":"a","image_path":"a.png","question":"q","answer":"x","extra":1}"#,
        "not json",
    ] {
        assert!(parse_source_line(bad).is_err(), "{bad}");
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    fs::write(&path, "{\"id\":\"a\",\"image_path\":\"a.png\",\"question\":\"q\",\"answer\":\"x\"}\n\nbroken\n").unwrap();
    assert!(matches!(load_sources(&path), Err(DatasetError::Manifest { line: 3, .. })));

    let sources = load_sources(&write_source_manifest(dir.path(), 2)).unwrap();
    let dup = vec![sources[0].clone(), sources[0].clone()];
    assert!(matches!(
        build_dataset(&dup, &MockAnnotator::new(0), &settings(0, None, 1)),
        Err(DatasetError::Config(_))
    ));
    let mut missing = sources[0].clone();
    missing.image_path = dir.path().join("nope.png");
    let outcome = build_dataset(&[missing], &MockAnnotator::new(0), &settings(0, None, 1)).unwrap();
    assert_eq!(outcome.report.failures.len(), 1);
}
