//! Fixture corpus: valid files parse, each invalid file fails with the kind in its name.

use std::fs;
use std::path::{Path, PathBuf};

use thyme_core::dataio::{parse_annotations, parse_annotations_str, write_annotations_string};
use thyme_core::features::{load_precomputed, parse_precomputed_str, write_precomputed_string};
use thyme_core::synth::{synth_dataset, synth_vocab};

const FIXTURE_D0: usize = 2;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    out.sort();
    assert!(!out.is_empty(), "no fixtures in {}", dir.display());
    out
}

/// `self_edge--variant.jsonl` names the kind `self_edge`.
fn expected_kind(path: &Path) -> String {
    let stem = path.file_stem().unwrap().to_str().unwrap();
    stem.split("--").next().unwrap().to_string()
}

#[test]
fn valid_annotations_parse() {
    for path in files(&fixtures().join("annotations/valid")) {
        let (records, vocab) = parse_annotations(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!records.is_empty());
        let text = write_annotations_string(&records, &vocab).unwrap();
        assert_eq!(parse_annotations_str(&text).unwrap(), (records, vocab));
    }
}

#[test]
fn invalid_annotations_fail_with_named_kind() {
    for path in files(&fixtures().join("annotations/invalid")) {
        let err = parse_annotations(&path).expect_err(&path.display().to_string());
        assert_eq!(err.kind(), expected_kind(&path), "{}: {err}", path.display());
    }
}

#[test]
fn valid_features_parse() {
    for path in files(&fixtures().join("features/valid")) {
        let video = load_precomputed(&path, FIXTURE_D0).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let text = write_precomputed_string(&video);
        assert_eq!(parse_precomputed_str(&text, FIXTURE_D0).unwrap(), video);
    }
}

#[test]
fn invalid_features_fail_with_named_kind() {
    for path in files(&fixtures().join("features/invalid")) {
        let err = load_precomputed(&path, FIXTURE_D0).expect_err(&path.display().to_string());
        assert_eq!(err.kind(), expected_kind(&path), "{}: {err}", path.display());
    }
}

#[test]
fn synthetic_output_passes_the_parsers() {
    let videos = synth_dataset(11, 3, 4, 4, 6).unwrap();
    let records: Vec<_> = videos.iter().flat_map(|v| v.annotations.clone()).collect();
    let text = write_annotations_string(&records, &synth_vocab()).unwrap();
    let (parsed, vocab) = parse_annotations_str(&text).unwrap();
    assert_eq!(parsed, records);
    assert_eq!(vocab, synth_vocab());
    for v in &videos {
        let text = write_precomputed_string(&v.features);
        assert_eq!(parse_precomputed_str(&text, 6).unwrap(), v.features);
    }
}
