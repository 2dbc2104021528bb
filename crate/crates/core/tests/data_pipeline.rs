use std::fs;
use std::path::PathBuf;

use prnet::commands::{convert, synth, ConvertArgs, SynthArgs, CONVERT_REPORT_FILE, RUN_MANIFEST_FILE};
use prnet::data::{
    load_dataset, load_mask_png, save_dataset, split_dataset, synth_generate, LabelMap, LabelPolicy, Split,
};
use prnet::Error;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/labelme")
}

fn golden(name: &str) -> Vec<u8> {
    load_mask_png(&fixtures().join("golden").join(format!("{name}.png")))
        .unwrap()
        .2
}

#[test]
fn fixture_corpus_matches_golden_masks() {
    let out = tempfile::tempdir().unwrap();
    let mut args = ConvertArgs::new(fixtures().join("annotations"), fixtures().join("images"), out.path());
    args.test_fraction = 0.0;
    let summary = convert(&args).unwrap();
    assert_eq!(summary.converted, ["basic", "clamped", "legacy", "pentagram"]);
    assert!(summary.rejected.is_empty());
    // clamped.json holds two degenerate polygons.
    assert_eq!(summary.warnings.len(), 2);

    let (labels, samples) = load_dataset(out.path()).unwrap();
    assert_eq!(labels, LabelMap::default());
    for s in &samples {
        assert_eq!(s.mask, golden(&s.id), "mask of {}", s.id);
    }
    let report = fs::read_to_string(out.path().join(CONVERT_REPORT_FILE)).unwrap();
    assert_eq!(report.lines().filter(|l| l.starts_with("ok\t")).count(), 4);
    assert_eq!(report.lines().filter(|l| l.starts_with("warn\t")).count(), 2);
    assert!(out.path().join(RUN_MANIFEST_FILE).is_file());
}

#[test]
fn unknown_label_is_rejected_and_named() {
    let out = tempfile::tempdir().unwrap();
    let args = ConvertArgs::new(fixtures().join("unknown"), fixtures().join("images"), out.path());
    let err = convert(&args).unwrap_err();
    assert!(matches!(err, Error::UnknownLabel { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
    let msg = err.to_string();
    assert!(msg.contains("stray.json") && msg.contains("Calculus"), "{msg}");
    let report = fs::read_to_string(out.path().join(CONVERT_REPORT_FILE)).unwrap();
    assert!(
        report.starts_with("reject\t") && report.contains("stray.json"),
        "{report}"
    );
}

#[test]
fn skip_policy_drops_unknown_shapes() {
    let out = tempfile::tempdir().unwrap();
    let mut args = ConvertArgs::new(fixtures().join("unknown"), fixtures().join("images"), out.path());
    args.policy = LabelPolicy::Skip;
    args.test_fraction = 0.0;
    convert(&args).unwrap();
    let (_, samples) = load_dataset(out.path()).unwrap();
    assert_eq!(samples[0].mask, golden("stray_skip"));
}

#[test]
fn empty_annotation_dir_is_an_error() {
    let empty = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let err = convert(&ConvertArgs::new(empty.path(), empty.path(), out.path())).unwrap_err();
    assert!(matches!(err, Error::Dataset(_)), "{err}");
}

#[test]
fn missing_image_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let no_images = tempfile::tempdir().unwrap();
    let mut args = ConvertArgs::new(fixtures().join("annotations"), no_images.path(), out.path());
    args.test_fraction = 0.0;
    let err = convert(&args).unwrap_err();
    assert!(err.to_string().contains("4 of 4"), "{err}");
}

#[test]
fn resize_option_applies_to_image_and_mask() {
    let out = tempfile::tempdir().unwrap();
    let mut args = ConvertArgs::new(fixtures().join("annotations"), fixtures().join("images"), out.path());
    args.size = Some(16);
    convert(&args).unwrap();
    let (_, samples) = load_dataset(out.path()).unwrap();
    assert!(samples.iter().all(|s| (s.height, s.width) == (16, 16)));
}

#[test]
fn eighty_twenty_split_of_ten() {
    let (train, test) = split_dataset((0..10).collect::<Vec<_>>(), 0.8, 42).unwrap();
    assert_eq!((train.len(), test.len()), (8, 2));
    let mut all: Vec<_> = train.iter().chain(&test).copied().collect();
    all.sort();
    assert_eq!(all, (0..10).collect::<Vec<_>>());

    let dir = tempfile::tempdir().unwrap();
    let mut a = SynthArgs::new(10, 16, 3, dir.path());
    a.test_fraction = 0.2;
    let samples = synth(&a).unwrap();
    assert_eq!(samples.iter().filter(|s| s.split == Split::Test).count(), 2);
}

#[test]
fn synth_is_reproducible_file_for_file() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(&SynthArgs::new(4, 32, 11, a.path())).unwrap();
    synth(&SynthArgs::new(4, 32, 11, b.path())).unwrap();
    for sub in ["images", "masks"] {
        for e in fs::read_dir(a.path().join(sub)).unwrap() {
            let p = e.unwrap().path();
            let q = b.path().join(sub).join(p.file_name().unwrap());
            assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap(), "{}", p.display());
        }
    }
    for f in ["manifest.tsv", "labels.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn dataset_round_trip_is_lossless_at_eight_bits() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth_generate(3, 24, 16, 5, 10).unwrap();
    save_dataset(dir.path(), &samples, &LabelMap::default()).unwrap();
    let (_, back) = load_dataset(dir.path()).unwrap();
    assert_eq!(back, samples);
}
