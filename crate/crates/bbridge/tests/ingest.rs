use std::fs;
use std::path::Path;

use bbridge::ingest::{ingest_image_pairs, IngestKind};
use bbridge_core::ConditionPayload;

fn pgm(path: &Path, w: usize, h: usize, px: &[u8]) {
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(px);
    fs::write(path, bytes).unwrap();
}

fn dirs() -> (tempfile::TempDir, [std::path::PathBuf; 3]) {
    let root = tempfile::tempdir().unwrap();
    let d = ["pre", "post", "cond"].map(|n| root.path().join(n));
    for p in &d {
        fs::create_dir(p).unwrap();
    }
    (root, d)
}

#[test]
fn matched_triple_becomes_one_sample() {
    let (_root, [pre, post, cond]) = dirs();
    pgm(&pre.join("a.pgm"), 2, 2, &[0, 255, 10, 20]);
    pgm(&post.join("a.pgm"), 2, 2, &[0, 255, 200, 20]);
    pgm(&cond.join("a.pgm"), 2, 2, &[0, 0, 1, 0]);
    fs::write(pre.join("notes.txt"), "ignored").unwrap();
    let data = ingest_image_pairs(&pre, &post, Some(&cond), IngestKind::Layout).unwrap();
    assert_eq!(data.len(), 1);
    assert_eq!(data[0].pre.shape(), &[1, 2, 2]);
    assert_eq!(data[0].pre.data()[1], 1.0);
    assert_eq!(data[0].pre.data()[2], 10.0 / 255.0);
    assert!(matches!(&data[0].cond, ConditionPayload::Layout(m) if m.data() == [0.0, 0.0, 1.0, 0.0]));
}

#[test]
fn missing_post_names_the_stem() {
    let (_root, [pre, post, _]) = dirs();
    pgm(&pre.join("a.pgm"), 1, 1, &[1]);
    pgm(&post.join("a.pgm"), 1, 1, &[1]);
    pgm(&pre.join("b17.pgm"), 1, 1, &[1]);
    let err = ingest_image_pairs(&pre, &post, None, IngestKind::None).unwrap_err();
    assert!(err.to_string().contains("b17"), "{err}");
}

#[test]
fn rejects_mismatched_inputs() {
    let (_root, [pre, post, cond]) = dirs();
    pgm(&pre.join("a.pgm"), 2, 1, &[1, 2]);
    pgm(&post.join("a.pgm"), 1, 2, &[1, 2]);
    assert!(ingest_image_pairs(&pre, &post, None, IngestKind::None)
        .unwrap_err()
        .to_string()
        .contains("`a`"));
    pgm(&post.join("a.pgm"), 2, 1, &[3, 4]);
    pgm(&cond.join("a.pgm"), 2, 1, &[0, 2]);
    let err = ingest_image_pairs(&pre, &post, Some(&cond), IngestKind::Layout).unwrap_err();
    assert!(err.to_string().contains("binary"), "{err}");
    let ok = ingest_image_pairs(&pre, &post, Some(&cond), IngestKind::Semantic { classes: 3 }).unwrap();
    assert_eq!(ok.len(), 1);
    fs::write(cond.join("a.txt"), "1\n").unwrap();
    let labelled = ingest_image_pairs(&pre, &post, Some(&cond), IngestKind::Label).unwrap();
    assert_eq!(labelled[0].cond, ConditionPayload::Label(1));
    pgm(&post.join("extra.pgm"), 2, 1, &[3, 4]);
    assert!(ingest_image_pairs(&pre, &post, None, IngestKind::None)
        .unwrap_err()
        .to_string()
        .contains("extra"));
}
