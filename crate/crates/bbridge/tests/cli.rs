mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bbridge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbridge")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = bbridge(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_sample_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), common::point_config_json(40, 20)).unwrap();
    ok(&[
        "make-data",
        "--kind",
        "points",
        "--n",
        "200",
        "--out",
        p(&d.join("data.bbds")),
        "--seed",
        "1",
    ]);
    ok(&[
        "train",
        "--config",
        p(&d.join("cfg.json")),
        "--data",
        p(&d.join("data.bbds")),
        "--out",
        p(&d.join("run")),
    ]);
    for name in ["final.bbck", "ckpt_000010.bbck", "ckpt_000040.bbck", "metrics.csv"] {
        assert!(d.join("run").join(name).exists(), "{name}");
    }
    let ckpt = d.join("run/final.bbck");
    let sample = |out: &str| {
        ok(&[
            "sample",
            "--ckpt",
            p(&ckpt),
            "--data",
            p(&d.join("data.bbds")),
            "--n",
            "4",
            "--seed",
            "7",
            "--stochastic",
            "--out",
            p(&d.join(out)),
        ])
    };
    sample("s1");
    sample("s2");
    for f in ["sample_0000.bbt", "sample_0003.bbt", "samples.json"] {
        assert_eq!(
            fs::read(d.join("s1").join(f)).unwrap(),
            fs::read(d.join("s2").join(f)).unwrap(),
            "{f}"
        );
    }
    let summary = ok(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&d.join("data.bbds")),
        "--n",
        "50",
        "--out",
        p(&d.join("report.json")),
    ]);
    assert!(summary.contains("mode_accuracy"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("report.json")).unwrap()).unwrap();
    let acc = report["mode_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(report["mmd_generated"].is_number());
}

#[test]
fn full_trace_has_one_entry_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), common::point_config_json(2, 200)).unwrap();
    ok(&[
        "make-data",
        "--kind",
        "points",
        "--n",
        "8",
        "--out",
        p(&d.join("data.bbds")),
    ]);
    ok(&[
        "train",
        "--config",
        p(&d.join("cfg.json")),
        "--data",
        p(&d.join("data.bbds")),
        "--out",
        p(&d.join("run")),
    ]);
    let pre = d.join("pre.bbt");
    bbridge::format::save_tensor(&pre, &bbridge_core::Tensor::from_vec(vec![0.5, -0.5]).unwrap()).unwrap();
    ok(&[
        "sample",
        "--ckpt",
        p(&d.join("run/final.bbck")),
        "--pre",
        p(&pre),
        "--cond",
        "label:1",
        "--steps",
        "200",
        "--trace",
        "full",
        "--out",
        p(&d.join("s")),
    ]);
    let trace = bbridge::format::load_tensor(&d.join("s/trace_0000.bbt")).unwrap();
    assert_eq!(trace.shape(), &[201, 2]);
    assert_eq!(&trace.data()[..2], &[0.5, -0.5]);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(d.join("s/samples.json")).unwrap()).unwrap();
    assert_eq!(manifest[0]["trace_steps"].as_array().unwrap().len(), 201);
}

#[test]
fn scenes_are_written_as_images() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = r#"{"train": {"T": 20, "steps": 2, "batch": 2},
      "model": {"hidden": 4, "blocks": 1, "attn_dim": 2, "time_dim": 4,
                "condition": {"vocab": 1, "classes": 2, "patch": 4, "token_dim": 8, "pos_freqs": 1}}}"#;
    fs::write(d.join("cfg.json"), cfg).unwrap();
    ok(&[
        "make-data",
        "--kind",
        "scenes",
        "--n",
        "4",
        "--size",
        "8",
        "--out",
        p(&d.join("data.bbds")),
    ]);
    ok(&[
        "train",
        "--config",
        p(&d.join("cfg.json")),
        "--data",
        p(&d.join("data.bbds")),
        "--out",
        p(&d.join("run")),
    ]);
    let mask = d.join("mask.pgm");
    bbridge::pnm::write_class_map(&mask, &bbridge_core::data::rectangle_mask(8, 8, 1, 1, 3, 3).unwrap()).unwrap();
    let pre = d.join("pre.pgm");
    bbridge::pnm::write_image(&pre, &bbridge_core::data::checkerboard(8, 8).unwrap()).unwrap();
    ok(&[
        "sample",
        "--ckpt",
        p(&d.join("run/final.bbck")),
        "--pre",
        p(&pre),
        "--cond",
        &format!("mask:{}", p(&mask)),
        "--out",
        p(&d.join("s")),
    ]);
    let img = bbridge::pnm::read_image(&d.join("s/sample_0000.pgm")).unwrap();
    assert_eq!(img.shape(), &[1, 8, 8]);
    ok(&[
        "eval",
        "--ckpt",
        p(&d.join("run/final.bbck")),
        "--data",
        p(&d.join("data.bbds")),
        "--metrics",
        "layout_iou,reconstruction",
        "--out",
        p(&d.join("r.json")),
    ]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        bbridge(&[
            "sample",
            "--ckpt",
            p(&d.join("missing.bbck")),
            "--pre",
            "x.bbt",
            "--out",
            p(d)
        ])
        .status
        .code(),
        Some(2)
    );
    fs::write(d.join("bad.json"), r#"{"model": {}, "extra": 1}"#).unwrap();
    ok(&[
        "make-data",
        "--kind",
        "points",
        "--n",
        "4",
        "--out",
        p(&d.join("data.bbds")),
    ]);
    let out = bbridge(&[
        "train",
        "--config",
        p(&d.join("bad.json")),
        "--data",
        p(&d.join("data.bbds")),
        "--out",
        p(&d.join("run")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    fs::write(d.join("garbage.bbds"), b"BBDS1\x02\x00\x00\x00\x00\x00\x00\x00{}").unwrap();
    fs::write(d.join("good.json"), common::point_config_json(1, 10)).unwrap();
    let out = bbridge(&[
        "train",
        "--config",
        p(&d.join("good.json")),
        "--data",
        p(&d.join("garbage.bbds")),
        "--out",
        p(&d.join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));
    assert_eq!(bbridge(&["sample", "--ckpt", "x", "--out", "y"]).status.code(), Some(1));
    assert_eq!(
        bbridge(&[
            "make-data",
            "--kind",
            "points",
            "--n",
            "0",
            "--out",
            p(&d.join("e.bbds"))
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn selfcheck_passes_and_catches_sign_flip() {
    let out = bbridge(&["selfcheck"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert_eq!(text.matches("PASS").count(), 6);
    let out = bbridge(&["selfcheck", "--inject-fault", "ceps-sign"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(1));
    assert!(text.contains("FAIL posterior oracle"), "{text}");
}
