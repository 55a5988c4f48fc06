mod common;

use std::path::Path;

use bbridge::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
use bbridge::config::CodecConfig;
use bbridge::trainer::{init_checkpoint, to_latents, train_loop};
use bbridge_core::data::{make_pointcloud_dataset, make_scene_dataset};
use bbridge_core::RngState;

fn split(bytes: &[u8]) -> (serde_json::Value, Vec<u8>) {
    let len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let manifest = serde_json::from_slice(&bytes[13..13 + len]).unwrap();
    (manifest, bytes[13 + len..].to_vec())
}

fn join(manifest: &serde_json::Value, payload: &[u8]) -> Vec<u8> {
    let json = serde_json::to_vec(manifest).unwrap();
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    out
}

#[test]
fn save_load_save_is_byte_identical() {
    let data = make_pointcloud_dataset(32, &mut RngState::new(1)).unwrap();
    let (mut ck, _) = init_checkpoint(&common::point_experiment(5, 2), &data).unwrap();
    for _ in 0..5 {
        ck.state.advance(&data).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.bbck");
    save_checkpoint(&p, &ck).unwrap();
    let back = load_checkpoint(&p).unwrap();
    assert_eq!(back, ck);
    assert_eq!(encode_checkpoint(&back), std::fs::read(&p).unwrap());
}

#[test]
fn linear_codec_round_trips() {
    let data = make_scene_dataset(8, 8, 8, &mut RngState::new(1)).unwrap();
    let mut cfg = common::point_experiment(1, 2);
    cfg.codec = CodecConfig::Linear {
        bottleneck: 16,
        epochs: 3,
        lr: 1e-2,
    };
    cfg.model.condition.vocab = 1;
    let (ck, report) = init_checkpoint(&cfg, &data).unwrap();
    assert_eq!(report.unwrap().losses.len(), 3);
    assert_eq!(ck.state.params.config.latent_shape, vec![16]);
    let bytes = encode_checkpoint(&ck);
    let back = decode_checkpoint(&bytes, Path::new("c")).unwrap();
    assert_eq!(back, ck);
    assert_eq!(encode_checkpoint(&back), bytes);
}

#[test]
fn corruption_is_reported() {
    let data = make_pointcloud_dataset(8, &mut RngState::new(1)).unwrap();
    let (ck, _) = init_checkpoint(&common::point_experiment(1, 2), &data).unwrap();
    let bytes = encode_checkpoint(&ck);

    let mut bad = bytes.clone();
    bad[..5].copy_from_slice(b"BBCK9");
    let err = decode_checkpoint(&bad, Path::new("c")).unwrap_err();
    assert!(err.to_string().contains("magic"), "{err}");
    assert_eq!(err.exit_code(), 2);

    let (mut manifest, payload) = split(&bytes);
    manifest["tensors"].as_array_mut().unwrap().push(serde_json::json!({
        "name": "ghost", "shape": [1], "offset": payload.len() as u64 + 100, "length": 20
    }));
    let err = decode_checkpoint(&join(&manifest, &payload), Path::new("c")).unwrap_err();
    assert!(
        err.to_string().contains("integrity") && err.to_string().contains("ghost"),
        "{err}"
    );

    let (mut manifest, payload) = split(&bytes);
    manifest["tensors"][0]["shape"] = serde_json::json!([999]);
    let err = decode_checkpoint(&join(&manifest, &payload), Path::new("c")).unwrap_err();
    assert!(err.to_string().contains("differs from manifest"), "{err}");

    let err = decode_checkpoint(&bytes[..bytes.len() - 3], Path::new("c")).unwrap_err();
    assert!(err.to_string().contains("integrity"), "{err}");
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = make_pointcloud_dataset(64, &mut RngState::new(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let cfg = common::point_experiment(30, 9);
    let (mut straight, _) = init_checkpoint(&cfg, &data).unwrap();
    train_loop(&mut straight, &data, &dir.path().join("a"), 0, |_| {}).unwrap();

    let mut half = cfg.clone();
    half.train.steps = 15;
    let (mut first, _) = init_checkpoint(&half, &data).unwrap();
    let out = train_loop(&mut first, &data, &dir.path().join("b"), 0, |_| {}).unwrap();
    let mut resumed = load_checkpoint(&out.final_path).unwrap();
    resumed.state.config.steps = 30;
    let latents = to_latents(&resumed.codec, &data).unwrap();
    train_loop(&mut resumed, &latents, &dir.path().join("c"), 0, |_| {}).unwrap();

    assert_eq!(resumed.state.step, 30);
    assert_eq!(resumed.state.params, straight.state.params);
    assert_eq!(resumed.state.adam, straight.state.adam);
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let data = make_pointcloud_dataset(64, &mut RngState::new(4)).unwrap();
    let run = || {
        let (mut ck, _) = init_checkpoint(&common::point_experiment(100, 5), &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = train_loop(&mut ck, &data, dir.path(), 0, |_| {}).unwrap();
        (ck, out.metrics)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(ma, mb);
    assert_eq!(a, b);
}
