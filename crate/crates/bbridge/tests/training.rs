mod common;

use bbridge::config::CodecConfig;
use bbridge::trainer::{init_checkpoint, train_loop};
use bbridge_core::codec::relative_reconstruction_error;
use bbridge_core::data::{make_pointcloud_dataset, make_scene_dataset};
use bbridge_core::{RngState, Tensor};

#[test]
fn point_task_loss_halves() {
    let data = make_pointcloud_dataset(2000, &mut RngState::new(1)).unwrap();
    let mut cfg = common::point_experiment(2000, 3);
    cfg.train.batch = 64;
    let (mut ck, _) = init_checkpoint(&cfg, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = train_loop(&mut ck, &data, dir.path(), 0, |_| {}).unwrap();
    let mean = |s: &[bbridge_core::training::StepMetrics]| s.iter().map(|m| m.loss).sum::<f64>() / s.len() as f64;
    let initial = mean(&out.metrics[..50]);
    let last = mean(&out.metrics[out.metrics.len() - 50..]);
    assert!(last < 0.5 * initial, "smoothed loss {initial} -> {last}");
    let csv = std::fs::read_to_string(&out.metrics_path).unwrap();
    assert_eq!(csv.lines().next(), Some("step,loss,grad_norm"));
    assert_eq!(csv.lines().count(), 2001);
}

#[test]
fn empty_dataset_is_rejected() {
    let data = make_pointcloud_dataset(4, &mut RngState::new(1)).unwrap();
    let (mut ck, _) = init_checkpoint(&common::point_experiment(3, 3), &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(train_loop(&mut ck, &[], dir.path(), 0, |_| {}).is_err());
    assert!(init_checkpoint(&common::point_experiment(3, 3), &[]).is_err());
}

#[test]
fn periodic_checkpoints_are_written() {
    let data = make_pointcloud_dataset(16, &mut RngState::new(1)).unwrap();
    let (mut ck, _) = init_checkpoint(&common::point_experiment(25, 3), &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    train_loop(&mut ck, &data, dir.path(), 10, |_| {}).unwrap();
    for name in ["ckpt_000010.bbck", "ckpt_000020.bbck", "final.bbck", "metrics.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert!(!dir.path().join("ckpt_000025.bbck").exists());
}

#[test]
fn linear_codec_reconstructs_toy_scenes() {
    let data = make_scene_dataset(100, 16, 16, &mut RngState::new(6)).unwrap();
    let mut cfg = common::point_experiment(0, 3);
    cfg.model.condition.vocab = 1;
    cfg.codec = CodecConfig::Linear {
        bottleneck: 64,
        epochs: 300,
        lr: 1e-2,
    };
    let (ck, _) = init_checkpoint(&cfg, &data).unwrap();
    let held = make_scene_dataset(50, 16, 16, &mut RngState::new(7)).unwrap();
    let images: Vec<Tensor> = held.iter().flat_map(|s| [s.pre.clone(), s.post.clone()]).collect();
    let err = relative_reconstruction_error(&ck.codec, &images).unwrap();
    assert!(err < 0.1, "relative reconstruction error {err}");
}
