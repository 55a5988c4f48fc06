use bbridge_core::bridge::network_target;
use bbridge_core::conditioning::ConditionConfig;
use bbridge_core::data::{make_pointcloud_dataset, make_scene_dataset};
use bbridge_core::denoiser::init_params;
use bbridge_core::schedule::build_schedule;
use bbridge_core::training::{draw_noise, gradient_check, loss_with_draws};
use bbridge_core::{ConditionPayload, DenoiserConfig, PairedSample, RngState, Tensor, WeightMode};

fn point_model() -> DenoiserConfig {
    DenoiserConfig {
        latent_shape: vec![2],
        hidden: 8,
        blocks: 2,
        attn_dim: 4,
        time_dim: 6,
        condition: ConditionConfig {
            vocab: 2,
            classes: 2,
            patch: 4,
            token_dim: 8,
            pos_freqs: 1,
        },
    }
}

fn image_model() -> DenoiserConfig {
    DenoiserConfig {
        latent_shape: vec![1, 8, 8],
        hidden: 6,
        blocks: 2,
        attn_dim: 4,
        time_dim: 4,
        condition: ConditionConfig {
            vocab: 1,
            classes: 3,
            patch: 4,
            token_dim: 8,
            pos_freqs: 2,
        },
    }
}

fn check(model: &DenoiserConfig, data: &[PairedSample], steps: usize, seed: u64) -> (usize, f64, String) {
    let mut rng = RngState::new(seed);
    let mut params = init_params(&mut rng, model).unwrap();
    params.randomize_head(&mut rng, 0.3);
    let sched = build_schedule(steps, 1.0).unwrap();
    let batch: Vec<&PairedSample> = data.iter().collect();
    let draws = draw_noise(&sched, &batch, &mut rng).unwrap();
    let r = gradient_check(
        &params,
        &sched,
        &batch,
        &draws,
        WeightMode::Uniform,
        120,
        1e-5,
        &mut rng,
    )
    .unwrap();
    (r.checked, r.max_rel_err, r.worst)
}

#[test]
fn point_model_gradients_match_finite_differences() {
    let data = make_pointcloud_dataset(3, &mut RngState::new(4)).unwrap();
    let (n, err, worst) = check(&point_model(), &data, 50, 1);
    assert!(n >= 120);
    assert!(err < 1e-4, "max relative error {err} at {worst}");
}

#[test]
fn image_model_gradients_match_finite_differences() {
    let mut data = make_scene_dataset(2, 8, 8, &mut RngState::new(5)).unwrap();
    let mut map = vec![0.0; 64];
    for (i, v) in map.iter_mut().enumerate() {
        *v = ((i / 8 + i % 3) % 3) as f64;
    }
    let semantic = ConditionPayload::Semantic {
        map: Tensor::new(vec![8, 8], map).unwrap(),
        classes: 3,
    };
    data.push(PairedSample::new(data[0].pre.clone(), data[1].post.clone(), semantic).unwrap());
    data.push(PairedSample::new(data[1].pre.clone(), data[0].post.clone(), ConditionPayload::None).unwrap());
    let (n, err, worst) = check(&image_model(), &data, 200, 2);
    assert!(n >= 120);
    assert!(err < 1e-4, "max relative error {err} at {worst}");
}

#[test]
fn zero_head_loss_is_mean_target_norm() {
    let data = make_pointcloud_dataset(16, &mut RngState::new(8)).unwrap();
    let batch: Vec<&PairedSample> = data.iter().collect();
    let sched = build_schedule(50, 1.0).unwrap();
    let params = init_params(&mut RngState::new(9), &point_model()).unwrap();
    let draws = draw_noise(&sched, &batch, &mut RngState::new(10)).unwrap();
    let (l, _) = loss_with_draws(&params, &sched, &batch, &draws, WeightMode::Uniform).unwrap();
    let expected = batch
        .iter()
        .zip(&draws)
        .map(|(s, d)| network_target(&sched, &s.post, &s.pre, d.t, &d.eps).unwrap().sum_sq())
        .sum::<f64>()
        / batch.len() as f64;
    assert!((l - expected).abs() < 1e-12 * expected.max(1.0));
}
