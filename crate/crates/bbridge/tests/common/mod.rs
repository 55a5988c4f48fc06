#![allow(dead_code)]

use bbridge::config::{CodecConfig, ExperimentConfig, ModelConfig};
use bbridge_core::conditioning::ConditionConfig;
use bbridge_core::TrainConfig;

pub fn point_experiment(steps: u64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        train: TrainConfig {
            steps_total: 50,
            steps,
            batch: 16,
            seed,
            ..TrainConfig::default()
        },
        model: ModelConfig {
            hidden: 12,
            blocks: 2,
            attn_dim: 4,
            time_dim: 8,
            condition: ConditionConfig {
                vocab: 2,
                classes: 2,
                patch: 4,
                token_dim: 8,
                pos_freqs: 1,
            },
        },
        codec: CodecConfig::Identity,
        checkpoint_every: 0,
    }
}

pub fn point_config_json(steps: u64, t: usize) -> String {
    format!(
        r#"{{"train": {{"T": {t}, "steps": {steps}, "batch": 16, "seed": 3}},
  "model": {{"hidden": 12, "blocks": 2, "attn_dim": 4, "time_dim": 8,
            "condition": {{"vocab": 2, "classes": 2, "patch": 4, "token_dim": 8, "pos_freqs": 1}}}},
  "checkpoint_every": 10}}"#
    )
}
