//! Experiment configuration for `bbridge train`.
//!
//! ```json
//! {
//!   "train": { "T": 50, "steps": 2000, "batch": 64, "lr": 0.001, "seed": 0 },
//!   "model": { "hidden": 32, "blocks": 2, "attn_dim": 8, "time_dim": 16,
//!              "condition": { "vocab": 2, "classes": 2, "patch": 4, "token_dim": 16, "pos_freqs": 1 } },
//!   "codec": { "kind": "identity" },
//!   "checkpoint_every": 500
//! }
//! ```
//!
//! Omitted `train` fields take the defaults of [`TrainConfig`]. The full-scale
//! setting is `T = 1000` with `lr = 1e-5`.

use std::path::Path;

use bbridge_core::codec::CodecTrainConfig;
use bbridge_core::conditioning::ConditionConfig;
use bbridge_core::{DenoiserConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::format::read_file;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub blocks: usize,
    pub attn_dim: usize,
    pub time_dim: usize,
    pub condition: ConditionConfig,
}

impl ModelConfig {
    pub fn for_latent(&self, latent_shape: Vec<usize>) -> DenoiserConfig {
        DenoiserConfig {
            latent_shape,
            hidden: self.hidden,
            blocks: self.blocks,
            attn_dim: self.attn_dim,
            time_dim: self.time_dim,
            condition: self.condition,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CodecConfig {
    #[default]
    Identity,
    Linear {
        bottleneck: usize,
        #[serde(default = "default_codec_epochs")]
        epochs: usize,
        #[serde(default = "default_codec_lr")]
        lr: f64,
    },
}

fn default_codec_epochs() -> usize {
    CodecTrainConfig::default().epochs
}

fn default_codec_lr() -> f64 {
    CodecTrainConfig::default().lr
}

fn default_checkpoint_every() -> u64 {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub train: TrainConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub codec: CodecConfig,
    /// Write `ckpt_<step>.bbck` every this many steps; 0 disables.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let c: Self =
            serde_json::from_str(text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        c.train.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| CliError::format(path, "config is not UTF-8"))?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MODEL: &str = r#""model": {"hidden": 8, "blocks": 1, "attn_dim": 4, "time_dim": 4,
        "condition": {"vocab": 2, "classes": 2, "patch": 4, "token_dim": 8, "pos_freqs": 1}}"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::parse(&format!("{{{MODEL}}}"), Path::new("c.json")).unwrap();
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.codec, CodecConfig::Identity);
        assert_eq!(c.checkpoint_every, 500);
        let c = ExperimentConfig::parse(
            &format!(
                r#"{{{MODEL}, "train": {{"T": 200, "lr": 0.002}}, "codec": {{"kind": "linear", "bottleneck": 64}}}}"#
            ),
            Path::new("c.json"),
        )
        .unwrap();
        assert_eq!(c.train.steps_total, 200);
        assert_eq!(c.train.batch, 64);
        assert!(matches!(
            c.codec,
            CodecConfig::Linear {
                bottleneck: 64,
                epochs: 500,
                ..
            }
        ));
    }

    #[test]
    fn unknown_keys_rejected() {
        for bad in [
            format!(r#"{{{MODEL}, "trian": {{}}}}"#),
            format!(r#"{{{MODEL}, "train": {{"learning_rate": 0.1}}}}"#),
            format!(r#"{{{MODEL}, "codec": {{"kind": "vq"}}}}"#),
            format!(r#"{{{MODEL}, "train": {{"T": 1}}}}"#),
        ] {
            let err = ExperimentConfig::parse(&bad, Path::new("c.json")).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{bad}");
        }
    }
}
