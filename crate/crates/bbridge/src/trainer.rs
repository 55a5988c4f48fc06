//! Codec fitting, the training loop, periodic checkpoints and metrics.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bbridge_core::codec::{train_codec, CodecTrainConfig, CodecTrainReport, LinearCodec};
use bbridge_core::training::StepMetrics;
use bbridge_core::{Codec, PairedSample, RngState, Tensor, TrainState};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::{CodecConfig, ExperimentConfig};
use crate::error::{CliError, Result};

/// Maps every record's `pre` and `post` through the codec encoder.
pub fn to_latents(codec: &Codec, data: &[PairedSample]) -> Result<Vec<PairedSample>> {
    data.iter()
        .map(|s| {
            Ok(PairedSample::new(
                codec.encode(&s.pre)?,
                codec.encode(&s.post)?,
                s.cond.clone(),
            )?)
        })
        .collect()
}

fn common_shape(data: &[PairedSample]) -> Result<Vec<usize>> {
    let first = data
        .first()
        .ok_or_else(|| CliError::Validation("dataset is empty".into()))?;
    let shape = first.pre.shape().to_vec();
    if let Some(i) = data.iter().position(|s| s.pre.shape() != shape.as_slice()) {
        return Err(CliError::Validation(format!(
            "record {i} has shape {:?}, record 0 has {shape:?}",
            data[i].pre.shape()
        )));
    }
    Ok(shape)
}

/// Fits the codec (if any) on all images, then initializes the model.
pub fn init_checkpoint(
    config: &ExperimentConfig,
    data: &[PairedSample],
) -> Result<(Checkpoint, Option<CodecTrainReport>)> {
    let shape = common_shape(data)?;
    let (codec, report) = match &config.codec {
        CodecConfig::Identity => (Codec::Identity, None),
        CodecConfig::Linear { bottleneck, epochs, lr } => {
            let mut rng = RngState::with_stream(config.train.seed, 1);
            let init = Codec::Linear(LinearCodec::init(&mut rng, &shape, *bottleneck)?);
            let images: Vec<Tensor> = data.iter().flat_map(|s| [s.pre.clone(), s.post.clone()]).collect();
            let (codec, report) = train_codec(
                &init,
                &images,
                CodecTrainConfig {
                    epochs: *epochs,
                    lr: *lr,
                },
            )?;
            (codec, Some(report))
        }
    };
    let model = config.model.for_latent(codec.latent_shape(&shape));
    let state = TrainState::new(config.train.clone(), &model)?;
    Ok((Checkpoint { state, codec }, report))
}

pub struct TrainOutputs {
    pub metrics: Vec<StepMetrics>,
    pub metrics_path: PathBuf,
    pub final_path: PathBuf,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step:06}.bbck")
}

/// Trains until `config.steps`, writing `metrics.csv`, periodic checkpoints
/// and `final.bbck` under `out_dir`.
pub fn train_loop(
    ck: &mut Checkpoint,
    latents: &[PairedSample],
    out_dir: &Path,
    checkpoint_every: u64,
    mut on_step: impl FnMut(&StepMetrics),
) -> Result<TrainOutputs> {
    if latents.is_empty() {
        return Err(CliError::Validation("dataset is empty".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let metrics_path = out_dir.join("metrics.csv");
    let file = File::create(&metrics_path).map_err(|e| CliError::io(&metrics_path, e))?;
    let mut csv = BufWriter::new(file);
    let io = |e| CliError::io(&metrics_path, e);
    writeln!(csv, "step,loss,grad_norm").map_err(io)?;
    let mut metrics = Vec::new();
    while ck.state.step < ck.state.config.steps {
        let m = ck.state.advance(latents)?;
        writeln!(csv, "{},{},{}", m.step, m.loss, m.grad_norm).map_err(io)?;
        on_step(&m);
        metrics.push(m);
        if checkpoint_every > 0 && m.step % checkpoint_every == 0 {
            save_checkpoint(&out_dir.join(checkpoint_name(m.step)), ck)?;
        }
    }
    csv.flush().map_err(io)?;
    let final_path = out_dir.join("final.bbck");
    save_checkpoint(&final_path, ck)?;
    Ok(TrainOutputs {
        metrics,
        metrics_path,
        final_path,
    })
}
