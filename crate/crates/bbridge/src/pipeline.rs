//! Sampling and evaluation on top of a checkpoint.

use std::path::Path;

use bbridge_core::bridge::{sample, SampleOptions, SampleTrace};
use bbridge_core::codec::relative_reconstruction_error;
use bbridge_core::eval::{layout_iou, median_bandwidth, mmd, mode_accuracy};
use bbridge_core::{ConditionPayload, PairedSample, RngState, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{CliError, Result};
use crate::pnm::read_class_map;

/// Parses `label:<int>`, `mask:<path.pgm>`, `semantic:<path.pgm>` or `none`.
pub fn parse_cond(spec: &str, classes: usize) -> Result<ConditionPayload> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    let payload = match (kind, arg) {
        ("none", "") => ConditionPayload::None,
        ("label", n) => ConditionPayload::Label(
            n.parse()
                .map_err(|_| CliError::Validation(format!("bad label in condition `{spec}`")))?,
        ),
        ("mask", p) if !p.is_empty() => ConditionPayload::Layout(read_class_map(Path::new(p))?),
        ("semantic", p) if !p.is_empty() => ConditionPayload::Semantic {
            map: read_class_map(Path::new(p))?,
            classes,
        },
        _ => {
            return Err(CliError::Validation(format!(
                "condition `{spec}` is not label:<int>, mask:<path>, semantic:<path> or none"
            )))
        }
    };
    payload.validate()?;
    Ok(payload)
}

/// Encodes `pre`, runs the reverse chain and decodes the result.
pub fn generate(
    ck: &Checkpoint,
    pre: &Tensor,
    cond: &ConditionPayload,
    options: SampleOptions,
    rng: &mut RngState,
) -> Result<(Tensor, SampleTrace)> {
    let params = &ck.state.params;
    let z_a = ck.codec.encode(pre)?;
    let tokens = params.encoder.encode(cond)?;
    let trace = sample(&ck.state.schedule, params, &z_a, &tokens, options, rng)?;
    Ok((ck.codec.decode(&trace.final_latent)?, trace))
}

/// One child stream per record, so record `i` does not depend on how many
/// records precede it in a run.
pub fn record_rngs(seed: u64, n: usize) -> Vec<RngState> {
    let mut root = RngState::new(seed);
    (0..n).map(|_| root.split().0).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ModeAccuracy,
    Mmd,
    LayoutIou,
    Reconstruction,
}

impl std::str::FromStr for Metric {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mode_accuracy" => Self::ModeAccuracy,
            "mmd" => Self::Mmd,
            "layout_iou" => Self::LayoutIou,
            "reconstruction" => Self::Reconstruction,
            _ => {
                return Err(CliError::Validation(format!(
                    "unknown metric `{s}` (expected mode_accuracy, mmd, layout_iou or reconstruction)"
                )))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub steps: usize,
    pub seed: u64,
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mmd_generated: Option<f64>,
    /// MMD between the pre-event inputs and the same reference set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mmd_pre: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mmd_bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout_iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_reconstruction_error: Option<f64>,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "records={} steps={} checkpoint_step={}",
            self.records, self.steps, self.step
        );
        let mut add = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                s.push_str(&format!("\n  {k:<30} {v:.6}"));
            }
        };
        add("mode_accuracy", self.mode_accuracy);
        add("mmd(generated, reference)", self.mmd_generated);
        add("mmd(pre, reference)", self.mmd_pre);
        add("layout_iou", self.layout_iou);
        add("relative_reconstruction_error", self.relative_reconstruction_error);
        s
    }
}

pub struct EvalOptions {
    pub steps: usize,
    pub seed: u64,
    pub threshold: f64,
}

/// Generates from each record's `pre` and condition and scores the results.
///
/// MMD compares the generated set and the `pre` set with the `post` images of
/// `reference`.
pub fn evaluate(
    ck: &Checkpoint,
    data: &[PairedSample],
    reference: &[PairedSample],
    metrics: &[Metric],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(CliError::Validation("evaluation dataset is empty".into()));
    }
    let mut report = EvalReport {
        records: data.len(),
        steps: opts.steps,
        seed: opts.seed,
        step: ck.state.step,
        mode_accuracy: None,
        mmd_generated: None,
        mmd_pre: None,
        mmd_bandwidth: None,
        layout_iou: None,
        relative_reconstruction_error: None,
    };
    let needs_samples = metrics.iter().any(|m| *m != Metric::Reconstruction);
    let generated: Vec<Tensor> = if needs_samples {
        data.iter()
            .zip(record_rngs(opts.seed, data.len()))
            .map(|(s, mut rng)| {
                Ok(generate(ck, &s.pre, &s.cond, SampleOptions::deterministic(opts.steps), &mut rng)?.0)
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    for m in metrics {
        match m {
            Metric::ModeAccuracy => {
                let (mut gen, mut pre, mut labels) = (Vec::new(), Vec::new(), Vec::new());
                for (g, s) in generated.iter().zip(data) {
                    if let ConditionPayload::Label(l) = s.cond {
                        gen.push(g.clone());
                        pre.push(s.pre.clone());
                        labels.push(l);
                    }
                }
                report.mode_accuracy = Some(mode_accuracy(&gen, &pre, &labels)?);
            }
            Metric::Mmd => {
                let real: Vec<Tensor> = reference.iter().map(|s| s.post.clone()).collect();
                let pre: Vec<Tensor> = data.iter().map(|s| s.pre.clone()).collect();
                let bw = median_bandwidth(&generated, &real)?;
                report.mmd_bandwidth = Some(bw);
                report.mmd_generated = Some(mmd(&generated, &real, bw)?);
                report.mmd_pre = Some(mmd(&pre, &real, bw)?);
            }
            Metric::LayoutIou => {
                let mut scores = Vec::new();
                for (g, s) in generated.iter().zip(data) {
                    if let ConditionPayload::Layout(mask) = &s.cond {
                        scores.push(layout_iou(g, &s.pre, mask, opts.threshold)?);
                    }
                }
                if scores.is_empty() {
                    return Err(CliError::Validation(
                        "layout_iou needs records with layout conditions".into(),
                    ));
                }
                report.layout_iou = Some(scores.iter().sum::<f64>() / scores.len() as f64);
            }
            Metric::Reconstruction => {
                let images: Vec<Tensor> = data.iter().flat_map(|s| [s.pre.clone(), s.post.clone()]).collect();
                report.relative_reconstruction_error = Some(relative_reconstruction_error(&ck.codec, &images)?);
            }
        }
    }
    Ok(report)
}
