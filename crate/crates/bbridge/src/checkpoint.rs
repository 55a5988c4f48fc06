//! The `BBCK1` checkpoint: magic, `u64` manifest length, JSON manifest, then
//! the `BBT1` blobs listed in the manifest's tensor table.
//!
//! Offsets in the table are relative to the first byte after the manifest.

use std::collections::BTreeMap;
use std::path::Path;

use bbridge_core::codec::LinearCodec;
use bbridge_core::schedule::ScheduleConfig;
use bbridge_core::training::Adam;
use bbridge_core::{BridgeSchedule, Codec, DenoiserConfig, DenoiserParams, RngState, Tensor, TrainConfig, TrainState};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::format::{decode_tensor, encode_tensor, read_file, write_file, Cursor};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"BBCK1";

/// A resumable training state plus the codec that maps data to latents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub codec: Codec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngManifest {
    seed: u64,
    stream: u64,
    /// Decimal `u128` word position.
    position: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamManifest {
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum CodecManifest {
    Identity,
    Linear { input_shape: Vec<usize>, bottleneck: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schedule: ScheduleConfig,
    train: TrainConfig,
    model: DenoiserConfig,
    step: u64,
    rng: RngManifest,
    adam: AdamManifest,
    codec: CodecManifest,
    tensors: Vec<TensorEntry>,
}

fn named_tensors(ck: &Checkpoint) -> Vec<(String, Tensor)> {
    let params = &ck.state.params;
    let names = params.names();
    let mut out: Vec<(String, Tensor)> = names
        .iter()
        .cloned()
        .zip(params.tensors().into_iter().cloned())
        .collect();
    for (prefix, moments) in [("adam.m.", &ck.state.adam.m), ("adam.v.", &ck.state.adam.v)] {
        for ((name, p), mom) in names.iter().zip(params.tensors()).zip(moments) {
            let t = Tensor::new(p.shape().to_vec(), mom.clone()).expect("moment matches parameter shape");
            out.push((format!("{prefix}{name}"), t));
        }
    }
    if let Codec::Linear(l) = &ck.codec {
        for (name, t) in ["codec.enc.w", "codec.enc.b", "codec.dec.w", "codec.dec.b"]
            .into_iter()
            .zip(l.tensors())
        {
            out.push((name.to_string(), t.clone()));
        }
    }
    out
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let s = &ck.state;
    let tensors = named_tensors(ck);
    let mut payload = Vec::new();
    let mut table = Vec::with_capacity(tensors.len());
    for (name, t) in &tensors {
        let offset = payload.len() as u64;
        encode_tensor(t, &mut payload);
        table.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            length: payload.len() as u64 - offset,
        });
    }
    let manifest = Manifest {
        schedule: s.schedule.config(),
        train: s.config.clone(),
        model: s.params.config.clone(),
        step: s.step,
        rng: RngManifest {
            seed: s.rng.seed(),
            stream: s.rng.stream(),
            position: s.rng.position().to_string(),
        },
        adam: AdamManifest {
            step: s.adam.step,
            lr: s.adam.lr,
            beta1: s.adam.beta1,
            beta2: s.adam.beta2,
            eps: s.adam.eps,
        },
        codec: match &ck.codec {
            Codec::Identity => CodecManifest::Identity,
            Codec::Linear(l) => CodecManifest::Linear {
                input_shape: l.input_shape.clone(),
                bottleneck: l.bottleneck(),
            },
        },
        tensors: table,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let fail = |msg: String| CliError::format(path, msg);
    let mut c = Cursor::new(bytes);
    c.magic(CHECKPOINT_MAGIC).map_err(|e| fail(e.to_string()))?;
    let len = c.u64().map_err(|e| fail(e.to_string()))? as usize;
    let json = c.take(len).map_err(|e| fail(e.to_string()))?;
    let m: Manifest = serde_json::from_slice(json).map_err(|e| fail(format!("manifest: {e}")))?;
    let payload = &bytes[c.position()..];

    let mut blobs: BTreeMap<&str, Tensor> = BTreeMap::new();
    let mut covered = 0u64;
    for e in &m.tensors {
        let end = e
            .offset
            .checked_add(e.length)
            .filter(|&end| end <= payload.len() as u64);
        let end = end.ok_or_else(|| fail(format!("integrity: tensor `{}` is absent from the payload", e.name)))?;
        let t = decode_tensor(&payload[e.offset as usize..end as usize])
            .map_err(|err| fail(format!("tensor `{}`: {err}", e.name)))?;
        if t.shape() != e.shape.as_slice() {
            return Err(fail(format!(
                "tensor `{}`: blob shape {:?} differs from manifest {:?}",
                e.name,
                t.shape(),
                e.shape
            )));
        }
        if blobs.insert(&e.name, t).is_some() {
            return Err(fail(format!("tensor `{}` listed twice", e.name)));
        }
        covered += e.length;
    }
    if covered != payload.len() as u64 {
        return Err(fail(format!(
            "payload has {} bytes but the table covers {covered}",
            payload.len()
        )));
    }
    if m.schedule != m.train.schedule() {
        return Err(fail("schedule does not match the training config".into()));
    }
    let mut take = |name: &str| blobs.remove(name);
    let params = DenoiserParams::from_named(m.model.clone(), &mut take).map_err(|e| fail(e.to_string()))?;
    let names = params.names();
    let mut moments = |prefix: &str| -> Result<Vec<Vec<f64>>> {
        names
            .iter()
            .map(|n| {
                take(&format!("{prefix}{n}"))
                    .map(Tensor::into_data)
                    .ok_or_else(|| fail(format!("integrity: missing optimizer tensor `{prefix}{n}`")))
            })
            .collect()
    };
    let adam = Adam {
        lr: m.adam.lr,
        beta1: m.adam.beta1,
        beta2: m.adam.beta2,
        eps: m.adam.eps,
        step: m.adam.step,
        m: moments("adam.m.")?,
        v: moments("adam.v.")?,
    };
    let codec = match &m.codec {
        CodecManifest::Identity => Codec::Identity,
        CodecManifest::Linear {
            input_shape,
            bottleneck,
        } => {
            let mut get = |n: &str| take(n).ok_or_else(|| fail(format!("integrity: missing codec tensor `{n}`")));
            let l = LinearCodec {
                input_shape: input_shape.clone(),
                enc_w: get("codec.enc.w")?,
                enc_b: get("codec.enc.b")?,
                dec_w: get("codec.dec.w")?,
                dec_b: get("codec.dec.b")?,
            };
            let d: usize = input_shape.iter().product();
            if l.enc_w.shape() != [*bottleneck, d] || l.dec_w.shape() != [d, *bottleneck] {
                return Err(fail("codec matrices do not match the manifest".into()));
            }
            Codec::Linear(l)
        }
    };
    if let Some(extra) = blobs.keys().next() {
        return Err(fail(format!("unexpected tensor `{extra}`")));
    }
    let position: u128 = m
        .rng
        .position
        .parse()
        .map_err(|_| fail("rng position is not an integer".into()))?;
    let schedule = BridgeSchedule::new(m.schedule).map_err(|e| fail(e.to_string()))?;
    let state = TrainState::from_parts(
        m.train,
        schedule,
        params,
        Some(adam),
        RngState::restore(m.rng.seed, m.rng.stream, position),
        m.step,
    );
    Ok(Checkpoint { state, codec })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_file(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?, path)
}
