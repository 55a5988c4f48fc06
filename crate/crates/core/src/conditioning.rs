//! Condition payloads and the learned encoder that turns them into tokens.
//!
//! Three payload kinds stand in for text prompts, instance layouts and
//! semantic maps: an integer label, a binary mask and a class-id map. Labels
//! become one embedding row. Masks and maps are cut into `p × p` patches; each
//! patch becomes one token made of a learned embedding of its per-pixel class
//! indicators and class histogram plus a fixed sinusoidal encoding of the
//! patch position.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::numerics::{RngState, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionConfig {
    /// Number of distinct labels.
    pub vocab: usize,
    /// Largest number of classes a semantic map may use (layouts use 2).
    pub classes: usize,
    /// Patch edge length in pixels.
    pub patch: usize,
    pub token_dim: usize,
    /// Sinusoid frequencies per axis in the positional encodings.
    pub pos_freqs: usize,
}

impl ConditionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.patch == 0 || self.token_dim == 0 || self.classes < 2 {
            return Err(Error::InvalidConfig(format!("bad condition config {self:?}")));
        }
        if self.token_dim < 4 * self.pos_freqs {
            return Err(Error::InvalidConfig(format!(
                "token_dim {} cannot hold {} positional features",
                self.token_dim,
                4 * self.pos_freqs
            )));
        }
        Ok(())
    }

    /// Input width of the patch embedding.
    pub fn patch_features(&self) -> usize {
        self.patch * self.patch * self.classes + self.classes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConditionPayload {
    None,
    Label(usize),
    /// `[H, W]` mask with values exactly 0 or 1.
    Layout(Tensor),
    /// `[H, W]` map of integer class ids below `classes`.
    Semantic {
        map: Tensor,
        classes: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    None,
    Label,
    Layout,
    Semantic,
}

impl ConditionPayload {
    pub fn kind(&self) -> ConditionKind {
        match self {
            Self::None => ConditionKind::None,
            Self::Label(_) => ConditionKind::Label,
            Self::Layout(_) => ConditionKind::Layout,
            Self::Semantic { .. } => ConditionKind::Semantic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::None | Self::Label(_) => Ok(()),
            Self::Layout(mask) => {
                check_map(mask, 2).map_err(|_| Error::InvalidCondition("layout mask must be binary".into()))
            }
            Self::Semantic { map, classes } => check_map(map, *classes),
        }
    }
}

fn check_map(map: &Tensor, classes: usize) -> Result<()> {
    if map.rank() != 2 {
        return Err(Error::InvalidCondition(format!(
            "map must be [H, W], got {:?}",
            map.shape()
        )));
    }
    for (i, &v) in map.data().iter().enumerate() {
        if v < 0.0 || v != libm::trunc(v) || v >= classes as f64 {
            return Err(Error::InvalidCondition(format!(
                "value {v} at index {i} is not a class id below {classes}"
            )));
        }
    }
    Ok(())
}

/// Encoded condition `z_c`, `[M, token_dim]` with `M ≥ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionTokens {
    pub tokens: Tensor,
}

impl ConditionTokens {
    pub fn count(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }
}

/// Learnable parameters of the condition encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionEncoder {
    pub config: ConditionConfig,
    /// `[vocab, token_dim]`
    pub label_table: Tensor,
    /// `[1, token_dim]`
    pub null_token: Tensor,
    /// `[token_dim, patch_features]`
    pub patch_w: Tensor,
    /// `[token_dim]`
    pub patch_b: Tensor,
}

/// What the encoder saw, kept so gradients can be routed back to it.
#[derive(Clone, Debug)]
pub(crate) enum EncodeTrace {
    Null,
    Label(usize),
    Patches { features: Vec<f64>, count: usize },
}

impl ConditionEncoder {
    pub fn init(rng: &mut RngState, config: ConditionConfig) -> Result<Self> {
        config.validate()?;
        let d = config.token_dim;
        let f = config.patch_features();
        let mut label_table = Tensor::zeros(&[config.vocab, d])?;
        rng.fill_normal(label_table.data_mut());
        let mut null_token = Tensor::zeros(&[1, d])?;
        rng.fill_normal(null_token.data_mut());
        let mut patch_w = Tensor::zeros(&[d, f])?;
        rng.fill_normal(patch_w.data_mut());
        let k = 1.0 / libm::sqrt(f as f64);
        patch_w.data_mut().iter_mut().for_each(|v| *v *= k);
        Ok(Self {
            config,
            label_table,
            null_token,
            patch_w,
            patch_b: Tensor::zeros(&[d])?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            label_table: self.label_table.zeros_like(),
            null_token: self.null_token.zeros_like(),
            patch_w: self.patch_w.zeros_like(),
            patch_b: self.patch_b.zeros_like(),
        }
    }

    pub(crate) fn encode_traced(&self, payload: &ConditionPayload) -> Result<(ConditionTokens, EncodeTrace)> {
        match payload {
            ConditionPayload::None => Ok((null_condition(self), EncodeTrace::Null)),
            ConditionPayload::Label(label) => Ok((encode_label(self, *label)?, EncodeTrace::Label(*label))),
            ConditionPayload::Layout(mask) => {
                if check_map(mask, 2).is_err() {
                    return Err(Error::InvalidCondition("layout mask must be binary".into()));
                }
                self.encode_map_traced(mask, 2)
            }
            ConditionPayload::Semantic { map, classes } => self.encode_map_traced(map, *classes),
        }
    }

    pub fn encode(&self, payload: &ConditionPayload) -> Result<ConditionTokens> {
        self.encode_traced(payload).map(|(t, _)| t)
    }

    fn encode_map_traced(&self, map: &Tensor, classes: usize) -> Result<(ConditionTokens, EncodeTrace)> {
        let cfg = &self.config;
        if classes > cfg.classes {
            return Err(Error::InvalidCondition(format!(
                "{classes} classes exceed encoder capacity {}",
                cfg.classes
            )));
        }
        check_map(map, classes)?;
        let (h, w) = (map.shape()[0], map.shape()[1]);
        let p = cfg.patch;
        if h % p != 0 || w % p != 0 {
            return Err(Error::InvalidCondition(format!(
                "map {h}x{w} is not divisible by patch size {p}"
            )));
        }
        let (gh, gw) = (h / p, w / p);
        let count = gh * gw;
        let nf = cfg.patch_features();
        let mut features = vec![0.0; count * nf];
        let norm = 1.0 / (p * p) as f64;
        for gy in 0..gh {
            for gx in 0..gw {
                let f = &mut features[(gy * gw + gx) * nf..(gy * gw + gx + 1) * nf];
                for dy in 0..p {
                    for dx in 0..p {
                        let class = map.data()[(gy * p + dy) * w + gx * p + dx] as usize;
                        f[(dy * p + dx) * cfg.classes + class] = 1.0;
                        f[p * p * cfg.classes + class] += norm;
                    }
                }
            }
        }
        let d = cfg.token_dim;
        let mut tokens = linalg::linear(&features, count, nf, self.patch_w.data(), d, Some(self.patch_b.data()));
        for gy in 0..gh {
            for gx in 0..gw {
                let pos = patch_position_encoding(cfg, gh, gw, gy, gx);
                let row = &mut tokens[(gy * gw + gx) * d..(gy * gw + gx + 1) * d];
                for (t, e) in row.iter_mut().zip(&pos) {
                    *t += e;
                }
            }
        }
        Ok((
            ConditionTokens {
                tokens: Tensor::from_parts(vec![count, d], tokens),
            },
            EncodeTrace::Patches { features, count },
        ))
    }

    /// Accumulates `d_tokens` into `grads`.
    pub(crate) fn backward(&self, trace: &EncodeTrace, d_tokens: &[f64], grads: &mut ConditionEncoder) {
        let d = self.config.token_dim;
        match trace {
            EncodeTrace::Null => linalg::axpy(1.0, d_tokens, grads.null_token.data_mut()),
            EncodeTrace::Label(label) => linalg::axpy(
                1.0,
                d_tokens,
                &mut grads.label_table.data_mut()[label * d..(label + 1) * d],
            ),
            EncodeTrace::Patches { features, count } => {
                let nf = self.config.patch_features();
                linalg::acc_weight_grad(grads.patch_w.data_mut(), d_tokens, *count, d, features, nf);
                linalg::acc_col_sum(grads.patch_b.data_mut(), d_tokens, *count, d);
            }
        }
    }
}

pub fn encode_label(encoder: &ConditionEncoder, label: usize) -> Result<ConditionTokens> {
    let vocab = encoder.config.vocab;
    if label >= vocab {
        return Err(Error::InvalidCondition(format!(
            "label {label} outside vocabulary of {vocab}"
        )));
    }
    let d = encoder.config.token_dim;
    let row = encoder.label_table.data()[label * d..(label + 1) * d].to_vec();
    Ok(ConditionTokens {
        tokens: Tensor::from_parts(vec![1, d], row),
    })
}

/// Encodes a binary layout mask (`classes = 2`) or a semantic map.
pub fn encode_mask(encoder: &ConditionEncoder, map: &Tensor, classes: usize) -> Result<ConditionTokens> {
    encoder.encode_map_traced(map, classes).map(|(t, _)| t)
}

pub fn null_condition(encoder: &ConditionEncoder) -> ConditionTokens {
    ConditionTokens {
        tokens: encoder.null_token.clone(),
    }
}

/// Per-patch class counts, `[patch index][class]`.
pub fn patch_histograms(map: &Tensor, classes: usize, patch: usize) -> Result<Vec<Vec<usize>>> {
    check_map(map, classes)?;
    let (h, w) = (map.shape()[0], map.shape()[1]);
    if h % patch != 0 || w % patch != 0 {
        return Err(Error::InvalidCondition(format!("map {h}x{w} not divisible by {patch}")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let mut out = vec![vec![0usize; classes]; gh * gw];
    for y in 0..h {
        for x in 0..w {
            out[(y / patch) * gw + x / patch][map.data()[y * w + x] as usize] += 1;
        }
    }
    Ok(out)
}

/// Wavelengths (in patch units) shared by pixel and patch positional encodings.
pub(crate) fn wavelength(grid: usize, k: usize) -> f64 {
    2.0 * grid.max(1) as f64 / (1u64 << k) as f64
}

/// Sinusoidal features of a continuous grid coordinate pair, `4 · freqs` wide.
pub(crate) fn grid_features(freqs: usize, grid: (usize, usize), coord: (f64, f64), out: &mut [f64]) {
    for k in 0..freqs {
        let wy = 2.0 * PI / wavelength(grid.0, k);
        let wx = 2.0 * PI / wavelength(grid.1, k);
        out[4 * k] = libm::sin(wy * coord.0);
        out[4 * k + 1] = libm::cos(wy * coord.0);
        out[4 * k + 2] = libm::sin(wx * coord.1);
        out[4 * k + 3] = libm::cos(wx * coord.1);
    }
}

/// Fixed positional part of the token for patch `(gy, gx)` on a `gh × gw` grid.
pub fn patch_position_encoding(cfg: &ConditionConfig, gh: usize, gw: usize, gy: usize, gx: usize) -> Vec<f64> {
    let mut out = vec![0.0; cfg.token_dim];
    grid_features(cfg.pos_freqs, (gh, gw), (gy as f64 + 0.5, gx as f64 + 0.5), &mut out);
    out
}
