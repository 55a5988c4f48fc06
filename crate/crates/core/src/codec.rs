//! Latent codec `z = E(x)`, `x' = D(z)`: identity or a trained linear autoencoder.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::numerics::{element_count, RngState, Tensor};
use crate::training::Adam;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearCodec {
    pub input_shape: Vec<usize>,
    /// `[k, D]`
    pub enc_w: Tensor,
    pub enc_b: Tensor,
    /// `[D, k]`
    pub dec_w: Tensor,
    pub dec_b: Tensor,
}

#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq)]
pub enum Codec {
    Identity,
    Linear(LinearCodec),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecTrainConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self { epochs: 500, lr: 1e-2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecTrainReport {
    /// Mean squared reconstruction error before each epoch's update.
    pub losses: Vec<f64>,
    /// Set when there was nothing to train.
    pub skipped: bool,
}

impl LinearCodec {
    pub fn init(rng: &mut RngState, input_shape: &[usize], bottleneck: usize) -> Result<Self> {
        let d = element_count(input_shape)?;
        if bottleneck == 0 || bottleneck > d {
            return Err(Error::InvalidConfig(format!(
                "bottleneck must be in 1..={d}, got {bottleneck}"
            )));
        }
        let mut enc_w = Tensor::zeros(&[bottleneck, d])?;
        rng.fill_normal(enc_w.data_mut());
        let s = 1.0 / libm::sqrt(d as f64);
        enc_w.data_mut().iter_mut().for_each(|v| *v *= s);
        let mut dec_w = Tensor::zeros(&[d, bottleneck])?;
        rng.fill_normal(dec_w.data_mut());
        let s = 1.0 / libm::sqrt(bottleneck as f64);
        dec_w.data_mut().iter_mut().for_each(|v| *v *= s);
        Ok(Self {
            input_shape: input_shape.to_vec(),
            enc_w,
            enc_b: Tensor::zeros(&[bottleneck])?,
            dec_w,
            dec_b: Tensor::zeros(&[d])?,
        })
    }

    pub fn bottleneck(&self) -> usize {
        self.enc_w.shape()[0]
    }

    fn input_len(&self) -> usize {
        self.enc_w.shape()[1]
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.enc_w, &self.enc_b, &self.dec_w, &self.dec_b]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.enc_w, &mut self.enc_b, &mut self.dec_w, &mut self.dec_b]
    }

    fn encode_raw(&self, x: &[f64]) -> Vec<f64> {
        linalg::linear(
            x,
            1,
            self.input_len(),
            self.enc_w.data(),
            self.bottleneck(),
            Some(self.enc_b.data()),
        )
    }

    fn decode_raw(&self, z: &[f64]) -> Vec<f64> {
        linalg::linear(
            z,
            1,
            self.bottleneck(),
            self.dec_w.data(),
            self.input_len(),
            Some(self.dec_b.data()),
        )
    }
}

impl Codec {
    pub fn is_identity(&self) -> bool {
        matches!(self, Codec::Identity)
    }

    /// Shape of the latent produced for an input of shape `input`.
    pub fn latent_shape(&self, input: &[usize]) -> Vec<usize> {
        match self {
            Codec::Identity => input.to_vec(),
            Codec::Linear(l) => vec![l.bottleneck()],
        }
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Codec::Identity => Ok(x.clone()),
            Codec::Linear(l) => {
                if x.shape() != l.input_shape.as_slice() {
                    return Err(Error::ShapeMismatch {
                        expected: l.input_shape.clone(),
                        actual: x.shape().to_vec(),
                    });
                }
                Ok(Tensor::from_parts(vec![l.bottleneck()], l.encode_raw(x.data())))
            }
        }
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        match self {
            Codec::Identity => Ok(z.clone()),
            Codec::Linear(l) => {
                if z.shape() != [l.bottleneck()] {
                    return Err(Error::ShapeMismatch {
                        expected: vec![l.bottleneck()],
                        actual: z.shape().to_vec(),
                    });
                }
                Ok(Tensor::from_parts(l.input_shape.clone(), l.decode_raw(z.data())))
            }
        }
    }
}

fn reconstruction_loss_grad(codec: &LinearCodec, data: &[Tensor], grads: &mut [Tensor; 4]) -> f64 {
    let (d, k) = (codec.input_len(), codec.bottleneck());
    let scale = 1.0 / (data.len() * d) as f64;
    let mut loss = 0.0;
    for x in data {
        let z = codec.encode_raw(x.data());
        let xr = codec.decode_raw(&z);
        let dx: Vec<f64> = xr.iter().zip(x.data()).map(|(a, b)| 2.0 * scale * (a - b)).collect();
        loss += xr.iter().zip(x.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * scale;
        let [gew, geb, gdw, gdb] = grads;
        linalg::acc_weight_grad(gdw.data_mut(), &dx, 1, d, &z, k);
        linalg::axpy(1.0, &dx, gdb.data_mut());
        let mut dz = vec![0.0; k];
        linalg::acc_input_grad(&mut dz, &dx, 1, d, codec.dec_w.data(), k);
        linalg::acc_weight_grad(gew.data_mut(), &dz, 1, k, x.data(), d);
        linalg::axpy(1.0, &dz, geb.data_mut());
    }
    loss
}

/// Mean squared reconstruction error per element.
pub fn reconstruction_error(codec: &Codec, data: &[Tensor]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for x in data {
        let xr = codec.decode(&codec.encode(x)?)?;
        total += xr.sub(x)?.sum_sq();
        count += x.len();
    }
    Ok(total / count as f64)
}

/// `Σ‖x − D(E(x))‖² / Σ‖x‖²`.
pub fn relative_reconstruction_error(codec: &Codec, data: &[Tensor]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for x in data {
        let xr = codec.decode(&codec.encode(x)?)?;
        num += xr.sub(x)?.sum_sq();
        den += x.sum_sq();
    }
    Ok(num / den)
}

/// Full-batch Adam on the mean squared reconstruction error.
///
/// The identity codec has no parameters and is returned unchanged with
/// `skipped` set.
pub fn train_codec(codec: &Codec, data: &[Tensor], config: CodecTrainConfig) -> Result<(Codec, CodecTrainReport)> {
    let linear = match codec {
        Codec::Identity => {
            return Ok((
                Codec::Identity,
                CodecTrainReport {
                    losses: Vec::new(),
                    skipped: true,
                },
            ))
        }
        Codec::Linear(l) => l,
    };
    if data.is_empty() {
        return Err(Error::InvalidInput("codec training needs data".into()));
    }
    for x in data {
        if x.shape() != linear.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: linear.input_shape.clone(),
                actual: x.shape().to_vec(),
            });
        }
    }
    let mut params = linear.clone();
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(config.lr, &shapes);
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut grads = [
            params.enc_w.zeros_like(),
            params.enc_b.zeros_like(),
            params.dec_w.zeros_like(),
            params.dec_b.zeros_like(),
        ];
        losses.push(reconstruction_loss_grad(&params, data, &mut grads));
        let grad_slices: Vec<&[f64]> = grads.iter().map(|g| g.data()).collect();
        let mut param_slices: Vec<&mut [f64]> = params.tensors_mut().into_iter().map(|t| t.data_mut()).collect();
        adam.update(&mut param_slices, &grad_slices);
    }
    Ok((Codec::Linear(params), CodecTrainReport { losses, skipped: false }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subspace_data(n: usize, dim: usize, rank: usize, seed: u64) -> Vec<Tensor> {
        let mut rng = RngState::new(seed);
        let basis: Vec<Vec<f64>> = (0..rank)
            .map(|_| (0..dim).map(|_| rng.standard_normal() / (dim as f64).sqrt()).collect())
            .collect();
        (0..n)
            .map(|_| {
                let coef: Vec<f64> = (0..rank).map(|_| rng.standard_normal()).collect();
                let x: Vec<f64> = (0..dim)
                    .map(|j| (0..rank).map(|r| coef[r] * basis[r][j]).sum())
                    .collect();
                Tensor::from_vec(x).unwrap()
            })
            .collect()
    }

    #[test]
    fn identity_round_trip() {
        let x = Tensor::new(vec![1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let z = Codec::Identity.encode(&x).unwrap();
        assert_eq!(z, x);
        assert_eq!(Codec::Identity.decode(&z).unwrap(), x);
        let (c, report) = train_codec(&Codec::Identity, &[x], CodecTrainConfig::default()).unwrap();
        assert!(report.skipped && c.is_identity());
    }

    #[test]
    fn zero_bottleneck_rejected() {
        assert!(LinearCodec::init(&mut RngState::new(1), &[16], 0).is_err());
    }

    #[test]
    fn loss_decreases_over_first_epochs() {
        let data = subspace_data(64, 12, 3, 2);
        let codec = Codec::Linear(LinearCodec::init(&mut RngState::new(3), &[12], 4).unwrap());
        let (_, report) = train_codec(&codec, &data, CodecTrainConfig { epochs: 11, lr: 1e-3 }).unwrap();
        assert!(report.losses.windows(2).all(|w| w[1] < w[0]), "{:?}", report.losses);
    }

    #[test]
    fn rank_sufficient_codec_recovers_subspace() {
        let data = subspace_data(64, 12, 3, 5);
        let codec = Codec::Linear(LinearCodec::init(&mut RngState::new(6), &[12], 3).unwrap());
        let (trained, _) = train_codec(
            &codec,
            &data,
            CodecTrainConfig {
                epochs: 10_000,
                lr: 1e-2,
            },
        )
        .unwrap();
        let err = reconstruction_error(&trained, &data).unwrap();
        assert!(err < 1e-6, "reconstruction error {err}");
    }

    #[test]
    fn linear_shape_mismatch() {
        let codec = Codec::Linear(LinearCodec::init(&mut RngState::new(3), &[12], 4).unwrap());
        assert!(codec.encode(&Tensor::zeros(&[11]).unwrap()).is_err());
        assert!(codec.decode(&Tensor::zeros(&[5]).unwrap()).is_err());
    }
}
