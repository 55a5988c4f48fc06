//! The conditional bridge objective, its gradients and the optimizer.
//!
//! Per sample the loss is `w(t) ‖m_t (z_a − z_b) + √δ_t ε − ε_θ(z_t, t, z_a, z_c)‖²`
//! with `t` uniform on `{1, …, T−1}`; a batch loss is the mean over samples.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bridge::{forward_marginal_with_eps, network_target};
use crate::data::PairedSample;
use crate::denoiser::{init_params, DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::numerics::{sample_standard_normal, RngState, Tensor};
use crate::schedule::{BridgeSchedule, ScheduleConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Weight 1 for every step.
    Uniform,
    /// Weight `1 / t`.
    InverseT,
    /// Weight `c_eps` of the adjacent reverse step `t → t − 1`.
    PosteriorCeps,
}

/// Training hyperparameters.
///
/// Large-scale runs used `T = 1000` and `lr = 1e-5`; the defaults here are
/// sized for the toy tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(rename = "T")]
    pub steps_total: usize,
    pub s: f64,
    pub batch: usize,
    pub steps: u64,
    pub lr: f64,
    pub weight_mode: WeightMode,
    pub seed: u64,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps_total: 50,
            s: 1.0,
            batch: 64,
            steps: 2000,
            lr: 1e-3,
            weight_mode: WeightMode::Uniform,
            seed: 0,
            grad_clip: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            steps: self.steps_total,
            s: self.s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.lr < 0.0 || !self.lr.is_finite() || self.grad_clip.is_nan() || self.grad_clip <= 0.0
        {
            return Err(Error::InvalidConfig(format!("bad training config {self:?}")));
        }
        BridgeSchedule::new(self.schedule()).map(|_| ())
    }
}

pub fn loss_weight(sched: &BridgeSchedule, t: usize, mode: WeightMode) -> Result<f64> {
    Ok(match mode {
        WeightMode::Uniform => 1.0,
        WeightMode::InverseT => 1.0 / t as f64,
        WeightMode::PosteriorCeps => sched.posterior_coefficients(t, t - 1)?.c_eps,
    })
}

/// The random part of one loss evaluation for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Tensor,
}

pub fn draw_noise(sched: &BridgeSchedule, batch: &[&PairedSample], rng: &mut RngState) -> Result<Vec<NoiseDraw>> {
    batch
        .iter()
        .map(|s| {
            let t = rng.range(1, sched.steps());
            Ok(NoiseDraw {
                t,
                eps: sample_standard_normal(rng, s.post.shape())?,
            })
        })
        .collect()
}

/// Loss of one sample with fixed noise; gradients (scaled by `grad_scale`) are
/// accumulated into `grads`.
pub fn sample_loss(
    params: &DenoiserParams,
    sched: &BridgeSchedule,
    sample: &PairedSample,
    draw: &NoiseDraw,
    mode: WeightMode,
    grad_scale: f64,
    grads: &mut DenoiserParams,
) -> Result<f64> {
    let (z_b, z_a) = (&sample.post, &sample.pre);
    let z_t = forward_marginal_with_eps(sched, z_b, z_a, draw.t, &draw.eps)?;
    let target = network_target(sched, z_b, z_a, draw.t, &draw.eps)?;
    let weight = loss_weight(sched, draw.t, mode)?;
    let (tokens, enc_trace) = params.encoder.encode_traced(&sample.cond)?;
    let (pred, cache) = params.forward_cached(&z_t, draw.t, z_a, &tokens)?;
    let mut loss = 0.0;
    let d_out: Vec<f64> = pred
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| {
            loss += (y - p) * (y - p);
            2.0 * weight * grad_scale * (p - y)
        })
        .collect();
    let d_tokens = params.backward(&cache, &d_out, grads);
    params.encoder.backward(&enc_trace, &d_tokens, &mut grads.encoder);
    Ok(weight * loss)
}

/// Batch-mean loss and its gradient for fixed noise draws.
pub fn loss_with_draws(
    params: &DenoiserParams,
    sched: &BridgeSchedule,
    batch: &[&PairedSample],
    draws: &[NoiseDraw],
    mode: WeightMode,
) -> Result<(f64, DenoiserParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("loss needs a nonempty batch".into()));
    }
    if batch.len() != draws.len() {
        return Err(Error::InvalidInput(format!(
            "{} samples but {} noise draws",
            batch.len(),
            draws.len()
        )));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for (sample, draw) in batch.iter().zip(draws) {
        total += sample_loss(params, sched, sample, draw, mode, scale, &mut grads)?;
    }
    Ok((total * scale, grads))
}

pub fn loss(
    params: &DenoiserParams,
    sched: &BridgeSchedule,
    batch: &[&PairedSample],
    rng: &mut RngState,
    mode: WeightMode,
) -> Result<(f64, DenoiserParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("loss needs a nonempty batch".into()));
    }
    let draws = draw_noise(sched, batch, rng)?;
    loss_with_draws(params, sched, batch, &draws, mode)
}

/// Adaptive-moment optimizer with bias correction and no weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
    }
}

fn global_norm(grads: &DenoiserParams) -> f64 {
    libm::sqrt(grads.tensors().iter().map(|t| t.sum_sq()).sum())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Everything needed to continue training bit-identically.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub schedule: BridgeSchedule,
    pub params: DenoiserParams,
    pub adam: Adam,
    pub rng: RngState,
    pub step: u64,
}

impl TrainState {
    pub fn new(config: TrainConfig, model: &DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let schedule = BridgeSchedule::new(config.schedule())?;
        let mut rng = RngState::new(config.seed);
        let (mut init_rng, train_rng) = rng.split();
        let params = init_params(&mut init_rng, model)?;
        Ok(Self::from_parts(config, schedule, params, None, train_rng, 0))
    }

    pub fn from_parts(
        config: TrainConfig,
        schedule: BridgeSchedule,
        params: DenoiserParams,
        adam: Option<Adam>,
        rng: RngState,
        step: u64,
    ) -> Self {
        let adam = adam.unwrap_or_else(|| {
            let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
            Adam::new(config.lr, &sizes)
        });
        Self {
            config,
            schedule,
            params,
            adam,
            rng,
            step,
        }
    }

    /// Draws batch indices uniformly with replacement.
    pub fn next_batch<'a>(&mut self, dataset: &'a [PairedSample]) -> Result<Vec<&'a PairedSample>> {
        if dataset.is_empty() {
            return Err(Error::InvalidInput("dataset is empty".into()));
        }
        Ok((0..self.config.batch)
            .map(|_| &dataset[self.rng.range(0, dataset.len())])
            .collect())
    }

    pub fn train_step(&mut self, batch: &[&PairedSample]) -> Result<StepMetrics> {
        let draws = draw_noise(&self.schedule, batch, &mut self.rng)?;
        let (loss, mut grads) = loss_with_draws(&self.params, &self.schedule, batch, &draws, self.config.weight_mode)?;
        let grad_norm = global_norm(&grads);
        if !loss.is_finite() || !grad_norm.is_finite() {
            let ts: Vec<usize> = draws.iter().map(|d| d.t).collect();
            let mut detail = String::new();
            detail.push_str(&format!("loss={loss} grad_norm={grad_norm} t={ts:?}"));
            for (i, s) in batch.iter().enumerate() {
                detail.push_str(&format!(
                    " | sample {i}: pre_norm={} post_norm={} cond={:?}",
                    s.pre.l2_norm(),
                    s.post.l2_norm(),
                    s.cond.kind()
                ));
            }
            return Err(Error::Diverged {
                step: self.step,
                detail,
            });
        }
        if grad_norm > self.config.grad_clip {
            let k = self.config.grad_clip / grad_norm;
            grads
                .tensors_mut()
                .into_iter()
                .for_each(|t| t.data_mut().iter_mut().for_each(|g| *g *= k));
        }
        let grad_slices: Vec<&[f64]> = grads.tensors().into_iter().map(|t| t.data()).collect();
        let mut param_slices: Vec<&mut [f64]> = self.params.tensors_mut().into_iter().map(|t| t.data_mut()).collect();
        self.adam.update(&mut param_slices, &grad_slices);
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            loss,
            grad_norm,
        })
    }

    /// Samples a batch from `dataset` and takes one optimizer step.
    pub fn advance(&mut self, dataset: &[PairedSample]) -> Result<StepMetrics> {
        let batch = self.next_batch(dataset)?;
        self.train_step(&batch)
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `name[index]` of the worst parameter.
    pub worst: String,
}

/// Relative error `|a − f| / max(|a|, |f|, 1e-6)` between the analytic
/// gradient and a central difference with step `h`, over `count` parameters.
///
/// Every parameter tensor contributes at least one entry; the rest are drawn
/// uniformly over all scalars.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    params: &DenoiserParams,
    sched: &BridgeSchedule,
    batch: &[&PairedSample],
    draws: &[NoiseDraw],
    mode: WeightMode,
    count: usize,
    h: f64,
    rng: &mut RngState,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_with_draws(params, sched, batch, draws, mode)?;
    let names = params.names();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut picks: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(i, &n)| (i, rng.range(0, n))).collect();
    while picks.len() < count {
        let mut flat = rng.range(0, total);
        let mut ti = 0;
        while flat >= sizes[ti] {
            flat -= sizes[ti];
            ti += 1;
        }
        picks.push((ti, flat));
    }
    let grad_tensors = grads.tensors();
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for &(ti, j) in &picks {
        let original = probe.tensors()[ti].data()[j];
        probe.tensors_mut()[ti].data_mut()[j] = original + h;
        let (up, _) = loss_with_draws(&probe, sched, batch, draws, mode)?;
        probe.tensors_mut()[ti].data_mut()[j] = original - h;
        let (down, _) = loss_with_draws(&probe, sched, batch, draws, mode)?;
        probe.tensors_mut()[ti].data_mut()[j] = original;
        let fd = (up - down) / (2.0 * h);
        let an = grad_tensors[ti].data()[j];
        let rel = libm::fabs(an - fd) / libm::fabs(an).max(libm::fabs(fd)).max(1e-6);
        report.checked += 1;
        if rel > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = rel.max(report.max_rel_err);
            report.worst = format!("{}[{j}]", names[ti]);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{ConditionConfig, ConditionPayload};

    fn model() -> DenoiserConfig {
        DenoiserConfig {
            latent_shape: vec![1],
            hidden: 6,
            blocks: 1,
            attn_dim: 3,
            time_dim: 4,
            condition: ConditionConfig {
                vocab: 2,
                classes: 2,
                patch: 4,
                token_dim: 4,
                pos_freqs: 1,
            },
        }
    }

    fn scalar_sample(pre: f64, post: f64) -> PairedSample {
        PairedSample::new(
            Tensor::scalar(pre).unwrap(),
            Tensor::scalar(post).unwrap(),
            ConditionPayload::Label(0),
        )
        .unwrap()
    }

    #[test]
    fn zero_predictor_loss_is_target_norm() {
        let sched = BridgeSchedule::new(ScheduleConfig { steps: 1000, s: 1.0 }).unwrap();
        let params = init_params(&mut RngState::new(1), &model()).unwrap();
        let sample = scalar_sample(2.0, 0.0);
        let draw = NoiseDraw {
            t: 500,
            eps: Tensor::scalar(0.0).unwrap(),
        };
        let (l, _) = loss_with_draws(&params, &sched, &[&sample], &[draw], WeightMode::Uniform).unwrap();
        assert_eq!(l, 1.0);
    }

    #[test]
    fn empty_batch_rejected() {
        let sched = BridgeSchedule::new(ScheduleConfig { steps: 10, s: 1.0 }).unwrap();
        let params = init_params(&mut RngState::new(1), &model()).unwrap();
        assert!(matches!(
            loss(&params, &sched, &[], &mut RngState::new(0), WeightMode::Uniform),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn weights() {
        let sched = BridgeSchedule::new(ScheduleConfig { steps: 4, s: 1.0 }).unwrap();
        assert_eq!(loss_weight(&sched, 2, WeightMode::Uniform).unwrap(), 1.0);
        assert_eq!(loss_weight(&sched, 2, WeightMode::InverseT).unwrap(), 0.5);
        assert!((loss_weight(&sched, 2, WeightMode::PosteriorCeps).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut adam = Adam::new(0.1, &[2]);
        let mut p = vec![3.0, -2.0];
        let f = |p: &[f64]| p[0] * p[0] + 4.0 * p[1] * p[1];
        let before = f(&p);
        let g = vec![2.0 * p[0], 8.0 * p[1]];
        adam.update(&mut [&mut p], &[&g]);
        assert!(f(&p) < before);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let config = TrainConfig {
            steps_total: 10,
            lr: 0.0,
            batch: 4,
            ..TrainConfig::default()
        };
        let data: Vec<PairedSample> = (0..8)
            .map(|i| scalar_sample(i as f64 * 0.1, 1.0 - i as f64 * 0.2))
            .collect();
        let mut state = TrainState::new(config, &model()).unwrap();
        let before = state.params.clone();
        for _ in 0..3 {
            state.advance(&data).unwrap();
        }
        assert_eq!(state.params, before);
        assert_eq!(state.step, 3);
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut state = TrainState::new(TrainConfig::default(), &model()).unwrap();
        assert!(state.advance(&[]).is_err());
    }
}
