//! Forward noising, the network target and the reverse sampler.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::conditioning::ConditionTokens;
use crate::denoiser::{denoiser_forward, DenoiserParams};
use crate::error::{Error, Result};
use crate::numerics::{sample_standard_normal, RngState, Tensor};
use crate::schedule::{inference_steps, BridgeSchedule};

/// Anything that predicts the network target `m_t (z_a − z_b) + √δ_t ε`.
pub trait NoisePredictor {
    fn predict(&self, z_t: &Tensor, t: usize, z_a: &Tensor, cond: &ConditionTokens) -> Result<Tensor>;
}

impl NoisePredictor for DenoiserParams {
    fn predict(&self, z_t: &Tensor, t: usize, z_a: &Tensor, cond: &ConditionTokens) -> Result<Tensor> {
        denoiser_forward(self, z_t, t, z_a, cond)
    }
}

/// Test double that knows the true `z_b` and returns the exact target for the
/// current `z_t`, i.e. `z_t − z_b`. On the noise-free path this equals
/// `m_t (z_a − z_b)`.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    pub z_b: Tensor,
}

pub fn oracle_denoiser(z_b: &Tensor) -> OracleDenoiser {
    OracleDenoiser { z_b: z_b.clone() }
}

impl NoisePredictor for OracleDenoiser {
    fn predict(&self, z_t: &Tensor, _t: usize, _z_a: &Tensor, _cond: &ConditionTokens) -> Result<Tensor> {
        z_t.sub(&self.z_b)
    }
}

/// `(1 − m_t) z_b + m_t z_a + √δ_t ε` for a given `ε`.
pub fn forward_marginal_with_eps(
    sched: &BridgeSchedule,
    z_b: &Tensor,
    z_a: &Tensor,
    t: usize,
    eps: &Tensor,
) -> Result<Tensor> {
    sched.check_t(t)?;
    z_b.check_same_shape(z_a)?;
    z_b.check_same_shape(eps)?;
    let (m, sd) = (sched.m(t), libm::sqrt(sched.delta(t)));
    let data = z_b
        .data()
        .iter()
        .zip(z_a.data())
        .zip(eps.data())
        .map(|((&b, &a), &e)| (1.0 - m) * b + m * a + sd * e)
        .collect();
    Ok(Tensor::from_parts(z_b.shape().to_vec(), data))
}

/// Draws `z_t ~ q(z_t | z_b, z_a)`; returns `(z_t, ε)`.
pub fn forward_marginal_sample(
    sched: &BridgeSchedule,
    z_b: &Tensor,
    z_a: &Tensor,
    t: usize,
    rng: &mut RngState,
) -> Result<(Tensor, Tensor)> {
    z_b.check_same_shape(z_a)?;
    sched.check_t(t)?;
    let eps = sample_standard_normal(rng, z_b.shape())?;
    let z_t = forward_marginal_with_eps(sched, z_b, z_a, t, &eps)?;
    Ok((z_t, eps))
}

/// One Markov step `z_{t-1} → z_t` with explicit unit noise.
pub fn forward_transition_with_noise(
    sched: &BridgeSchedule,
    z_prev: &Tensor,
    z_a: &Tensor,
    t: usize,
    noise: &Tensor,
) -> Result<Tensor> {
    if t == 0 || t > sched.steps() {
        return Err(Error::InvalidStep(format!(
            "transition needs 1 <= t <= {}, got {t}",
            sched.steps()
        )));
    }
    z_prev.check_same_shape(z_a)?;
    z_prev.check_same_shape(noise)?;
    let k = sched.transition_coefficients(t, t - 1)?;
    let sd = libm::sqrt(k.variance);
    let data = z_prev
        .data()
        .iter()
        .zip(z_a.data())
        .zip(noise.data())
        .map(|((&p, &a), &e)| k.prev * p + k.anchor * a + sd * e)
        .collect();
    Ok(Tensor::from_parts(z_prev.shape().to_vec(), data))
}

pub fn forward_transition_sample(
    sched: &BridgeSchedule,
    z_prev: &Tensor,
    z_a: &Tensor,
    t: usize,
    rng: &mut RngState,
) -> Result<Tensor> {
    if t == 0 || t > sched.steps() {
        return Err(Error::InvalidStep(format!(
            "transition needs 1 <= t <= {}, got {t}",
            sched.steps()
        )));
    }
    let noise = sample_standard_normal(rng, z_prev.shape())?;
    forward_transition_with_noise(sched, z_prev, z_a, t, &noise)
}

/// Inverts the marginal: `ε = (z_t − (1 − m_t) z_b − m_t z_a) / √δ_t`.
pub fn exact_epsilon(sched: &BridgeSchedule, z_t: &Tensor, z_b: &Tensor, z_a: &Tensor, t: usize) -> Result<Tensor> {
    sched.check_t(t)?;
    if t == 0 || t == sched.steps() {
        return Err(Error::DegenerateStep { t });
    }
    z_t.check_same_shape(z_b)?;
    z_t.check_same_shape(z_a)?;
    let (m, sd) = (sched.m(t), libm::sqrt(sched.delta(t)));
    let data = z_t
        .data()
        .iter()
        .zip(z_b.data())
        .zip(z_a.data())
        .map(|((&zt, &b), &a)| (zt - (1.0 - m) * b - m * a) / sd)
        .collect();
    Ok(Tensor::from_parts(z_t.shape().to_vec(), data))
}

/// Regression target `m_t (z_a − z_b) + √δ_t ε`.
pub fn network_target(sched: &BridgeSchedule, z_b: &Tensor, z_a: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
    sched.check_t(t)?;
    if t == 0 {
        return Err(Error::InvalidStep("network target is undefined at t = 0".into()));
    }
    z_b.check_same_shape(z_a)?;
    z_b.check_same_shape(eps)?;
    let (m, sd) = (sched.m(t), libm::sqrt(sched.delta(t)));
    let data = z_b
        .data()
        .iter()
        .zip(z_a.data())
        .zip(eps.data())
        .map(|((&b, &a), &e)| m * (a - b) + sd * e)
        .collect();
    Ok(Tensor::from_parts(z_b.shape().to_vec(), data))
}

/// `c_b z_t + c_a z_a − c_eps ε̂ (+ √δ̃ ε when stochastic)`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step(
    sched: &BridgeSchedule,
    z_t: &Tensor,
    z_a: &Tensor,
    eps_pred: &Tensor,
    t_hi: usize,
    t_lo: usize,
    rng: &mut RngState,
    stochastic: bool,
) -> Result<Tensor> {
    z_t.check_same_shape(z_a)?;
    z_t.check_same_shape(eps_pred)?;
    let c = sched.posterior_coefficients(t_hi, t_lo)?;
    let sd = libm::sqrt(c.tilde_delta);
    let mut data: Vec<f64> = z_t
        .data()
        .iter()
        .zip(z_a.data())
        .zip(eps_pred.data())
        .map(|((&zt, &a), &e)| c.c_b * zt + c.c_a * a - c.c_eps * e)
        .collect();
    if stochastic && sd > 0.0 {
        for v in &mut data {
            *v += sd * rng.standard_normal();
        }
    }
    Ok(Tensor::from_parts(z_t.shape().to_vec(), data))
}

/// First reverse step out of `t = T`, where `δ_T = 0` leaves the posterior
/// coefficients undefined. `z_0` is estimated as `z_T − ε̂` and the bridge
/// marginal at `t_lo` given `(ẑ_0, z_a)` is used.
pub fn start_step(
    sched: &BridgeSchedule,
    z_a: &Tensor,
    eps_pred: &Tensor,
    t_lo: usize,
    rng: &mut RngState,
    stochastic: bool,
) -> Result<Tensor> {
    if t_lo >= sched.steps() {
        return Err(Error::InvalidStep(format!("start step needs t_lo < T, got {t_lo}")));
    }
    z_a.check_same_shape(eps_pred)?;
    let (m, sd) = (sched.m(t_lo), libm::sqrt(sched.delta(t_lo)));
    let mut data: Vec<f64> = z_a
        .data()
        .iter()
        .zip(eps_pred.data())
        .map(|(&a, &e)| (1.0 - m) * (a - e) + m * a)
        .collect();
    if stochastic && sd > 0.0 {
        for v in &mut data {
            *v += sd * rng.standard_normal();
        }
    }
    Ok(Tensor::from_parts(z_a.shape().to_vec(), data))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceMode {
    /// Keep at most this many evenly spaced snapshots (first and last always kept).
    Sparse(usize),
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleOptions {
    pub steps: usize,
    pub stochastic: bool,
    pub trace: TraceMode,
}

impl SampleOptions {
    pub fn deterministic(steps: usize) -> Self {
        Self {
            steps,
            stochastic: false,
            trace: TraceMode::Sparse(32),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace {
    pub steps: Vec<(usize, Tensor)>,
    pub final_latent: Tensor,
}

fn snapshot_indices(len: usize, mode: TraceMode) -> Vec<bool> {
    match mode {
        TraceMode::Full => vec![true; len],
        TraceMode::Sparse(k) => {
            let mut keep = vec![false; len];
            let k = k.max(2);
            if len <= k {
                keep.iter_mut().for_each(|v| *v = true);
            } else {
                for j in 0..k {
                    let i = libm::round(j as f64 * (len - 1) as f64 / (k - 1) as f64) as usize;
                    keep[i] = true;
                }
            }
            keep
        }
    }
}

/// Runs the reverse chain from `z_T = z_a` down to `t = 0`.
pub fn sample<P: NoisePredictor + ?Sized>(
    sched: &BridgeSchedule,
    predictor: &P,
    z_a: &Tensor,
    cond: &ConditionTokens,
    options: SampleOptions,
    rng: &mut RngState,
) -> Result<SampleTrace> {
    let steps = inference_steps(sched.steps(), options.steps)?;
    let keep = snapshot_indices(steps.len(), options.trace);
    let mut trace = Vec::new();
    let mut z = z_a.clone();
    trace.push((steps[0], z.clone()));
    for (i, pair) in steps.windows(2).enumerate() {
        let (t_hi, t_lo) = (pair[0], pair[1]);
        let eps = predictor.predict(&z, t_hi, z_a, cond)?;
        z = if t_hi == sched.steps() {
            start_step(sched, z_a, &eps, t_lo, rng, options.stochastic)?
        } else {
            reverse_step(sched, &z, z_a, &eps, t_hi, t_lo, rng, options.stochastic)?
        };
        if keep[i + 1] {
            trace.push((t_lo, z.clone()));
        }
    }
    Ok(SampleTrace {
        steps: trace,
        final_latent: z,
    })
}
