//! Closed-form quantities of the discrete Brownian bridge.
//!
//! With `m_t = t / T` and `δ_t = 2 s (m_t − m_t²)` the marginal law is
//! `z_t ~ N((1 − m_t) z_b + m_t z_a, δ_t)`. Between any two steps
//! `t_lo < t_hi` the forward kernel is Gaussian with mean
//! `a z_{t_lo} + (m_{t_hi} − a m_{t_lo}) z_a`, `a = (1 − m_{t_hi}) / (1 − m_{t_lo})`,
//! and variance `δ_{t_hi} − a² δ_{t_lo}`, which is exactly what makes the
//! kernels compose back to the marginal.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized form of a schedule: `{"T": int, "s": float}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BridgeSchedule {
    steps: usize,
    scale: f64,
    m: Vec<f64>,
    delta: Vec<f64>,
}

/// Reverse-step coefficients for a pair `t_lo < t_hi`.
///
/// The reverse mean is `c_b z_t + c_a z_a − c_eps ε̂` where `ε̂` predicts
/// `m_t (z_a − z_b) + √δ_t ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCoefficients {
    pub c_b: f64,
    pub c_a: f64,
    pub c_eps: f64,
    pub tilde_delta: f64,
    pub delta_trans: f64,
}

/// Mean map of the forward kernel `z_{t_hi} | z_{t_lo}, z_a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionCoefficients {
    /// Weight on `z_{t_lo}`.
    pub prev: f64,
    /// Weight on `z_a`.
    pub anchor: f64,
    pub variance: f64,
}

pub fn build_schedule(steps: usize, s: f64) -> Result<BridgeSchedule> {
    if steps < 2 {
        return Err(Error::InvalidConfig(format!("T must be at least 2, got {steps}")));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "variance scale must be positive, got {s}"
        )));
    }
    let total = steps as f64;
    let m: Vec<f64> = (0..=steps).map(|t| t as f64 / total).collect();
    let delta = m.iter().map(|&mt| 2.0 * s * (mt - mt * mt)).collect();
    Ok(BridgeSchedule {
        steps,
        scale: s,
        m,
        delta,
    })
}

impl BridgeSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        build_schedule(config.steps, config.s)
    }

    pub fn config(&self) -> ScheduleConfig {
        ScheduleConfig {
            steps: self.steps,
            s: self.scale,
        }
    }

    /// Number of training steps `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn m(&self, t: usize) -> f64 {
        self.m[t]
    }

    pub fn delta(&self, t: usize) -> f64 {
        self.delta[t]
    }

    pub fn m_table(&self) -> &[f64] {
        &self.m
    }

    pub fn delta_table(&self) -> &[f64] {
        &self.delta
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(Error::InvalidStep(format!("t={t} outside 0..={}", self.steps)));
        }
        Ok(())
    }

    fn check_pair(&self, t_hi: usize, t_lo: usize) -> Result<()> {
        if t_lo >= t_hi {
            return Err(Error::InvalidStep(format!(
                "need t_lo < t_hi, got t_hi={t_hi}, t_lo={t_lo}"
            )));
        }
        self.check_t(t_hi)
    }

    /// `δ_{t_hi|t_lo} = δ_{t_hi} − δ_{t_lo} ((1 − m_{t_hi}) / (1 − m_{t_lo}))²`, clamped at 0.
    pub fn transition_variance(&self, t_hi: usize, t_lo: usize) -> Result<f64> {
        self.check_pair(t_hi, t_lo)?;
        let a = (1.0 - self.m[t_hi]) / (1.0 - self.m[t_lo]);
        Ok((self.delta[t_hi] - self.delta[t_lo] * a * a).max(0.0))
    }

    pub fn transition_coefficients(&self, t_hi: usize, t_lo: usize) -> Result<TransitionCoefficients> {
        let variance = self.transition_variance(t_hi, t_lo)?;
        let prev = (1.0 - self.m[t_hi]) / (1.0 - self.m[t_lo]);
        Ok(TransitionCoefficients {
            prev,
            anchor: self.m[t_hi] - prev * self.m[t_lo],
            variance,
        })
    }

    /// Coefficients of the Gaussian posterior `z_{t_lo} | z_{t_hi}, z_b, z_a`
    /// rewritten in terms of the network target.
    ///
    /// Fails with [`Error::DivisionByZero`] at `t_hi = T`, where `δ_T = 0`;
    /// the sampler handles that step separately.
    pub fn posterior_coefficients(&self, t_hi: usize, t_lo: usize) -> Result<StepCoefficients> {
        self.check_pair(t_hi, t_lo)?;
        let d_hi = self.delta[t_hi];
        if d_hi <= 0.0 {
            return Err(Error::DivisionByZero { t_hi });
        }
        let (m_hi, m_lo, d_lo) = (self.m[t_hi], self.m[t_lo], self.delta[t_lo]);
        let delta_trans = self.transition_variance(t_hi, t_lo)?;
        let ratio = (1.0 - m_hi) / (1.0 - m_lo);
        let c_b = d_lo / d_hi * ratio + delta_trans / d_hi * (1.0 - m_lo);
        let c_a = m_lo - m_hi * ratio * d_lo / d_hi;
        let c_eps = (1.0 - m_lo) * delta_trans / d_hi;
        let tilde_delta = (delta_trans * d_lo / d_hi).max(0.0);
        Ok(StepCoefficients {
            c_b,
            c_a,
            c_eps,
            tilde_delta,
            delta_trans,
        })
    }
}

/// Decreasing step subsequence `T = t'_S > … > t'_0 = 0` with even spacing.
pub fn inference_steps(total: usize, count: usize) -> Result<Vec<usize>> {
    if count < 2 || count > total {
        return Err(Error::InvalidConfig(format!(
            "inference steps must satisfy 2 <= S <= T, got S={count}, T={total}"
        )));
    }
    let spacing = total as f64 / count as f64;
    let mut steps: Vec<usize> = (0..=count)
        .rev()
        .map(|s| {
            if s == count {
                total
            } else {
                libm::round(s as f64 * spacing) as usize
            }
        })
        .collect();
    steps.dedup();
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn tables_for_t4() {
        let s = build_schedule(4, 1.0).unwrap();
        assert_eq!(s.m_table(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(s.delta_table(), &[0.0, 0.375, 0.5, 0.375, 0.0]);
    }

    #[test]
    fn midpoint_of_t1000() {
        let s = build_schedule(1000, 1.0).unwrap();
        assert_eq!(s.m(500), 0.5);
        assert_eq!(s.delta(500), 0.5);
        assert_eq!(s.delta(1000), 0.0);
        assert_eq!(s.m(1000), 1.0);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(matches!(build_schedule(1, 1.0), Err(Error::InvalidConfig(_))));
        assert!(matches!(build_schedule(10, 0.0), Err(Error::InvalidConfig(_))));
        assert!(matches!(build_schedule(10, -1.0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn transition_variance_examples() {
        let s = build_schedule(4, 1.0).unwrap();
        let v = s.transition_variance(2, 1).unwrap();
        assert!(close(v, 1.0 / 3.0, 1e-15));
        // composition: a² δ_lo + δ_trans = δ_hi
        let a: f64 = 0.5 / 0.75;
        assert!(close(a * a * 0.375 + v, 0.5, 1e-15));
        assert_eq!(s.transition_variance(1, 0).unwrap(), s.delta(1));
        assert_eq!(s.transition_variance(4, 2).unwrap(), 0.0);
        assert!(matches!(s.transition_variance(1, 1), Err(Error::InvalidStep(_))));
        assert!(matches!(s.transition_variance(1, 2), Err(Error::InvalidStep(_))));
    }

    #[test]
    fn printed_orientation_breaks_composition() {
        // δ_t − δ_{t−1} (1 − m_{t−1})² / (1 − m_t)² does not compose to the marginal.
        let s = build_schedule(4, 1.0).unwrap();
        let printed = s.delta(2) - s.delta(1) * (0.75f64 / 0.5).powi(2);
        let a: f64 = 0.5 / 0.75;
        assert!((a * a * s.delta(1) + printed - s.delta(2)).abs() > 0.1);
    }

    #[test]
    fn posterior_coefficients_t4() {
        let s = build_schedule(4, 1.0).unwrap();
        let c = s.posterior_coefficients(2, 1).unwrap();
        assert!(close(c.c_b, 1.0, 1e-15));
        assert!(close(c.c_a, 0.0, 1e-15));
        assert!(close(c.c_eps, 0.5, 1e-15));
        assert!(close(c.tilde_delta, 0.25, 1e-15));
        assert!(close(c.tilde_delta, c.delta_trans * s.delta(1) / s.delta(2), 1e-15));
    }

    #[test]
    fn posterior_at_terminal_step_is_division_by_zero() {
        let s = build_schedule(4, 1.0).unwrap();
        assert_eq!(s.posterior_coefficients(4, 3), Err(Error::DivisionByZero { t_hi: 4 }));
    }

    #[test]
    fn adjacent_coefficients_simplify_for_any_scale() {
        for &scale in &[1.0, 0.3, 2.5] {
            let s = build_schedule(1000, scale).unwrap();
            for t in 1..1000 {
                let c = s.posterior_coefficients(t, t - 1).unwrap();
                assert!(close(c.c_a, 0.0, 1e-12), "t={t} c_a={}", c.c_a);
                assert!(close(c.c_b, 1.0, 1e-12), "t={t} c_b={}", c.c_b);
            }
        }
    }

    #[test]
    fn last_step_is_deterministic() {
        let s = build_schedule(50, 1.7).unwrap();
        let c = s.posterior_coefficients(1, 0).unwrap();
        assert_eq!(c.tilde_delta, 0.0);
        assert!(close(c.c_eps, 1.0, 1e-15));
    }

    #[test]
    fn inference_step_examples() {
        assert_eq!(inference_steps(4, 4).unwrap(), vec![4, 3, 2, 1, 0]);
        assert_eq!(inference_steps(10, 2).unwrap(), vec![10, 5, 0]);
        let long = inference_steps(1000, 200).unwrap();
        assert_eq!(long.len(), 201);
        assert_eq!(long[0], 1000);
        assert_eq!(*long.last().unwrap(), 0);
        assert!(long.windows(2).all(|w| w[0] > w[1]));
        assert!(inference_steps(10, 11).is_err());
        assert!(inference_steps(10, 1).is_err());
    }
}
