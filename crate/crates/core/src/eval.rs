//! Oracles and toy-task metrics.
//!
//! The oracles here never reuse the closed-form posterior or marginal code
//! paths they are meant to check: the marginal check draws from chained
//! transitions or the raw marginal, and the posterior oracle integrates the
//! product of the two Gaussian factors on a grid.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mean_var, RngState, Tensor};
use crate::schedule::BridgeSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalReport {
    pub t: usize,
    pub n: usize,
    pub empirical_mean: f64,
    pub empirical_var: f64,
    pub expected_mean: f64,
    pub expected_var: f64,
    /// `(mean − expected) / √(δ_t / n)`
    pub mean_z: f64,
    /// `(var − δ_t) / (δ_t √(2 / n))`
    pub var_z: f64,
    pub pass: bool,
}

fn marginal_report(t: usize, xs: &[f64], expected_mean: f64, expected_var: f64) -> MarginalReport {
    let n = xs.len();
    let (mean, var) = mean_var(xs);
    let nf = n as f64;
    let mean_z = (mean - expected_mean) / libm::sqrt(expected_var / nf);
    let var_z = (var - expected_var) / (expected_var * libm::sqrt(2.0 / nf));
    MarginalReport {
        t,
        n,
        empirical_mean: mean,
        empirical_var: var,
        expected_mean,
        expected_var,
        mean_z,
        var_z,
        pass: libm::fabs(mean_z) < 3.0 && libm::fabs(var_z) < 3.0,
    }
}

fn check_interior(sched: &BridgeSchedule, t: usize) -> Result<()> {
    if t == 0 || t >= sched.steps() {
        return Err(Error::InvalidStep(format!("marginal check needs 0 < t < T, got {t}")));
    }
    Ok(())
}

/// Direct draws from the marginal at `t` compared with its closed form at 3σ.
pub fn marginal_stats_check(
    sched: &BridgeSchedule,
    z_b: f64,
    z_a: f64,
    t: usize,
    n: usize,
    rng: &mut RngState,
) -> Result<MarginalReport> {
    check_interior(sched, t)?;
    if n < 2 {
        return Err(Error::InvalidInput("need at least two draws".into()));
    }
    let (m, d) = (sched.m(t), sched.delta(t));
    let xs: Vec<f64> = (0..n)
        .map(|_| (1.0 - m) * z_b + m * z_a + libm::sqrt(d) * rng.standard_normal())
        .collect();
    Ok(marginal_report(t, &xs, (1.0 - m) * z_b + m * z_a, d))
}

/// Runs `n` forward chains `z_0 = z_b → z_1 → …` through single-step
/// transitions and checks the state at each requested `t` against the
/// closed-form marginal.
pub fn chain_marginal_check(
    sched: &BridgeSchedule,
    z_b: f64,
    z_a: f64,
    ts: &[usize],
    n: usize,
    rng: &mut RngState,
) -> Result<Vec<MarginalReport>> {
    if n < 2 {
        return Err(Error::InvalidInput("need at least two chains".into()));
    }
    for &t in ts {
        check_interior(sched, t)?;
    }
    let t_max = ts.iter().copied().max().unwrap_or(0);
    let kernels = (1..=t_max)
        .map(|t| sched.transition_coefficients(t, t - 1))
        .collect::<Result<Vec<_>>>()?;
    let mut snapshots: Vec<Vec<f64>> = vec![Vec::with_capacity(n); ts.len()];
    for _ in 0..n {
        let mut z = z_b;
        for (i, k) in kernels.iter().enumerate() {
            z = k.prev * z + k.anchor * z_a + libm::sqrt(k.variance) * rng.standard_normal();
            let t = i + 1;
            for (slot, &want) in snapshots.iter_mut().zip(ts) {
                if want == t {
                    slot.push(z);
                }
            }
        }
    }
    Ok(ts
        .iter()
        .zip(&snapshots)
        .map(|(&t, xs)| {
            let m = sched.m(t);
            marginal_report(t, xs, (1.0 - m) * z_b + m * z_a, sched.delta(t))
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

/// Numerical posterior moments of `z_{t_lo} | z_{t_hi}, z_b, z_a`.
///
/// The unnormalized density is the marginal `N(z; (1−m_lo) z_b + m_lo z_a, δ_lo)`
/// times the forward kernel density of `z_{t_hi}` given `z`, evaluated on a
/// uniform grid and integrated with the trapezoid rule.
#[allow(clippy::too_many_arguments)]
pub fn posterior_oracle_between(
    sched: &BridgeSchedule,
    z_b: f64,
    z_a: f64,
    z_t: f64,
    t_hi: usize,
    t_lo: usize,
    grid: Grid,
) -> Result<(f64, f64)> {
    if grid.n < 4001 || grid.hi.partial_cmp(&grid.lo) != Some(core::cmp::Ordering::Greater) {
        return Err(Error::Grid(format!("need n >= 4001 and lo < hi, got {grid:?}")));
    }
    let kernel = sched.transition_coefficients(t_hi, t_lo)?;
    let d_lo = sched.delta(t_lo);
    if d_lo <= 0.0 || kernel.variance <= 0.0 {
        return Err(Error::InvalidStep(format!(
            "posterior oracle needs nonzero variances (t_hi={t_hi}, t_lo={t_lo})"
        )));
    }
    let prior_mean = (1.0 - sched.m(t_lo)) * z_b + sched.m(t_lo) * z_a;
    let h = (grid.hi - grid.lo) / (grid.n - 1) as f64;
    let xs: Vec<f64> = (0..grid.n).map(|i| grid.lo + i as f64 * h).collect();
    let log_density: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let r_prior = x - prior_mean;
            let r_lik = z_t - kernel.prev * x - kernel.anchor * z_a;
            -0.5 * r_prior * r_prior / d_lo - 0.5 * r_lik * r_lik / kernel.variance
        })
        .collect();
    let peak = log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_density
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let edge = if i == 0 || i == grid.n - 1 { 0.5 } else { 1.0 };
            edge * libm::exp(l - peak)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let edge_points = (grid.n / 200).max(1);
    let edge_mass: f64 =
        (weights[..edge_points].iter().sum::<f64>() + weights[grid.n - edge_points..].iter().sum::<f64>()) / total;
    if edge_mass > 1e-8 {
        return Err(Error::Grid(format!("grid too narrow: edge mass {edge_mass:e}")));
    }
    let mean = weights.iter().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / total;
    let var = weights
        .iter()
        .zip(&xs)
        .map(|(w, x)| w * (x - mean) * (x - mean))
        .sum::<f64>()
        / total;
    Ok((mean, var))
}

/// Adjacent-step posterior `z_{t−1} | z_t, z_b, z_a`.
pub fn posterior_oracle(
    sched: &BridgeSchedule,
    z_b: f64,
    z_a: f64,
    z_t: f64,
    t: usize,
    grid: Grid,
) -> Result<(f64, f64)> {
    if t == 0 {
        return Err(Error::InvalidStep("posterior needs t >= 1".into()));
    }
    posterior_oracle_between(sched, z_b, z_a, z_t, t, t - 1, grid)
}

/// Picks a ±`width` standard-deviation grid by scanning the unnormalized
/// density on a coarse bracket spanning the prior and likelihood modes.
pub fn auto_grid(
    sched: &BridgeSchedule,
    z_b: f64,
    z_a: f64,
    z_t: f64,
    t_hi: usize,
    t_lo: usize,
    width: f64,
) -> Result<Grid> {
    let kernel = sched.transition_coefficients(t_hi, t_lo)?;
    let d_lo = sched.delta(t_lo);
    if d_lo <= 0.0 || kernel.variance <= 0.0 || kernel.prev <= 0.0 {
        return Err(Error::InvalidStep(format!("degenerate pair t_hi={t_hi}, t_lo={t_lo}")));
    }
    let prior_mean = (1.0 - sched.m(t_lo)) * z_b + sched.m(t_lo) * z_a;
    let lik_mode = (z_t - kernel.anchor * z_a) / kernel.prev;
    let spread = libm::sqrt(d_lo).max(libm::sqrt(kernel.variance) / kernel.prev);
    let lo = prior_mean.min(lik_mode) - 12.0 * spread;
    let hi = prior_mean.max(lik_mode) + 12.0 * spread;
    let coarse = posterior_oracle_between(sched, z_b, z_a, z_t, t_hi, t_lo, Grid { lo, hi, n: 200_001 })?;
    let sd = libm::sqrt(coarse.1);
    Ok(Grid {
        lo: coarse.0 - width * sd,
        hi: coarse.0 + width * sd,
        n: 8001,
    })
}

fn sq_dist(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_sets(a: &[Tensor], b: &[Tensor], bandwidth: f64) -> Result<()> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput("MMD needs at least two samples per set".into()));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let shape = a[0].shape();
    if a.iter().chain(b).any(|t| t.shape() != shape) {
        return Err(Error::InvalidInput("MMD samples must share one shape".into()));
    }
    Ok(())
}

fn kernel_sums(a: &[Tensor], b: &[Tensor], bandwidth: f64) -> (f64, f64, f64) {
    let g = 1.0 / (2.0 * bandwidth * bandwidth);
    let k = |x: &Tensor, y: &Tensor| libm::exp(-g * sq_dist(x, y));
    let mut kaa_off = 0.0;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            kaa_off += 2.0 * k(&a[i], &a[j]);
        }
    }
    let mut kbb_off = 0.0;
    for i in 0..b.len() {
        for j in i + 1..b.len() {
            kbb_off += 2.0 * k(&b[i], &b[j]);
        }
    }
    let mut kab = 0.0;
    for x in a {
        for y in b {
            kab += k(x, y);
        }
    }
    (kaa_off, kbb_off, kab)
}

/// Unbiased squared MMD with the RBF kernel `exp(−‖x − y‖² / (2σ²))`.
pub fn mmd(a: &[Tensor], b: &[Tensor], bandwidth: f64) -> Result<f64> {
    check_sets(a, b, bandwidth)?;
    let (kaa, kbb, kab) = kernel_sums(a, b, bandwidth);
    let (n, m) = (a.len() as f64, b.len() as f64);
    Ok(kaa / (n * (n - 1.0)) + kbb / (m * (m - 1.0)) - 2.0 * kab / (n * m))
}

/// Biased (V-statistic) squared MMD; exactly zero for identical sets.
pub fn mmd_biased(a: &[Tensor], b: &[Tensor], bandwidth: f64) -> Result<f64> {
    check_sets(a, b, bandwidth)?;
    let g = 1.0 / (2.0 * bandwidth * bandwidth);
    let full = |x: &[Tensor], y: &[Tensor]| {
        let mut acc = 0.0;
        for u in x {
            for v in y {
                acc += libm::exp(-g * sq_dist(u, v));
            }
        }
        acc / (x.len() * y.len()) as f64
    };
    Ok(full(a, a) + full(b, b) - 2.0 * full(a, b))
}

/// Median pairwise distance over the pooled samples.
pub fn median_bandwidth(a: &[Tensor], b: &[Tensor]) -> Result<f64> {
    let pooled: Vec<&Tensor> = a.iter().chain(b).collect();
    let mut d = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(libm::sqrt(sq_dist(pooled[i], pooled[j])));
        }
    }
    if d.is_empty() {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    d.sort_by(f64::total_cmp);
    let med = d[d.len() / 2];
    if med > 0.0 {
        Ok(med)
    } else {
        Err(Error::InvalidInput("median pairwise distance is zero".into()))
    }
}

/// Fraction of samples whose x-displacement from `pre` has the sign implied by
/// the label (label 0 → positive, otherwise negative).
pub fn mode_accuracy(generated: &[Tensor], pre: &[Tensor], labels: &[usize]) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::InvalidInput("mode accuracy of an empty set".into()));
    }
    if generated.len() != pre.len() || generated.len() != labels.len() {
        return Err(Error::InvalidInput("mode accuracy inputs differ in length".into()));
    }
    let hits = generated
        .iter()
        .zip(pre)
        .zip(labels)
        .filter(|((g, p), &l)| {
            let dx = g.data()[0] - p.data()[0];
            if l == 0 {
                dx > 0.0
            } else {
                dx < 0.0
            }
        })
        .count();
    Ok(hits as f64 / generated.len() as f64)
}

/// IoU between the changed region `|generated − pre| > threshold` and the mask.
///
/// Images may carry a leading channel axis; a pixel counts as changed if any
/// channel changed. An empty union scores 1.
pub fn layout_iou(generated: &Tensor, pre: &Tensor, mask: &Tensor, threshold: f64) -> Result<f64> {
    generated.check_same_shape(pre)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold must be in (0, 1), got {threshold}"
        )));
    }
    let plane = mask.len();
    if !generated.len().is_multiple_of(plane)
        || generated.shape()[generated.rank().saturating_sub(2)..] != *mask.shape()
    {
        return Err(Error::ShapeMismatch {
            expected: mask.shape().to_vec(),
            actual: generated.shape().to_vec(),
        });
    }
    let mut changed = vec![false; plane];
    for (i, (g, p)) in generated.data().iter().zip(pre.data()).enumerate() {
        if libm::fabs(g - p) > threshold {
            changed[i % plane] = true;
        }
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (c, &m) in changed.iter().zip(mask.data()) {
        let m = m > 0.5;
        inter += (*c && m) as usize;
        union += (*c || m) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
