//! The identity and oracle checks behind `bbridge selfcheck`.

use std::time::Instant;

use bbridge_core::bridge::{forward_transition_sample, oracle_denoiser, sample, SampleOptions};
use bbridge_core::conditioning::{ConditionConfig, ConditionTokens};
use bbridge_core::data::{make_pointcloud_dataset, make_scene_dataset};
use bbridge_core::denoiser::init_params;
use bbridge_core::eval::{auto_grid, chain_marginal_check, posterior_oracle_between};
use bbridge_core::numerics::sample_standard_normal;
use bbridge_core::schedule::build_schedule;
use bbridge_core::training::{draw_noise, gradient_check};
use bbridge_core::{ConditionPayload, DenoiserConfig, PairedSample, RngState, Tensor, WeightMode};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

/// Deliberate defects that the suite must catch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Adds instead of subtracts the predicted-noise term in the reverse mean.
    CepsSignFlip,
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Largest deviation of adjacent-step kernels from the marginal at `T`.
pub fn schedule_identity_errors(steps: usize) -> Result<(f64, f64)> {
    let sched = build_schedule(steps, 1.0)?;
    let (mut var_err, mut mean_err) = (0.0f64, 0.0f64);
    for t in 1..=steps {
        let k = sched.transition_coefficients(t, t - 1)?;
        let (m0, m1) = (sched.m(t - 1), sched.m(t));
        var_err = var_err.max((k.prev * k.prev * sched.delta(t - 1) + k.variance - sched.delta(t)).abs());
        mean_err = mean_err
            .max((k.prev * (1.0 - m0) - (1.0 - m1)).abs())
            .max((k.prev * m0 + k.anchor - m1).abs());
    }
    Ok((var_err, mean_err))
}

pub fn check_schedule() -> CheckOutcome {
    timed("schedule identities", || {
        let (v, m) = schedule_identity_errors(1000)?;
        Ok((
            v < 1e-12 && m < 1e-12,
            format!("T=1000 variance err {v:.2e}, mean err {m:.2e} (< 1e-12)"),
        ))
    })
}

/// Worst absolute gap between the grid posterior and the closed form over
/// random scalar cases, as `(mean gap, variance gap)`.
pub fn posterior_gaps(cases: usize, seed: u64, fault: Fault) -> Result<(f64, f64)> {
    let mut rng = RngState::new(seed);
    let (mut mean_gap, mut var_gap) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let steps = rng.range(4, 1001);
        let sched = build_schedule(steps, 0.25 + 2.0 * rng.uniform())?;
        let t_hi = rng.range(2, steps);
        let t_lo = if rng.uniform() < 0.5 {
            t_hi - 1
        } else {
            rng.range(1, t_hi)
        };
        let z_b = 6.0 * rng.uniform() - 3.0;
        let z_a = 6.0 * rng.uniform() - 3.0;
        let m = sched.m(t_hi);
        let z_t = (1.0 - m) * z_b + m * z_a + sched.delta(t_hi).sqrt() * rng.standard_normal();
        let grid = auto_grid(&sched, z_b, z_a, z_t, t_hi, t_lo, 10.0)?;
        let (o_mean, o_var) = posterior_oracle_between(&sched, z_b, z_a, z_t, t_hi, t_lo, grid)?;
        let c = sched.posterior_coefficients(t_hi, t_lo)?;
        let target = z_t - z_b;
        let sign = if fault == Fault::CepsSignFlip { 1.0 } else { -1.0 };
        let mean = c.c_b * z_t + c.c_a * z_a + sign * c.c_eps * target;
        mean_gap = mean_gap.max((mean - o_mean).abs());
        var_gap = var_gap.max((c.tilde_delta - o_var).abs());
    }
    Ok((mean_gap, var_gap))
}

pub fn check_posterior(fault: Fault) -> CheckOutcome {
    timed("posterior oracle", || {
        let (m, v) = posterior_gaps(100, 11, fault)?;
        Ok((
            m < 1e-6 && v < 1e-6,
            format!("100 cases: mean gap {m:.2e}, variance gap {v:.2e} (< 1e-6)"),
        ))
    })
}

pub const MARGINAL_FRACTIONS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

pub fn check_marginal(n: usize) -> CheckOutcome {
    timed("marginal law", || {
        let steps = 1000;
        let sched = build_schedule(steps, 1.0)?;
        let ts: Vec<usize> = MARGINAL_FRACTIONS
            .iter()
            .map(|f| (f * steps as f64).round() as usize)
            .collect();
        let reports = chain_marginal_check(&sched, 0.0, 2.0, &ts, n, &mut RngState::new(17))?;
        let worst = reports
            .iter()
            .map(|r| r.mean_z.abs().max(r.var_z.abs()))
            .fold(0.0, f64::max);
        let passed = reports.iter().all(|r| r.pass);
        Ok((
            passed,
            format!("n={n}, t/T in {MARGINAL_FRACTIONS:?}: worst |z| {worst:.2} (< 3)"),
        ))
    })
}

/// Worst reconstruction error of the oracle sampler over several latents.
pub fn oracle_sampling_error(steps: usize, sample_steps: usize, seed: u64) -> Result<f64> {
    let sched = build_schedule(steps, 1.0)?;
    let mut rng = RngState::new(seed);
    let cond = ConditionTokens {
        tokens: Tensor::zeros(&[1, 1])?,
    };
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let z_b = sample_standard_normal(&mut rng, &[8])?;
        let z_a = sample_standard_normal(&mut rng, &[8])?;
        let oracle = oracle_denoiser(&z_b);
        let trace = sample(
            &sched,
            &oracle,
            &z_a,
            &cond,
            SampleOptions::deterministic(sample_steps),
            &mut rng,
        )?;
        worst = worst.max(trace.final_latent.max_abs_diff(&z_b)?);
    }
    Ok(worst)
}

pub fn check_oracle_sampling() -> CheckOutcome {
    timed("oracle sampling", || {
        let full = oracle_sampling_error(1000, 1000, 3)?;
        let half = oracle_sampling_error(1000, 500, 4)?;
        let odd = oracle_sampling_error(200, 37, 5)?;
        Ok((
            full < 1e-8 && half < 1e-6 && odd < 1e-6,
            format!("S=T err {full:.2e} (< 1e-8), S=T/2 err {half:.2e} (< 1e-6), S=37 of 200 err {odd:.2e}"),
        ))
    })
}

fn grad_models() -> [(DenoiserConfig, Vec<PairedSample>, usize); 2] {
    let point = DenoiserConfig {
        latent_shape: vec![2],
        hidden: 8,
        blocks: 2,
        attn_dim: 4,
        time_dim: 6,
        condition: ConditionConfig {
            vocab: 2,
            classes: 2,
            patch: 4,
            token_dim: 8,
            pos_freqs: 1,
        },
    };
    let image = DenoiserConfig {
        latent_shape: vec![1, 8, 8],
        hidden: 6,
        blocks: 2,
        attn_dim: 4,
        time_dim: 4,
        condition: ConditionConfig {
            vocab: 1,
            classes: 2,
            patch: 4,
            token_dim: 8,
            pos_freqs: 2,
        },
    };
    let points = make_pointcloud_dataset(3, &mut RngState::new(31)).expect("valid size");
    let mut scenes = make_scene_dataset(2, 8, 8, &mut RngState::new(32)).expect("valid size");
    scenes.push(
        PairedSample::new(scenes[0].pre.clone(), scenes[1].post.clone(), ConditionPayload::None).expect("same shapes"),
    );
    [(point, points, 50), (image, scenes, 200)]
}

/// Total parameters checked and the worst relative error.
pub fn gradient_errors(per_model: usize) -> Result<(usize, f64, String)> {
    let (mut count, mut worst, mut at) = (0, 0.0f64, String::new());
    for (i, (model, data, steps)) in grad_models().into_iter().enumerate() {
        let mut rng = RngState::new(40 + i as u64);
        let mut params = init_params(&mut rng, &model)?;
        params.randomize_head(&mut rng, 0.3);
        let sched = build_schedule(steps, 1.0)?;
        let batch: Vec<&PairedSample> = data.iter().collect();
        let draws = draw_noise(&sched, &batch, &mut rng)?;
        let r = gradient_check(
            &params,
            &sched,
            &batch,
            &draws,
            WeightMode::Uniform,
            per_model,
            1e-5,
            &mut rng,
        )?;
        count += r.checked;
        if r.max_rel_err >= worst {
            worst = r.max_rel_err;
            at = r.worst;
        }
    }
    Ok((count, worst, at))
}

pub fn check_gradients() -> CheckOutcome {
    timed("gradient fidelity", || {
        let (n, err, at) = gradient_errors(120)?;
        Ok((
            n >= 200 && err < 1e-4,
            format!("{n} parameters, max relative error {err:.2e} at {at} (< 1e-4)"),
        ))
    })
}

/// Counts of forward chains ending at `z_a` and reverse traces starting at it.
pub fn endpoint_counts(chains: usize, seed: u64) -> Result<(usize, usize)> {
    let sched = build_schedule(100, 1.0)?;
    let mut rng = RngState::new(seed);
    let cond = ConditionTokens {
        tokens: Tensor::zeros(&[1, 1])?,
    };
    let (mut ends, mut starts) = (0, 0);
    for i in 0..chains {
        let z_b = sample_standard_normal(&mut rng, &[3])?;
        let z_a = sample_standard_normal(&mut rng, &[3])?;
        let mut z = z_b.clone();
        for t in 1..=sched.steps() {
            z = forward_transition_sample(&sched, &z, &z_a, t, &mut rng)?;
        }
        ends += usize::from(z == z_a);
        let options = SampleOptions {
            stochastic: i % 2 == 1,
            ..SampleOptions::deterministic(20)
        };
        let trace = sample(&sched, &oracle_denoiser(&z_b), &z_a, &cond, options, &mut rng)?;
        starts += usize::from(
            trace
                .steps
                .first()
                .is_some_and(|(t, z)| *t == sched.steps() && *z == z_a),
        );
    }
    Ok((ends, starts))
}

pub fn check_endpoints() -> CheckOutcome {
    timed("endpoint pinning", || {
        let (ends, starts) = endpoint_counts(100, 23)?;
        Ok((
            ends == 100 && starts == 100,
            format!("{ends}/100 forward chains end at z_a, {starts}/100 traces start at z_a"),
        ))
    })
}

/// The full suite in a fixed order.
pub fn run_all(fault: Fault) -> Vec<CheckOutcome> {
    vec![
        check_schedule(),
        check_posterior(fault),
        check_marginal(100_000),
        check_oracle_sampling(),
        check_gradients(),
        check_endpoints(),
    ]
}

pub fn render_table(outcomes: &[CheckOutcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        s.push_str(&format!(
            "{:<4} {:<20} {:>7.2}s  {}\n",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.seconds,
            o.detail
        ));
    }
    s
}
