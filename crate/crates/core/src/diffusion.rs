//! Variance schedule, forward corruption, the simplified training loss, the
//! negative ELBO, and ancestral sampling.
//!
//! Steps are 1-based throughout: `t ∈ 1..=T`. Windows are flat row-major
//! `window × channels` slices.

use rand::{seq::index, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{NodeId, Tape, Tensor};
use crate::error::{ensure, Result};
use crate::par::{self, Execution};
use crate::seqnet::{DenoiserModel, ParamNodes, Parameterization};

/// Per-step noise variances and their running products.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    sigma: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// `σ_t = σ_1 + (t − 1)/(T − 1)·(σ_T − σ_1)` with both endpoints exact.
    pub fn linear(steps: usize, sigma_first: f64, sigma_last: f64) -> Result<Self> {
        ensure!(steps >= 2, "schedule needs T >= 2, got {}", steps);
        ensure!(
            0.0 < sigma_first && sigma_first < sigma_last && sigma_last < 1.0,
            "schedule bounds must satisfy 0 < σ1 < σT < 1, got {} and {}",
            sigma_first,
            sigma_last
        );
        let span = sigma_last - sigma_first;
        let sigma: Vec<f64> = (0..steps)
            .map(|i| {
                if i + 1 == steps {
                    sigma_last
                } else {
                    sigma_first + (i as f64 / (steps - 1) as f64) * span
                }
            })
            .collect();
        let alpha: Vec<f64> = sigma.iter().map(|s| 1.0 - s).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule {
            sigma,
            alpha,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.sigma.len()
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    fn check_step(&self, t: usize, min: usize) -> Result<()> {
        ensure!(
            (min..=self.steps()).contains(&t),
            "diffusion step {} outside {}..={}",
            t,
            min,
            self.steps()
        );
        Ok(())
    }

    /// Variance of `q(x_{t−1} | x_t, x_0)`, also used for the reverse process.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.sigma(t)
    }

    /// Coefficients `(c_x0, c_xt)` of the posterior mean.
    fn posterior_coefs(&self, t: usize) -> (f64, f64) {
        let ab_prev = self.alpha_bar(t - 1);
        let ab = self.alpha_bar(t);
        (
            ab_prev.sqrt() * self.sigma(t) / (1.0 - ab),
            self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab),
        )
    }
}

/// `x_t = √ᾱ_t·x0 + √(1 − ᾱ_t)·ε`.
pub fn forward_sample(
    x0: &[f64],
    t: usize,
    eps: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    schedule.check_step(t, 1)?;
    ensure!(
        x0.len() == eps.len(),
        "forward_sample: x0 has {} values, noise has {}",
        x0.len(),
        eps.len()
    );
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// `x̂0 = (x_t − √(1 − ᾱ_t)·ε̂)/√ᾱ_t`.
pub fn reconstruct_x0(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    schedule.check_step(t, 1)?;
    ensure!(
        x_t.len() == eps_hat.len(),
        "reconstruct_x0: x_t has {} values, prediction has {}",
        x_t.len(),
        eps_hat.len()
    );
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .map(|(x, e)| (x - b * e) / a)
        .collect())
}

/// Mean and (isotropic) variance of `q(x_{t−1} | x_t, x_0)` for `t ≥ 2`.
pub fn posterior_q(
    x_t: &[f64],
    x0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<(Vec<f64>, f64)> {
    schedule.check_step(t, 2)?;
    ensure!(
        x_t.len() == x0.len(),
        "posterior_q: x_t has {} values, x0 has {}",
        x_t.len(),
        x0.len()
    );
    let (cx0, cxt) = schedule.posterior_coefs(t);
    let mean = x0.iter().zip(x_t).map(|(a, b)| cx0 * a + cxt * b).collect();
    Ok((mean, schedule.posterior_variance(t)))
}

/// Anything that can predict noise or clean data for a batch of noisy windows.
pub trait Denoiser: Sync {
    fn mode(&self) -> Parameterization;
    /// Values per window (`window × channels`).
    fn window_size(&self) -> usize;
    /// `x_t` holds `steps.len()` windows back to back.
    fn predict(&self, x_t: &[f64], steps: &[usize]) -> Result<Vec<f64>>;
}

impl Denoiser for DenoiserModel {
    fn mode(&self) -> Parameterization {
        self.mode
    }

    fn window_size(&self) -> usize {
        self.config.window * self.config.channels
    }

    fn predict(&self, x_t: &[f64], steps: &[usize]) -> Result<Vec<f64>> {
        self.denoise_batch(x_t, steps)
    }
}

/// Clean-window estimate from a model output.
pub fn x0_from_prediction(
    mode: Parameterization,
    x_t: &[f64],
    t: usize,
    prediction: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    match mode {
        Parameterization::Epsilon => reconstruct_x0(x_t, t, prediction, schedule),
        Parameterization::X0 => Ok(prediction.to_vec()),
    }
}

/// One `(t, ε)` draw for a batch element.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Vec<f64>,
}

/// Draws a uniform step in `1..=T` and standard normal noise per element.
pub fn draw_noise(
    batch: usize,
    window_size: usize,
    steps: usize,
    rng: &mut impl rand::Rng,
) -> Vec<NoiseDraw> {
    (0..batch)
        .map(|_| {
            let t = rng.gen_range(1..=steps);
            let eps = (0..window_size)
                .map(|_| StandardNormal.sample(rng))
                .collect();
            NoiseDraw { t, eps }
        })
        .collect()
}

fn check_batch(windows: &[Vec<f64>], window_size: usize) -> Result<()> {
    ensure!(!windows.is_empty(), "empty batch");
    for (i, w) in windows.iter().enumerate() {
        ensure!(
            w.len() == window_size,
            "window {} has {} values, expected {}",
            i,
            w.len(),
            window_size
        );
    }
    Ok(())
}

/// Simplified diffusion loss evaluated without a tape.
///
/// Returns the batch mean of `‖ε − ε̂‖²` (or `‖x0 − x̂0‖²` in x0 mode) and the
/// draws used, so a physics term can reuse them.
pub fn simplified_loss<D: Denoiser>(
    windows: &[Vec<f64>],
    model: &D,
    schedule: &NoiseSchedule,
    rng: &mut impl rand::Rng,
) -> Result<(f64, Vec<NoiseDraw>)> {
    check_batch(windows, model.window_size())?;
    let draws = draw_noise(windows.len(), model.window_size(), schedule.steps(), rng);
    let mut x_t = Vec::with_capacity(windows.len() * model.window_size());
    for (w, d) in windows.iter().zip(&draws) {
        x_t.extend(forward_sample(w, d.t, &d.eps, schedule)?);
    }
    let steps: Vec<usize> = draws.iter().map(|d| d.t).collect();
    let pred = model.predict(&x_t, &steps)?;
    let n = model.window_size();
    let mut total = 0.0;
    for (i, (w, d)) in windows.iter().zip(&draws).enumerate() {
        let target = match model.mode() {
            Parameterization::Epsilon => &d.eps,
            Parameterization::X0 => w,
        };
        total += target
            .iter()
            .zip(&pred[i * n..(i + 1) * n])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok((total / windows.len() as f64, draws))
}

/// Tape nodes produced by [`simplified_loss_on_tape`].
#[derive(Clone, Debug)]
pub struct DiffusionLossNodes {
    /// Scalar batch-mean loss.
    pub loss: NodeId,
    /// `B × window_size` reconstructed clean windows, differentiable.
    pub x0_hat: NodeId,
}

/// Records the simplified loss for given draws on `tape`.
pub fn simplified_loss_on_tape(
    tape: &mut Tape,
    model: &DenoiserModel,
    params: &ParamNodes,
    windows: &[Vec<f64>],
    draws: &[NoiseDraw],
    schedule: &NoiseSchedule,
) -> Result<DiffusionLossNodes> {
    let n = model.config.window * model.config.channels;
    check_batch(windows, n)?;
    ensure!(
        draws.len() == windows.len(),
        "{} draws for {} windows",
        draws.len(),
        windows.len()
    );
    let batch = windows.len();
    let mut x_t = Vec::with_capacity(batch * n);
    for (w, d) in windows.iter().zip(draws) {
        x_t.extend(forward_sample(w, d.t, &d.eps, schedule)?);
    }
    let steps: Vec<usize> = draws.iter().map(|d| d.t).collect();
    let pred = model.forward_on_tape(tape, params, &x_t, &steps)?;

    let target: Vec<f64> = match model.mode {
        Parameterization::Epsilon => draws.iter().flat_map(|d| d.eps.iter().copied()).collect(),
        Parameterization::X0 => windows.iter().flat_map(|w| w.iter().copied()).collect(),
    };
    let neg_target = tape.constant(Tensor::from_parts(
        vec![batch, n],
        target.into_iter().map(|v| -v).collect(),
    ));
    let diff = tape.add(pred, neg_target)?;
    let ss = tape.sum_sq(diff);
    let loss = tape.scale(ss, 1.0 / batch as f64);

    let x0_hat = match model.mode {
        Parameterization::X0 => pred,
        Parameterization::Epsilon => {
            // x̂0 = x_t/√ᾱ − (√(1−ᾱ)/√ᾱ)·ε̂, with per-row coefficients.
            let mut coef = Vec::with_capacity(batch * n);
            let mut offset = Vec::with_capacity(batch * n);
            for (b, d) in draws.iter().enumerate() {
                let ab = schedule.alpha_bar(d.t);
                let k = -(1.0 - ab).sqrt() / ab.sqrt();
                coef.extend(std::iter::repeat_n(k, n));
                offset.extend(x_t[b * n..(b + 1) * n].iter().map(|x| x / ab.sqrt()));
            }
            let coef = tape.constant(Tensor::from_parts(vec![batch, n], coef));
            let offset = tape.constant(Tensor::from_parts(vec![batch, n], offset));
            let scaled = tape.mul(pred, coef)?;
            tape.add(scaled, offset)?
        }
    };
    Ok(DiffusionLossNodes { loss, x0_hat })
}

/// Which reverse steps enter the ELBO sum.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "count")]
pub enum ElboSteps {
    /// Every `t = 2..=T`.
    #[default]
    Full,
    /// A seeded subset of this many steps, reweighted to estimate the full sum.
    Subsample(usize),
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal noise for step `t` under `seed`. Every window scored with
/// the same seed sees the same noise.
pub fn step_noise(seed: u64, t: usize, size: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, t as u64));
    (0..size).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn elbo_step_set(steps: ElboSteps, total: usize, seed: u64) -> Result<(Vec<usize>, f64)> {
    match steps {
        ElboSteps::Full => Ok(((2..=total).collect(), 1.0)),
        ElboSteps::Subsample(k) => {
            ensure!(
                k >= 1 && k < total,
                "ELBO subsample count {} must be in 1..{}",
                k,
                total
            );
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX));
            let mut picked: Vec<usize> = index::sample(&mut rng, total - 1, k)
                .into_iter()
                .map(|i| i + 2)
                .collect();
            picked.sort_unstable();
            Ok((picked, (total - 1) as f64 / k as f64))
        }
    }
}

/// Windows per forward pass when scoring.
const SCORE_CHUNK: usize = 64;

/// Negative ELBO for each window: `L_T + Σ_{t≥2} KL_t + L_0`.
///
/// The estimator is deterministic given `seed`. Lower means a better fit.
pub fn elbo_batch<D: Denoiser>(
    windows: &[Vec<f64>],
    model: &D,
    schedule: &NoiseSchedule,
    steps: ElboSteps,
    seed: u64,
    exec: Execution,
) -> Result<Vec<f64>> {
    let n = model.window_size();
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    check_batch(windows, n)?;
    let total = schedule.steps();
    let (kl_steps, kl_scale) = elbo_step_set(steps, total, seed)?;
    let noise: Vec<(usize, Vec<f64>)> = std::iter::once(1)
        .chain(kl_steps.iter().copied())
        .map(|t| (t, step_noise(seed, t, n)))
        .collect();

    let chunks: Vec<&[Vec<f64>]> = windows.chunks(SCORE_CHUNK).collect();
    let per_chunk = par::map(exec, &chunks, |chunk| -> Result<Vec<f64>> {
        let b = chunk.len();
        // L_T: KL(N(√ᾱ_T x0, (1−ᾱ_T)) || N(0, 1)) per coordinate.
        let ab_t = schedule.alpha_bar(total);
        let mut scores: Vec<f64> = chunk
            .iter()
            .map(|w| {
                w.iter()
                    .map(|x| 0.5 * ((1.0 - ab_t) + ab_t * x * x - 1.0 - (1.0 - ab_t).ln()))
                    .sum()
            })
            .collect();
        for (t, eps) in &noise {
            let t = *t;
            let mut x_t = Vec::with_capacity(b * n);
            for w in chunk.iter() {
                x_t.extend(forward_sample(w, t, eps, schedule)?);
            }
            let pred = model.predict(&x_t, &vec![t; b])?;
            for (i, w) in chunk.iter().enumerate() {
                let xt_i = &x_t[i * n..(i + 1) * n];
                let x0_hat =
                    x0_from_prediction(model.mode(), xt_i, t, &pred[i * n..(i + 1) * n], schedule)?;
                if t == 1 {
                    let var = schedule.sigma(1);
                    let sq: f64 = w.iter().zip(&x0_hat).map(|(a, b)| (a - b) * (a - b)).sum();
                    scores[i] +=
                        sq / (2.0 * var) + 0.5 * n as f64 * (2.0 * std::f64::consts::PI * var).ln();
                } else {
                    let (cx0, _) = schedule.posterior_coefs(t);
                    let var = schedule.posterior_variance(t);
                    // Means share the x_t term, so their gap is cx0·(x0 − x̂0).
                    let sq: f64 = w.iter().zip(&x0_hat).map(|(a, b)| (a - b) * (a - b)).sum();
                    scores[i] += kl_scale * cx0 * cx0 * sq / (2.0 * var);
                }
            }
        }
        Ok(scores)
    });
    let mut out = Vec::with_capacity(windows.len());
    for chunk in per_chunk {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Negative ELBO of a single window.
pub fn elbo<D: Denoiser>(
    x0: &[f64],
    model: &D,
    schedule: &NoiseSchedule,
    steps: ElboSteps,
    seed: u64,
) -> Result<f64> {
    Ok(elbo_batch(
        &[x0.to_vec()],
        model,
        schedule,
        steps,
        seed,
        Execution::Sequential,
    )?[0])
}

/// Ancestral sampling from `x_T ~ N(0, I)` with the posterior variance.
pub fn sample<D: Denoiser>(
    model: &D,
    schedule: &NoiseSchedule,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let n = model.window_size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..count * n)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    for t in (1..=schedule.steps()).rev() {
        let pred = model.predict(&x, &vec![t; count])?;
        let x0_hat = x0_from_prediction(model.mode(), &x, t, &pred, schedule)?;
        if t == 1 {
            x = x0_hat;
        } else {
            let (mean, var) = posterior_q(&x, &x0_hat, t, schedule)?;
            let sd = var.sqrt();
            x = mean
                .into_iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + sd * z
                })
                .collect();
        }
    }
    Ok(x.chunks(n).map(|c| c.to_vec()).collect())
}
