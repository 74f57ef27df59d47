//! Mini-batch training shared by the diffusion model and the neural baselines.
//!
//! A batch is split into fixed-size chunks, each recorded on its own tape.
//! Chunk gradients are summed in chunk order, so results do not depend on
//! the number of worker threads.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ScaleParams;
use crate::diffcore::{adam_step, AdamConfig, AdamState, NodeId, Tape, Tensor};
use crate::diffusion::{draw_noise, simplified_loss_on_tape, NoiseDraw, NoiseSchedule};
use crate::error::{ensure, Error, Result};
use crate::par::{self, Execution};
use crate::physics::{pinn_loss_on_tape, PhysicsModel, WeightSchedule};
use crate::seqnet::DenoiserModel;

/// Loss nodes recorded for one chunk.
pub struct LossNodes {
    /// Scalar minimized by the optimizer.
    pub total: NodeId,
    /// Scalar components reported in the training log.
    pub parts: Vec<NodeId>,
}

/// A model trainable by [`train`].
pub trait Objective: Sync {
    /// Per-window randomness drawn sequentially before chunking.
    type Draw: Send + Sync;

    /// Column names of the logged loss components.
    fn part_names(&self) -> Vec<&'static str>;
    fn flat_params(&self) -> Vec<f64>;
    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()>;
    /// Parameter tensors in flat order.
    fn param_tensors(&self) -> Vec<Tensor>;
    fn draw(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Self::Draw>;
    /// Records the batch-mean loss over `windows`.
    fn record(
        &self,
        tape: &mut Tape,
        params: &[NodeId],
        windows: &[Vec<f64>],
        draws: &[Self::Draw],
    ) -> Result<LossNodes>;
}

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Caps the number of batches drawn per epoch; `None` uses every window.
    #[serde(default)]
    pub max_batches_per_epoch: Option<usize>,
    pub lr: f64,
    #[serde(default = "default_l2")]
    pub l2: f64,
    pub seed: u64,
    /// Windows per tape.
    #[serde(default = "default_chunk")]
    pub chunk: usize,
}

fn default_l2() -> f64 {
    1e-6
}

fn default_chunk() -> usize {
    32
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 128,
            max_batches_per_epoch: None,
            lr: 1e-4,
            l2: default_l2(),
            seed: 0,
            chunk: default_chunk(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.chunk == 0 {
            return bad("epochs, batch_size and chunk must be positive".into());
        }
        if self.max_batches_per_epoch == Some(0) {
            return bad("max_batches_per_epoch must be positive when set".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            l2: self.l2,
            ..AdamConfig::default()
        }
    }
}

/// Mean loss components over one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub parts: Vec<f64>,
    pub total: f64,
}

/// Outcome of [`train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub steps: u64,
}

/// Loss and gradient of one batch at the objective's current parameters.
pub fn batch_gradient<O: Objective>(
    objective: &O,
    windows: &[Vec<f64>],
    draws: &[O::Draw],
    chunk: usize,
    exec: Execution,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    ensure!(!windows.is_empty(), "empty training batch");
    ensure!(
        windows.len() == draws.len(),
        "{} draws for {} windows",
        draws.len(),
        windows.len()
    );
    let tensors = objective.param_tensors();
    let b = windows.len() as f64;
    let spans: Vec<(usize, usize)> = (0..windows.len())
        .step_by(chunk)
        .map(|s| (s, (s + chunk).min(windows.len())))
        .collect();
    let results = par::map(
        exec,
        &spans,
        |&(s, e)| -> Result<(f64, Vec<f64>, Vec<f64>)> {
            let mut tape = Tape::new();
            let params: Vec<NodeId> = tensors.iter().map(|t| tape.param(t.clone())).collect();
            let nodes = objective.record(&mut tape, &params, &windows[s..e], &draws[s..e])?;
            let weight = (e - s) as f64 / b;
            let scaled = tape.scale(nodes.total, weight);
            let grads = tape.backward(scaled)?;
            let mut flat = Vec::new();
            for (&p, t) in params.iter().zip(&tensors) {
                flat.extend_from_slice(grads.get_or_zeros(p, t).data());
            }
            let parts = nodes
                .parts
                .iter()
                .map(|&n| weight * tape.value(n).data()[0])
                .collect();
            Ok((weight * tape.value(nodes.total).data()[0], parts, flat))
        },
    );
    let mut total = 0.0;
    let mut parts: Vec<f64> = Vec::new();
    let mut grad: Vec<f64> = Vec::new();
    for r in results {
        let (t, p, g) = r?;
        total += t;
        if grad.is_empty() {
            parts = p;
            grad = g;
        } else {
            parts.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
    }
    Ok((total, parts, grad))
}

/// Trains `objective` on `windows`. `on_epoch` sees each finished epoch.
///
/// A non-finite loss or gradient aborts with a numeric error naming the last
/// finite epoch.
pub fn train<O: Objective>(
    objective: &mut O,
    windows: &[Vec<f64>],
    config: &TrainConfig,
    exec: Execution,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainReport> {
    config.validate()?;
    ensure!(!windows.is_empty(), "no training windows");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = objective.flat_params();
    let mut adam = AdamState::new(params.len(), config.adam());
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);
    let n_parts = objective.part_names().len();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = vec![0.0; n_parts];
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            if config.max_batches_per_epoch.is_some_and(|m| batches >= m) {
                break;
            }
            let batch: Vec<Vec<f64>> = idx.iter().map(|&i| windows[i].clone()).collect();
            let draws = objective.draw(batch.len(), &mut rng);
            let (loss, parts, grad) =
                batch_gradient(objective, &batch, &draws, config.chunk, exec)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::numeric(
                    format!("training epoch {epoch}, batch {batches}"),
                    format!(
                        "non-finite loss or gradient; last finite epoch {}",
                        epoch - 1
                    ),
                ));
            }
            adam_step(&mut params, &grad, &mut adam)?;
            objective.set_flat_params(&params)?;
            total += loss;
            sums.iter_mut().zip(&parts).for_each(|(a, b)| *a += b);
            batches += 1;
        }
        let n = batches as f64;
        let log = EpochLog {
            epoch,
            parts: sums.iter().map(|s| s / n).collect(),
            total: total / n,
        };
        log::info!("epoch {epoch}: total {:.6}", log.total);
        on_epoch(&log)?;
        logs.push(log);
    }
    Ok(TrainReport {
        epochs: logs,
        steps: adam.step_count(),
    })
}

/// Physics term added to the diffusion loss.
#[derive(Clone, Debug)]
pub struct PhysicsTerm {
    pub model: PhysicsModel,
    pub weights: WeightSchedule,
    pub scale: ScaleParams,
    pub dt: f64,
}

/// Diffusion loss, optionally plus the weighted physics loss on the same draws.
#[derive(Clone, Debug)]
pub struct DiffusionObjective {
    pub model: DenoiserModel,
    pub schedule: NoiseSchedule,
    pub physics: Option<PhysicsTerm>,
}

impl Objective for DiffusionObjective {
    type Draw = NoiseDraw;

    fn part_names(&self) -> Vec<&'static str> {
        vec!["l_dm", "l_pi"]
    }

    fn flat_params(&self) -> Vec<f64> {
        self.model.flat_params()
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        self.model.set_flat_params(flat)
    }

    fn param_tensors(&self) -> Vec<Tensor> {
        self.model.tensors().into_iter().cloned().collect()
    }

    fn draw(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<NoiseDraw> {
        let n = self.model.config.window * self.model.config.channels;
        draw_noise(batch, n, self.schedule.steps(), rng)
    }

    fn record(
        &self,
        tape: &mut Tape,
        params: &[NodeId],
        windows: &[Vec<f64>],
        draws: &[NoiseDraw],
    ) -> Result<LossNodes> {
        let nodes = simplified_loss_on_tape(
            tape,
            &self.model,
            &crate::seqnet::ParamNodes(params.to_vec()),
            windows,
            draws,
            &self.schedule,
        )?;
        let physics = match &self.physics {
            None => tape.constant(Tensor::scalar(0.0)),
            Some(p) => {
                let steps: Vec<usize> = draws.iter().map(|d| d.t).collect();
                pinn_loss_on_tape(
                    tape,
                    nodes.x0_hat,
                    &steps,
                    &p.model,
                    &p.weights,
                    &p.scale,
                    self.model.config.window,
                    p.dt,
                )?
            }
        };
        let total = tape.add(nodes.loss, physics)?;
        Ok(LossNodes {
            total,
            parts: vec![nodes.loss, physics],
        })
    }
}

/// Composite loss `L_DM + L_PI` for a batch, evaluated without updating.
pub fn composite_loss(
    objective: &DiffusionObjective,
    windows: &[Vec<f64>],
    draws: &[NoiseDraw],
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let params: Vec<NodeId> = objective
        .param_tensors()
        .into_iter()
        .map(|t| tape.constant(t))
        .collect();
    let nodes = objective.record(&mut tape, &params, windows, draws)?;
    let v = |n: NodeId| tape.value(n).data()[0];
    Ok((v(nodes.parts[0]), v(nodes.parts[1]), v(nodes.total)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::simplified_loss;
    use crate::physics::ScheduleKind;
    use crate::seqnet::{NetConfig, Parameterization};

    fn tiny() -> DiffusionObjective {
        let cfg = NetConfig {
            channels: 2,
            window: 6,
            encoder_hidden: vec![3, 4],
            decoder_hidden: vec![3, 2],
            diffusion_steps: 20,
        };
        DiffusionObjective {
            model: DenoiserModel::init(cfg, Parameterization::Epsilon, 5).unwrap(),
            schedule: NoiseSchedule::linear(20, 1e-4, 0.05).unwrap(),
            physics: None,
        }
    }

    fn windows(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|k| {
                (0..12)
                    .map(|i| ((i + k) as f64 * 0.4).sin() * 0.8)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn chunking_does_not_change_gradients() {
        let obj = tiny();
        let w = windows(10);
        let draws = obj.draw(10, &mut ChaCha8Rng::seed_from_u64(1));
        let (l1, _, g1) = batch_gradient(&obj, &w, &draws, 10, Execution::Sequential).unwrap();
        let (l2, _, g2) = batch_gradient(&obj, &w, &draws, 3, Execution::best_available()).unwrap();
        assert!((l1 - l2).abs() < 1e-12 * l1);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-6));
        }
    }

    #[test]
    fn zero_physics_equals_plain_diffusion_loss() {
        let mut obj = tiny();
        let w = windows(4);
        let (plain, draws) = simplified_loss(
            &w,
            &obj.model,
            &obj.schedule,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        obj.physics = Some(PhysicsTerm {
            model: PhysicsModel::predator_prey(),
            weights: WeightSchedule::zero(20),
            scale: ScaleParams::identity(2),
            dt: 0.01,
        });
        let (dm, pi, total) = composite_loss(&obj, &w, &draws).unwrap();
        assert!((dm - plain).abs() <= 1e-12 * plain);
        assert_eq!(pi, 0.0);
        assert_eq!(total, dm);
        obj.physics.as_mut().unwrap().weights =
            WeightSchedule::with_defaults(ScheduleKind::LogSigmoid, 20).unwrap();
        let (_, pi, total) = composite_loss(&obj, &w, &draws).unwrap();
        assert!(pi > 0.0 && total >= dm);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let w = windows(40);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 20,
            lr: 2e-2,
            seed: 3,
            chunk: 4,
            ..TrainConfig::default()
        };
        let mut a = tiny();
        let report = train(&mut a, &w, &cfg, Execution::best_available(), |_| Ok(())).unwrap();
        assert_eq!(report.steps, 120);
        let avg = |e: &[EpochLog]| e.iter().map(|l| l.total).sum::<f64>() / e.len() as f64;
        let first = avg(&report.epochs[..10]);
        let last = avg(&report.epochs[50..]);
        assert!(last < first, "{first} -> {last}");
        let mut b = tiny();
        train(&mut b, &w, &cfg, Execution::Sequential, |_| Ok(())).unwrap();
        assert_eq!(a.model.flat_params(), b.model.flat_params());
    }

    #[test]
    fn physics_term_changes_the_path_but_not_the_first_loss() {
        let w = windows(16);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            max_batches_per_epoch: Some(1),
            lr: 1e-2,
            seed: 4,
            chunk: 4,
            ..TrainConfig::default()
        };
        let mut plain = tiny();
        let mut informed = tiny();
        informed.physics = Some(PhysicsTerm {
            model: PhysicsModel::predator_prey(),
            weights: WeightSchedule::with_defaults(ScheduleKind::LogSigmoid, 20).unwrap(),
            scale: ScaleParams {
                min: vec![0.5, 0.2],
                max: vec![20.0, 10.0],
            },
            dt: 0.1,
        });
        let a = train(&mut plain, &w, &cfg, Execution::Sequential, |_| Ok(())).unwrap();
        let b = train(&mut informed, &w, &cfg, Execution::Sequential, |_| Ok(())).unwrap();
        assert_eq!(a.epochs[0].parts[0], b.epochs[0].parts[0]);
        assert!(b.epochs[0].parts[1] > 0.0);
        assert_ne!(a.epochs[2].parts[0], b.epochs[2].parts[0]);
    }

    #[test]
    fn divergence_is_reported() {
        let mut obj = tiny();
        let mut w = windows(8);
        w[3][0] = f64::NAN;
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let err = train(&mut obj, &w, &cfg, Execution::Sequential, |_| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }), "{err}");
    }
}
