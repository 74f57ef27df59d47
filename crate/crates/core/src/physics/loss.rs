use crate::data::ScaleParams;
use crate::diffcore::{NodeId, Tape, Tensor};
use crate::error::{ensure, Result};

use super::{diff_matrix, residual, PhysicsModel, WeightSchedule, SIGN_SMOOTHING};

/// Selection matrix `[L·C × L]` picking channel `c`, optionally followed by
/// the finite-difference operator.
fn selector(channel: usize, window: usize, channels: usize, diff: Option<&[f64]>) -> Tensor {
    let mut w = vec![0.0; window * channels * window];
    for i in 0..window {
        let row = i * channels + channel;
        match diff {
            None => w[row * window + i] = 1.0,
            // out_j = Σ_i D[j][i]·x_i
            Some(d) => {
                for j in 0..window {
                    w[row * window + j] = d[j * window + i];
                }
            }
        }
    }
    Tensor::from_parts(vec![window * channels, window], w)
}

fn transpose(d: &[f64], n: usize) -> Tensor {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = d[i * n + j];
        }
    }
    Tensor::from_parts(vec![n, n], t)
}

struct Ops<'a> {
    tape: &'a mut Tape,
    x: NodeId,
    window: usize,
    channels: usize,
    diff: Vec<f64>,
}

impl Ops<'_> {
    fn channel(&mut self, c: usize) -> Result<NodeId> {
        let w = self
            .tape
            .constant(selector(c, self.window, self.channels, None));
        self.tape.linear(self.x, w, None)
    }

    fn deriv_of_channel(&mut self, c: usize) -> Result<NodeId> {
        let w = self
            .tape
            .constant(selector(c, self.window, self.channels, Some(&self.diff)));
        self.tape.linear(self.x, w, None)
    }

    fn deriv(&mut self, y: NodeId) -> Result<NodeId> {
        let w = self.tape.constant(transpose(&self.diff, self.window));
        self.tape.linear(y, w, None)
    }

    /// `Σ coef_k · term_k`.
    fn combine(&mut self, terms: &[(f64, NodeId)]) -> Result<NodeId> {
        let mut acc = self.tape.scale(terms[0].1, terms[0].0);
        for &(k, t) in &terms[1..] {
            let s = self.tape.scale(t, k);
            acc = self.tape.add(acc, s)?;
        }
        Ok(acc)
    }
}

/// Residual nodes, one `B × L` node per equation, for a `B × L·C` node of
/// physical-unit windows.
pub fn residual_on_tape(
    tape: &mut Tape,
    model: &PhysicsModel,
    x: NodeId,
    window: usize,
    channels: usize,
    dt: f64,
) -> Result<Vec<NodeId>> {
    model.validate(channels)?;
    ensure!(window >= 3, "residuals need windows of at least 3 samples");
    ensure!(dt > 0.0, "dt must be positive, got {}", dt);
    let (_, width) = tape.value(x).dims();
    ensure!(
        width == window * channels,
        "residual input width {} is not {}×{}",
        width,
        window,
        channels
    );
    let mut ops = Ops {
        tape,
        x,
        window,
        channels,
        diff: diff_matrix(window, dt),
    };
    let res = match *model {
        PhysicsModel::LotkaVolterra {
            alpha,
            beta,
            delta,
            gamma,
            prey,
            predator,
        } => {
            let px = ops.channel(prey)?;
            let py = ops.channel(predator)?;
            let dx = ops.deriv_of_channel(prey)?;
            let dy = ops.deriv_of_channel(predator)?;
            let xy = ops.tape.mul(px, py)?;
            let r1 = ops.combine(&[(1.0, dx), (-alpha, px), (beta, xy)])?;
            let r2 = ops.combine(&[(1.0, dy), (-delta, xy), (gamma, py)])?;
            vec![r1, r2]
        }
        PhysicsModel::Ohm {
            ref resistance,
            ref pairs,
        } => {
            let mut out = Vec::with_capacity(pairs.len());
            for (&(v, i), &r) in pairs.iter().zip(resistance) {
                let dv = ops.deriv_of_channel(v)?;
                let di = ops.deriv_of_channel(i)?;
                out.push(ops.combine(&[(1.0, dv), (-r, di)])?);
            }
            out
        }
        PhysicsModel::EmpsIdm {
            mass,
            viscous,
            coulomb,
            offset,
            torque,
            position,
        } => {
            let tau = ops.channel(torque)?;
            let dq = ops.deriv_of_channel(position)?;
            let ddq = ops.deriv(dq)?;
            let arg = ops.tape.scale(dq, 1.0 / SIGN_SMOOTHING);
            let smooth_sign = ops.tape.tanh(arg);
            let r = ops.combine(&[
                (1.0, tau),
                (-mass, ddq),
                (-viscous, dq),
                (-coulomb, smooth_sign),
            ])?;
            let shift = ops.tape.constant(Tensor::scalar(-offset));
            vec![ops.tape.add(r, shift)?]
        }
        PhysicsModel::IdealGas {
            gas_constant,
            density,
            pressure,
            volume,
            temperature,
            mass,
            mass_flow,
            volume_flow,
        } => {
            let p = ops.channel(pressure)?;
            let vol = ops.channel(volume)?;
            let m = ops.channel(mass)?;
            let inv = ops.tape.recip(m)?;
            let v = ops.tape.mul(vol, inv)?;
            let dv = ops.deriv(v)?;
            let dp = ops.deriv_of_channel(pressure)?;
            let dtemp = ops.deriv_of_channel(temperature)?;
            let pdv = ops.tape.mul(p, dv)?;
            let vdp = ops.tape.mul(v, dp)?;
            let r1 = ops.combine(&[(1.0, pdv), (1.0, vdp), (-gas_constant, dtemp)])?;
            let mdot = ops.channel(mass_flow)?;
            let q = ops.channel(volume_flow)?;
            let r2 = ops.combine(&[(1.0, mdot), (-density, q)])?;
            vec![r1, r2]
        }
    };
    Ok(res)
}

fn check_inputs(
    batch: usize,
    steps: &[usize],
    schedule: &WeightSchedule,
    scale: &ScaleParams,
    channels: usize,
) -> Result<()> {
    ensure!(batch > 0, "physics loss on an empty batch");
    ensure!(
        steps.len() == batch,
        "{} diffusion steps for a batch of {}",
        steps.len(),
        batch
    );
    ensure!(
        scale.channels() == channels,
        "scale params cover {} channels but data has {}",
        scale.channels(),
        channels
    );
    for &t in steps {
        ensure!(
            t <= schedule.steps(),
            "diffusion step {} beyond weight schedule length {}",
            t,
            schedule.steps()
        );
    }
    Ok(())
}

/// Weighted physics loss recorded on `tape`.
///
/// `x0_hat` is a `B × L·C` node of scaled reconstructions. Each row is mapped
/// back to physical units, its residual MSE is weighted by the cumulative
/// schedule weight at that row's step, and the batch mean is returned.
#[allow(clippy::too_many_arguments)]
pub fn pinn_loss_on_tape(
    tape: &mut Tape,
    x0_hat: NodeId,
    steps: &[usize],
    model: &PhysicsModel,
    schedule: &WeightSchedule,
    scale: &ScaleParams,
    window: usize,
    dt: f64,
) -> Result<NodeId> {
    let channels = scale.channels();
    let (batch, width) = tape.value(x0_hat).dims();
    check_inputs(batch, steps, schedule, scale, channels)?;
    ensure!(
        width == window * channels,
        "reconstruction width {} is not {}×{}",
        width,
        window,
        channels
    );

    let mut coef = Vec::with_capacity(batch * width);
    let mut shift = Vec::with_capacity(batch * width);
    for _ in 0..batch {
        for i in 0..width {
            let (half, centre) = scale.affine(i % channels);
            coef.push(half);
            shift.push(centre);
        }
    }
    let coef = tape.constant(Tensor::from_parts(vec![batch, width], coef));
    let shift = tape.constant(Tensor::from_parts(vec![batch, width], shift));
    let stretched = tape.mul(x0_hat, coef)?;
    let physical = tape.add(stretched, shift)?;

    let res = residual_on_tape(tape, model, physical, window, channels, dt)?;
    let all = tape.concat(&res)?;
    let per_row = (res.len() * window * batch) as f64;
    let mut weights = Vec::with_capacity(batch * res.len() * window);
    for &t in steps {
        let w = (schedule.cumulative(t)? / per_row).sqrt();
        weights.extend(std::iter::repeat_n(w, res.len() * window));
    }
    let weights = tape.constant(Tensor::from_parts(vec![batch, res.len() * window], weights));
    let weighted = tape.mul(all, weights)?;
    Ok(tape.sum_sq(weighted))
}

/// Plain evaluation of the weighted physics loss on scaled reconstructions.
///
/// Uses the exact `sign` in the EMPS friction term.
pub fn pinn_loss(
    x0_hat: &[Vec<f64>],
    steps: &[usize],
    model: &PhysicsModel,
    schedule: &WeightSchedule,
    scale: &ScaleParams,
    dt: f64,
) -> Result<f64> {
    let channels = scale.channels();
    check_inputs(x0_hat.len(), steps, schedule, scale, channels)?;
    let mut total = 0.0;
    for (row, &t) in x0_hat.iter().zip(steps) {
        let res = residual(model, &scale.invert(row), channels, dt)?;
        let count: usize = res.iter().map(|r| r.len()).sum();
        let mse = res.iter().flatten().map(|r| r * r).sum::<f64>() / count as f64;
        total += schedule.cumulative(t)? * mse;
    }
    Ok(total / x0_hat.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;
    use crate::physics::ScheduleKind;

    fn lv_batch() -> Vec<Vec<f64>> {
        (0..3)
            .map(|b| {
                (0..12)
                    .flat_map(|i| {
                        let s = (i as f64 * 0.3 + b as f64).sin();
                        [0.4 * s, -0.2 + 0.5 * s * s]
                    })
                    .collect()
            })
            .collect()
    }

    fn lv_scale() -> ScaleParams {
        ScaleParams {
            min: vec![0.0, 0.5],
            max: vec![10.0, 16.0],
        }
    }

    #[test]
    fn tape_matches_plain_evaluation() {
        let model = PhysicsModel::predator_prey();
        let sched = WeightSchedule::with_defaults(ScheduleKind::Sigmoid, 100).unwrap();
        let batch = lv_batch();
        let steps = [1, 40, 60];
        let plain = pinn_loss(&batch, &steps, &model, &sched, &lv_scale(), 0.01).unwrap();
        let mut tape = Tape::new();
        let flat: Vec<f64> = batch.concat();
        let x = tape.leaf(Tensor::matrix(3, 24, flat).unwrap(), true);
        let node =
            pinn_loss_on_tape(&mut tape, x, &steps, &model, &sched, &lv_scale(), 12, 0.01).unwrap();
        let taped = tape.value(node).data()[0];
        assert!(
            (plain - taped).abs() <= 1e-10 * plain.abs(),
            "{plain} vs {taped}"
        );
        assert!(plain > 0.0);
    }

    #[test]
    fn zero_weights_and_fixed_point_give_zero() {
        let model = PhysicsModel::predator_prey();
        let zero = WeightSchedule::zero(100);
        let batch = lv_batch();
        let l = pinn_loss(&batch, &[5, 6, 7], &model, &zero, &lv_scale(), 0.01).unwrap();
        assert_eq!(l, 0.0);

        let scale = lv_scale();
        let fixed = scale.apply(&[0.25, 2.75].repeat(12));
        let sched = WeightSchedule::with_defaults(ScheduleKind::Sigmoid, 100).unwrap();
        let l = pinn_loss(&[fixed], &[1], &model, &sched, &scale, 0.01).unwrap();
        assert!(l < 1e-24, "{l}");
    }

    #[test]
    fn permutation_invariant() {
        let model = PhysicsModel::predator_prey();
        let sched = WeightSchedule::with_defaults(ScheduleKind::LogSigmoid, 100).unwrap();
        let mut batch = lv_batch();
        let mut steps = vec![3, 20, 9];
        let a = pinn_loss(&batch, &steps, &model, &sched, &lv_scale(), 0.01).unwrap();
        batch.rotate_left(1);
        steps.rotate_left(1);
        let b = pinn_loss(&batch, &steps, &model, &sched, &lv_scale(), 0.01).unwrap();
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sched = WeightSchedule::with_defaults(ScheduleKind::Sigmoid, 100).unwrap();
        let flat: Vec<f64> = lv_batch().concat();
        let lv = PhysicsModel::predator_prey();
        let err = grad_check(
            |tape, p| {
                pinn_loss_on_tape(tape, p[0], &[2, 30, 55], &lv, &sched, &lv_scale(), 12, 0.01)
            },
            &[Tensor::matrix(3, 24, flat).unwrap()],
            1e-6,
        );
        assert!(err < 1e-4, "lv {err}");

        let emps = PhysicsModel::EmpsIdm {
            mass: 2.0,
            viscous: 0.5,
            coulomb: 0.3,
            offset: 0.1,
            torque: 0,
            position: 1,
        };
        let data: Vec<f64> = (0..2 * 10 * 2)
            .map(|i| (i as f64 * 0.41).cos() * 0.5)
            .collect();
        let err = grad_check(
            |tape, p| {
                pinn_loss_on_tape(
                    tape,
                    p[0],
                    &[1, 2],
                    &emps,
                    &sched,
                    &ScaleParams::identity(2),
                    10,
                    0.1,
                )
            },
            &[Tensor::matrix(2, 20, data).unwrap()],
            1e-6,
        );
        assert!(err < 1e-4, "emps {err}");

        let gas = PhysicsModel::IdealGas {
            gas_constant: 2.0,
            density: 1.5,
            pressure: 0,
            volume: 1,
            temperature: 2,
            mass: 3,
            mass_flow: 4,
            volume_flow: 5,
        };
        let data: Vec<f64> = (0..6 * 5)
            .map(|i| 0.3 * (i as f64 * 0.7).sin() + if i % 6 == 3 { 0.2 } else { 0.0 })
            .collect();
        let scale = ScaleParams {
            min: vec![1.0, 0.5, 1.0, 1.0, 0.0, 0.0],
            max: vec![3.0, 1.5, 2.0, 4.0, 1.0, 1.0],
        };
        let err = grad_check(
            |tape, p| pinn_loss_on_tape(tape, p[0], &[1], &gas, &sched, &scale, 5, 0.2),
            &[Tensor::matrix(1, 30, data).unwrap()],
            1e-6,
        );
        assert!(err < 1e-4, "gas {err}");
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let model = PhysicsModel::predator_prey();
        let sched = WeightSchedule::zero(10);
        let err = pinn_loss(
            &[vec![0.0; 12]],
            &[1],
            &model,
            &sched,
            &ScaleParams::identity(1),
            0.1,
        );
        assert!(err.is_err());
        let err = pinn_loss(&lv_batch(), &[1, 2], &model, &sched, &lv_scale(), 0.1);
        assert!(err.is_err());
    }
}
