//! Governing-equation residuals, physics weight schedules, and the weighted
//! physics-informed loss.
//!
//! Time derivatives are finite differences: second-order central in the
//! interior and second-order one-sided at both ends.

mod loss;
mod schedule;

pub use loss::{pinn_loss, pinn_loss_on_tape, residual_on_tape};
pub use schedule::{cumulative_weight, pinn_weight, raw_weight, ScheduleKind, WeightSchedule};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Smoothing width for `sign(q̇) ≈ tanh(q̇/κ)` in the differentiable EMPS residual.
pub const SIGN_SMOOTHING: f64 = 1e-3;

/// Governing equations with their parameters and channel map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PhysicsModel {
    /// `ẋ = αx − βxy`, `ẏ = δxy − γy`.
    LotkaVolterra {
        alpha: f64,
        beta: f64,
        delta: f64,
        gamma: f64,
        prey: usize,
        predator: usize,
    },
    /// `V̇_k = R_k·İ_k` for each `(voltage, current)` pair.
    Ohm {
        resistance: Vec<f64>,
        pairs: Vec<(usize, usize)>,
    },
    /// `τ = M q̈ + F_v q̇ + F_c sign(q̇) + offset`.
    EmpsIdm {
        mass: f64,
        viscous: f64,
        coulomb: f64,
        offset: f64,
        torque: usize,
        position: usize,
    },
    /// `P v̇ + v Ṗ = R Ṫ` with `v = V/m`, and `ṁ = ρ Q`.
    IdealGas {
        gas_constant: f64,
        density: f64,
        pressure: usize,
        volume: usize,
        temperature: usize,
        mass: usize,
        mass_flow: usize,
        volume_flow: usize,
    },
}

impl PhysicsModel {
    /// Lotka–Volterra with α=1.1, β=0.4, δ=0.4, γ=0.1 on channels (0, 1).
    pub fn predator_prey() -> Self {
        PhysicsModel::LotkaVolterra {
            alpha: 1.1,
            beta: 0.4,
            delta: 0.4,
            gamma: 0.1,
            prey: 0,
            predator: 1,
        }
    }

    fn channels_used(&self) -> Vec<usize> {
        match self {
            PhysicsModel::LotkaVolterra { prey, predator, .. } => vec![*prey, *predator],
            PhysicsModel::Ohm { pairs, .. } => pairs.iter().flat_map(|&(v, i)| [v, i]).collect(),
            PhysicsModel::EmpsIdm {
                torque, position, ..
            } => vec![*torque, *position],
            PhysicsModel::IdealGas {
                pressure,
                volume,
                temperature,
                mass,
                mass_flow,
                volume_flow,
                ..
            } => vec![
                *pressure,
                *volume,
                *temperature,
                *mass,
                *mass_flow,
                *volume_flow,
            ],
        }
    }

    fn params(&self) -> Vec<f64> {
        match self {
            PhysicsModel::LotkaVolterra {
                alpha,
                beta,
                delta,
                gamma,
                ..
            } => vec![*alpha, *beta, *delta, *gamma],
            PhysicsModel::Ohm { resistance, .. } => resistance.clone(),
            PhysicsModel::EmpsIdm {
                mass,
                viscous,
                coulomb,
                offset,
                ..
            } => vec![*mass, *viscous, *coulomb, *offset],
            PhysicsModel::IdealGas {
                gas_constant,
                density,
                ..
            } => vec![*gas_constant, *density],
        }
    }

    /// Checks the channel map against a dataset with `channels` columns.
    pub fn validate(&self, channels: usize) -> Result<()> {
        for c in self.channels_used() {
            ensure!(
                c < channels,
                "physics model refers to channel {} but data has {} channels",
                c,
                channels
            );
        }
        ensure!(
            self.params().iter().all(|p| p.is_finite()),
            "physics parameters must be finite"
        );
        if let PhysicsModel::Ohm { resistance, pairs } = self {
            ensure!(
                resistance.len() == pairs.len(),
                "Ohm model has {} resistances for {} pairs",
                resistance.len(),
                pairs.len()
            );
        }
        Ok(())
    }

    /// Number of residual equations.
    pub fn equations(&self) -> usize {
        match self {
            PhysicsModel::LotkaVolterra { .. } => 2,
            PhysicsModel::Ohm { pairs, .. } => pairs.len(),
            PhysicsModel::EmpsIdm { .. } => 1,
            PhysicsModel::IdealGas { .. } => 2,
        }
    }
}

/// First derivative of a uniformly sampled series.
pub fn finite_diff(series: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = series.len();
    ensure!(n >= 3, "finite_diff needs at least 3 samples, got {}", n);
    ensure!(dt > 0.0, "finite_diff needs dt > 0, got {}", dt);
    let mut out = Vec::with_capacity(n);
    out.push((-3.0 * series[0] + 4.0 * series[1] - series[2]) / (2.0 * dt));
    for i in 1..n - 1 {
        out.push((series[i + 1] - series[i - 1]) / (2.0 * dt));
    }
    out.push((3.0 * series[n - 1] - 4.0 * series[n - 2] + series[n - 3]) / (2.0 * dt));
    Ok(out)
}

/// Row-major `n × n` matrix `D` such that `D·x` equals [`finite_diff`]`(x)`.
pub(crate) fn diff_matrix(n: usize, dt: f64) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    let h = 1.0 / (2.0 * dt);
    d[0] = -3.0 * h;
    d[1] = 4.0 * h;
    d[2] = -h;
    for i in 1..n - 1 {
        d[i * n + i - 1] = -h;
        d[i * n + i + 1] = h;
    }
    d[(n - 1) * n + n - 3] = h;
    d[(n - 1) * n + n - 2] = -4.0 * h;
    d[(n - 1) * n + n - 1] = 3.0 * h;
    d
}

/// `sign` with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-timestep residuals of a `window × channels` row-major window, one
/// array per equation. Uses the exact `sign` for EMPS friction.
pub fn residual(
    model: &PhysicsModel,
    window: &[f64],
    channels: usize,
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    ensure!(channels > 0, "residual: zero channels");
    ensure!(
        window.len().is_multiple_of(channels),
        "residual: {} values is not a whole number of {}-channel rows",
        window.len(),
        channels
    );
    model.validate(channels)?;
    let len = window.len() / channels;
    let col = |c: usize| -> Vec<f64> { (0..len).map(|i| window[i * channels + c]).collect() };
    let res = match model {
        PhysicsModel::LotkaVolterra {
            alpha,
            beta,
            delta,
            gamma,
            prey,
            predator,
        } => {
            let (x, y) = (col(*prey), col(*predator));
            let (dx, dy) = (finite_diff(&x, dt)?, finite_diff(&y, dt)?);
            let r1 = (0..len)
                .map(|i| dx[i] - (alpha * x[i] - beta * x[i] * y[i]))
                .collect();
            let r2 = (0..len)
                .map(|i| dy[i] - (delta * x[i] * y[i] - gamma * y[i]))
                .collect();
            vec![r1, r2]
        }
        PhysicsModel::Ohm { resistance, pairs } => pairs
            .iter()
            .zip(resistance)
            .map(|(&(v, c), r)| {
                let dv = finite_diff(&col(v), dt)?;
                let di = finite_diff(&col(c), dt)?;
                Ok(dv.iter().zip(&di).map(|(a, b)| a - r * b).collect())
            })
            .collect::<Result<Vec<_>>>()?,
        PhysicsModel::EmpsIdm {
            mass,
            viscous,
            coulomb,
            offset,
            torque,
            position,
        } => {
            let tau = col(*torque);
            let dq = finite_diff(&col(*position), dt)?;
            let ddq = finite_diff(&dq, dt)?;
            vec![(0..len)
                .map(|i| {
                    tau[i] - (mass * ddq[i] + viscous * dq[i] + coulomb * sign(dq[i]) + offset)
                })
                .collect()]
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
            let p = col(*pressure);
            let m = col(*mass);
            ensure_nonzero(&m)?;
            let v: Vec<f64> = col(*volume).iter().zip(&m).map(|(a, b)| a / b).collect();
            let (dv, dp, dtemp) = (
                finite_diff(&v, dt)?,
                finite_diff(&p, dt)?,
                finite_diff(&col(*temperature), dt)?,
            );
            let r1 = (0..len)
                .map(|i| p[i] * dv[i] + v[i] * dp[i] - gas_constant * dtemp[i])
                .collect();
            let (mdot, q) = (col(*mass_flow), col(*volume_flow));
            let r2 = (0..len).map(|i| mdot[i] - density * q[i]).collect();
            vec![r1, r2]
        }
    };
    Ok(res)
}

fn ensure_nonzero(mass: &[f64]) -> Result<()> {
    if let Some(i) = mass
        .iter()
        .position(|m| m.abs() < f64::MIN_POSITIVE || !m.is_finite())
    {
        return Err(Error::numeric(
            format!("mass channel, sample {i}"),
            "mass must be finite and nonzero to form specific volume",
        ));
    }
    Ok(())
}

/// Mean of squared residuals over all equations and timesteps.
pub fn residual_mse(model: &PhysicsModel, window: &[f64], channels: usize, dt: f64) -> Result<f64> {
    let res = residual(model, window, channels, dt)?;
    let count: usize = res.iter().map(|r| r.len()).sum();
    Ok(res.iter().flatten().map(|r| r * r).sum::<f64>() / count as f64)
}

/// Same as [`residual_mse`] but skipping the first and last `trim` samples,
/// where one-sided stencils are used.
pub fn interior_residual_mse(
    model: &PhysicsModel,
    window: &[f64],
    channels: usize,
    dt: f64,
    trim: usize,
) -> Result<f64> {
    let res = residual(model, window, channels, dt)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in &res {
        ensure!(
            r.len() > 2 * trim,
            "window too short to trim {} samples per side",
            trim
        );
        for v in &r[trim..r.len() - trim] {
            sum += v * v;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}
