use serde::{Deserialize, Serialize};

use super::TimeSeries;
use crate::error::{ensure, Error, Result};

/// Lotka–Volterra rates.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl Default for LvParams {
    fn default() -> Self {
        LvParams {
            alpha: 1.1,
            beta: 0.4,
            delta: 0.4,
            gamma: 0.1,
        }
    }
}

impl LvParams {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("delta", self.delta),
            ("gamma", self.gamma),
        ] {
            ensure!(
                v.is_finite() && v > 0.0,
                "LV parameter {} must be positive, got {}",
                name,
                v
            );
        }
        Ok(())
    }

    fn scaled(&self, factor: &ParamScale) -> LvParams {
        LvParams {
            alpha: self.alpha * factor.alpha,
            beta: self.beta * factor.beta,
            delta: self.delta * factor.delta,
            gamma: self.gamma * factor.gamma,
        }
    }

    fn rates(&self, x: f64, y: f64) -> [f64; 2] {
        [
            self.alpha * x - self.beta * x * y,
            self.delta * x * y - self.gamma * y,
        ]
    }

    /// First integral `δx − γ ln x + βy − α ln y`.
    pub fn invariant(&self, x: f64, y: f64) -> f64 {
        self.delta * x - self.gamma * x.ln() + self.beta * y - self.alpha * y.ln()
    }

    /// Interior equilibrium `(γ/δ, α/β)`.
    pub fn fixed_point(&self) -> (f64, f64) {
        (self.gamma / self.delta, self.alpha / self.beta)
    }
}

/// Multiplicative factors applied to each LV parameter inside an anomaly.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamScale {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl ParamScale {
    pub fn uniform(f: f64) -> Self {
        ParamScale {
            alpha: f,
            beta: f,
            delta: f,
            gamma: f,
        }
    }

    fn is_identity(&self) -> bool {
        [self.alpha, self.beta, self.delta, self.gamma]
            .iter()
            .all(|&v| v == 1.0)
    }
}

impl Default for ParamScale {
    fn default() -> Self {
        ParamScale::uniform(1.5)
    }
}

/// A run of samples `[start, start + length)` simulated with scaled parameters.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySegment {
    pub start: usize,
    pub length: usize,
    #[serde(default)]
    pub scale: ParamScale,
}

fn rk4_step(p: &LvParams, s: [f64; 2], dt: f64) -> [f64; 2] {
    let k1 = p.rates(s[0], s[1]);
    let k2 = p.rates(s[0] + 0.5 * dt * k1[0], s[1] + 0.5 * dt * k1[1]);
    let k3 = p.rates(s[0] + 0.5 * dt * k2[0], s[1] + 0.5 * dt * k2[1]);
    let k4 = p.rates(s[0] + dt * k3[0], s[1] + dt * k3[1]);
    [
        s[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        s[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// RK4 integration of the LV system, `n` samples starting at `(x0, y0)`.
pub fn simulate_lv(params: &LvParams, x0: f64, y0: f64, n: usize, dt: f64) -> Result<TimeSeries> {
    inject_anomaly_lv(params, x0, y0, n, dt, &[])
}

/// Simulates `n` LV samples, switching to scaled parameters for every step
/// that lands inside a segment. The state is carried across segment edges.
pub fn inject_anomaly_lv(
    params: &LvParams,
    x0: f64,
    y0: f64,
    n: usize,
    dt: f64,
    segments: &[AnomalySegment],
) -> Result<TimeSeries> {
    params.validate()?;
    ensure!(n >= 2, "LV simulation needs n >= 2, got {}", n);
    ensure!(
        dt > 0.0 && dt.is_finite(),
        "dt must be positive, got {}",
        dt
    );
    ensure!(
        x0.is_finite() && y0.is_finite() && x0 > 0.0 && y0 > 0.0,
        "initial populations must be positive"
    );
    let mut sorted = segments.to_vec();
    sorted.sort_by_key(|s| s.start);
    for (i, seg) in sorted.iter().enumerate() {
        ensure!(
            seg.length > 0,
            "anomaly segment at {} has zero length",
            seg.start
        );
        ensure!(
            seg.start + seg.length <= n,
            "anomaly segment {}..{} exceeds series length {}",
            seg.start,
            seg.start + seg.length,
            n
        );
        if let Some(next) = sorted.get(i + 1) {
            ensure!(
                seg.start + seg.length <= next.start,
                "anomaly segments {}..{} and {}..{} overlap",
                seg.start,
                seg.start + seg.length,
                next.start,
                next.start + next.length
            );
        }
        if seg.scale.is_identity() {
            log::warn!(
                "anomaly segment at {} has unit scale; labels set but series unchanged",
                seg.start
            );
        }
    }

    let mut step_params = vec![*params; n];
    let mut labels = vec![false; n];
    for seg in &sorted {
        let p = params.scaled(&seg.scale);
        p.validate()?;
        for i in seg.start..seg.start + seg.length {
            step_params[i] = p;
            labels[i] = true;
        }
    }

    let mut values = Vec::with_capacity(2 * n);
    let mut s = [x0, y0];
    values.extend_from_slice(&s);
    for (i, p) in step_params.iter().enumerate().skip(1) {
        s = rk4_step(p, s, dt);
        if !(s[0].is_finite() && s[1].is_finite()) {
            return Err(Error::numeric(
                format!("LV integration step {i}"),
                "state became non-finite",
            ));
        }
        values.extend_from_slice(&s);
    }
    TimeSeries::new(
        vec!["prey".into(), "predator".into()],
        vec!["count".into(), "count".into()],
        dt,
        values,
        labels,
    )
}

/// Drive and plant parameters for the synthetic EMPS axis.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpsParams {
    pub mass: f64,
    pub viscous: f64,
    pub coulomb: f64,
    pub offset: f64,
    /// Torque amplitude around `offset`.
    pub amplitude: f64,
    /// Drive frequency in Hz.
    pub frequency: f64,
}

impl Default for EmpsParams {
    fn default() -> Self {
        EmpsParams {
            mass: 95.1,
            viscous: 203.5,
            coulomb: 20.4,
            offset: -3.0,
            amplitude: 60.0,
            frequency: 0.5,
        }
    }
}

const EMPS_SUBSTEPS: usize = 20;

/// Integrates `q̈ = (τ − F_v q̇ − F_c sign(q̇) − offset)/M` under
/// `τ = offset + A sin(2πft)` and emits `(τ, q, q̇)`.
///
/// Sticking is modelled explicitly: a resting axis stays at rest while the
/// net drive is within the Coulomb band.
pub fn simulate_emps(p: &EmpsParams, n: usize, dt: f64) -> Result<TimeSeries> {
    ensure!(p.mass > 0.0, "EMPS mass must be positive, got {}", p.mass);
    ensure!(
        [p.viscous, p.coulomb, p.offset, p.amplitude, p.frequency]
            .iter()
            .all(|v| v.is_finite()),
        "EMPS profile must be finite"
    );
    ensure!(
        n >= 2 && dt > 0.0,
        "EMPS simulation needs n >= 2 and dt > 0"
    );
    let torque =
        |t: f64| p.offset + p.amplitude * (2.0 * std::f64::consts::PI * p.frequency * t).sin();
    let accel = |tau: f64, v: f64| -> f64 {
        if v == 0.0 && (tau - p.offset).abs() <= p.coulomb {
            return 0.0;
        }
        let dir = if v != 0.0 {
            v.signum()
        } else {
            (tau - p.offset).signum()
        };
        (tau - p.viscous * v - p.coulomb * dir - p.offset) / p.mass
    };
    let h = dt / EMPS_SUBSTEPS as f64;
    let (mut q, mut v) = (0.0f64, 0.0f64);
    let mut values = Vec::with_capacity(3 * n);
    values.extend_from_slice(&[torque(0.0), q, v]);
    for i in 1..n {
        for k in 0..EMPS_SUBSTEPS {
            let t = (i - 1) as f64 * dt + k as f64 * h;
            // Midpoint step; a velocity sign change snaps to rest.
            let a1 = accel(torque(t), v);
            let vm = v + 0.5 * h * a1;
            let vm = if v != 0.0 && vm.signum() != v.signum() {
                0.0
            } else {
                vm
            };
            let a2 = accel(torque(t + 0.5 * h), vm);
            let nv = v + h * a2;
            let nv = if (v != 0.0 && nv.signum() != v.signum()) || (v == 0.0 && a2 == 0.0) {
                0.0
            } else {
                nv
            };
            q += 0.5 * h * (v + nv);
            v = nv;
        }
        if !(q.is_finite() && v.is_finite()) {
            return Err(Error::numeric(
                format!("EMPS step {i}"),
                "state became non-finite",
            ));
        }
        values.extend_from_slice(&[torque(i as f64 * dt), q, v]);
    }
    TimeSeries::new(
        vec!["torque".into(), "position".into(), "velocity".into()],
        vec!["N".into(), "m".into(), "m/s".into()],
        dt,
        values,
        vec![false; n],
    )
}

/// Process profile for the synthetic compressor tank.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasParams {
    pub gas_constant: f64,
    pub density: f64,
    pub volume: f64,
    /// Relative amplitude of the slow tank-volume oscillation.
    pub volume_swing: f64,
    pub initial_mass: f64,
    pub base_temperature: f64,
    pub temperature_swing: f64,
    pub base_flow: f64,
    pub flow_swing: f64,
    /// Angular frequency shared by the temperature and flow profiles.
    pub omega: f64,
}

impl Default for GasParams {
    fn default() -> Self {
        GasParams {
            gas_constant: 287.05,
            density: 1.2,
            volume: 0.5,
            volume_swing: 0.05,
            initial_mass: 2.0,
            base_temperature: 300.0,
            temperature_swing: 15.0,
            base_flow: 0.02,
            flow_swing: 0.01,
            omega: 0.8,
        }
    }
}

/// Emits `(P, V, T, m, ṁ, Q)` with `P·V = m·R·T` and `ṁ = ρQ` holding exactly.
pub fn simulate_gas(p: &GasParams, n: usize, dt: f64) -> Result<TimeSeries> {
    ensure!(
        p.density > 0.0,
        "gas density must be positive, got {}",
        p.density
    );
    ensure!(
        p.volume > 0.0 && p.initial_mass > 0.0,
        "tank volume and mass must be positive"
    );
    ensure!(p.gas_constant > 0.0, "gas constant must be positive");
    ensure!(
        p.volume_swing.abs() < 1.0,
        "volume swing must stay below 1 so the volume stays positive"
    );
    ensure!(
        p.base_flow >= p.flow_swing.abs(),
        "flow profile must stay non-negative so the tank mass stays positive"
    );
    ensure!(
        p.base_temperature > p.temperature_swing.abs(),
        "temperature profile must stay positive"
    );
    ensure!(n >= 2 && dt > 0.0, "gas simulation needs n >= 2 and dt > 0");
    let mut values = Vec::with_capacity(6 * n);
    for i in 0..n {
        let t = i as f64 * dt;
        let q = p.base_flow + p.flow_swing * (p.omega * t).sin();
        let mdot = p.density * q;
        let mass = p.initial_mass
            + p.density * (p.base_flow * t + p.flow_swing / p.omega * (1.0 - (p.omega * t).cos()));
        let temp = p.base_temperature + p.temperature_swing * (0.5 * p.omega * t).sin();
        let volume = p.volume * (1.0 + p.volume_swing * (0.3 * p.omega * t).sin());
        let pressure = mass * p.gas_constant * temp / volume;
        values.extend_from_slice(&[pressure, volume, temp, mass, mdot, q]);
    }
    TimeSeries::new(
        [
            "pressure",
            "volume",
            "temperature",
            "mass",
            "mass_flow",
            "volume_flow",
        ]
        .map(String::from)
        .to_vec(),
        ["Pa", "m^3", "K", "kg", "kg/s", "m^3/s"]
            .map(String::from)
            .to_vec(),
        dt,
        values,
        vec![false; n],
    )
}
