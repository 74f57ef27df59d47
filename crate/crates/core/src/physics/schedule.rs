use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::sigmoid;
use crate::error::{ensure, Error, Result};

/// Shape function `f` of the per-step physics weight.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    LogSigmoid,
    HardSigmoid,
    Sigmoid,
    Relu,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 4] = [
        ScheduleKind::LogSigmoid,
        ScheduleKind::HardSigmoid,
        ScheduleKind::Sigmoid,
        ScheduleKind::Relu,
    ];

    /// Default `(m, n, l)` for each kind.
    pub fn default_bounds(self) -> (f64, f64, f64) {
        match self {
            ScheduleKind::LogSigmoid => (0.01, 0.1, 0.1),
            ScheduleKind::HardSigmoid => (0.01, 1.0, 1.0),
            ScheduleKind::Sigmoid => (0.01, 1.0, 1.0),
            ScheduleKind::Relu => (0.001, 0.01, 0.9),
        }
    }

    /// Argument of `f` at step `s` of `T`.
    ///
    /// Sigmoid-family kinds sweep `z = 6·(2s/T − 1)` across their active
    /// region; relu uses `z = s/T`.
    pub fn argument(self, s: usize, steps: usize) -> f64 {
        let u = s as f64 / steps as f64;
        match self {
            ScheduleKind::Relu => u,
            _ => 6.0 * (2.0 * u - 1.0),
        }
    }

    pub fn eval(self, z: f64) -> f64 {
        match self {
            // ln σ(z) = −softplus(−z), computed stably.
            ScheduleKind::LogSigmoid => -((-z).max(0.0) + (-z.abs()).exp().ln_1p()),
            ScheduleKind::HardSigmoid => (z / 6.0 + 0.5).clamp(0.0, 1.0),
            ScheduleKind::Sigmoid => sigmoid(z),
            ScheduleKind::Relu => z.max(0.0),
        }
    }

    fn name(self) -> &'static str {
        match self {
            ScheduleKind::LogSigmoid => "log-sigmoid",
            ScheduleKind::HardSigmoid => "hard-sigmoid",
            ScheduleKind::Sigmoid => "sigmoid",
            ScheduleKind::Relu => "relu",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown weight schedule kind '{s}'")))
    }
}

/// Per-step physics weights `λ_s = clamp(f(z(s))·(m − n) + l, 0, 1)` and
/// their running products `λ̄_t = ∏_{s≤t} λ_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSchedule {
    pub kind: ScheduleKind,
    pub m: f64,
    pub n: f64,
    pub l: f64,
    lambda: Vec<f64>,
    cumulative: Vec<f64>,
}

impl WeightSchedule {
    pub fn new(kind: ScheduleKind, m: f64, n: f64, l: f64, steps: usize) -> Result<Self> {
        ensure!(steps >= 1, "weight schedule needs at least one step");
        ensure!(
            m.is_finite() && n.is_finite() && l.is_finite(),
            "weight schedule bounds must be finite"
        );
        let lambda: Vec<f64> = (1..=steps)
            .map(|s| raw_weight(kind, m, n, l, s, steps).clamp(0.0, 1.0))
            .collect();
        let mut cumulative = Vec::with_capacity(steps + 1);
        cumulative.push(1.0);
        for &w in &lambda {
            let last = *cumulative.last().unwrap();
            cumulative.push(last * w);
        }
        Ok(WeightSchedule {
            kind,
            m,
            n,
            l,
            lambda,
            cumulative,
        })
    }

    pub fn with_defaults(kind: ScheduleKind, steps: usize) -> Result<Self> {
        let (m, n, l) = kind.default_bounds();
        Self::new(kind, m, n, l, steps)
    }

    /// A schedule that switches the physics term off.
    pub fn zero(steps: usize) -> Self {
        WeightSchedule {
            kind: ScheduleKind::Relu,
            m: 0.0,
            n: 0.0,
            l: 0.0,
            lambda: vec![0.0; steps],
            cumulative: std::iter::once(1.0)
                .chain(std::iter::repeat_n(0.0, steps))
                .collect(),
        }
    }

    pub fn steps(&self) -> usize {
        self.lambda.len()
    }

    /// `λ_s` for `1 ≤ s ≤ T`.
    pub fn weight(&self, s: usize) -> Result<f64> {
        ensure!(
            (1..=self.steps()).contains(&s),
            "weight step {} outside 1..={}",
            s,
            self.steps()
        );
        Ok(self.lambda[s - 1])
    }

    /// `λ̄_t` for `0 ≤ t ≤ T`; `λ̄_0 = 1`.
    pub fn cumulative(&self, t: usize) -> Result<f64> {
        ensure!(
            t <= self.steps(),
            "cumulative weight step {} beyond T = {}",
            t,
            self.steps()
        );
        Ok(self.cumulative[t])
    }
}

/// `f(z(s))·(m − n) + l` before clamping.
pub fn raw_weight(kind: ScheduleKind, m: f64, n: f64, l: f64, s: usize, steps: usize) -> f64 {
    kind.eval(kind.argument(s, steps)) * (m - n) + l
}

/// `λ_{PI,s}` for step `s`.
pub fn pinn_weight(s: usize, schedule: &WeightSchedule) -> Result<f64> {
    schedule.weight(s)
}

/// `λ̄_{PI,t}`.
pub fn cumulative_weight(t: usize, schedule: &WeightSchedule) -> Result<f64> {
    schedule.cumulative(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_final_step_value() {
        let s = WeightSchedule::with_defaults(ScheduleKind::Relu, 100).unwrap();
        // relu(1)·(0.001 − 0.01) + 0.9
        assert!((pinn_weight(100, &s).unwrap() - 0.891).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_approaches_offset_for_very_negative_argument() {
        let (m, n, l) = ScheduleKind::Sigmoid.default_bounds();
        let v = ScheduleKind::Sigmoid.eval(-40.0) * (m - n) + l;
        assert!((v - 1.0).abs() < 1e-15);
        let s = WeightSchedule::with_defaults(ScheduleKind::Sigmoid, 100).unwrap();
        assert!(pinn_weight(1, &s).unwrap() > 0.997);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        let f = ScheduleKind::LogSigmoid;
        assert!((f.eval(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!((f.eval(-50.0) + 50.0).abs() < 1e-12);
        assert!(f.eval(50.0).abs() < 1e-20);
    }

    #[test]
    fn hard_sigmoid_breakpoints() {
        let f = ScheduleKind::HardSigmoid;
        assert_eq!(f.eval(-3.0), 0.0);
        assert_eq!(f.eval(0.0), 0.5);
        assert_eq!(f.eval(3.0), 1.0);
    }

    #[test]
    fn empty_product_and_unit_weights() {
        let s = WeightSchedule::with_defaults(ScheduleKind::Sigmoid, 100).unwrap();
        assert_eq!(cumulative_weight(0, &s).unwrap(), 1.0);
        let ones = WeightSchedule::new(ScheduleKind::Relu, 0.0, 0.0, 1.0, 50).unwrap();
        assert!((0..=50).all(|t| ones.cumulative(t).unwrap() == 1.0));
    }

    #[test]
    fn every_kind_is_clamped_and_monotone() {
        for kind in ScheduleKind::ALL {
            let s = WeightSchedule::with_defaults(kind, 100).unwrap();
            for t in 1..=100 {
                let w = s.weight(t).unwrap();
                assert!((0.0..=1.0).contains(&w), "{kind} λ_{t} = {w}");
                assert!(s.cumulative(t).unwrap() <= s.cumulative(t - 1).unwrap());
            }
        }
    }

    #[test]
    fn clamp_is_inactive_for_sigmoid_and_hard_sigmoid() {
        for kind in [ScheduleKind::Sigmoid, ScheduleKind::HardSigmoid] {
            let (m, n, l) = kind.default_bounds();
            for s in 1..=100 {
                let raw = raw_weight(kind, m, n, l, s, 100);
                assert!((0.0..=1.0).contains(&raw), "{kind} raw {raw}");
            }
        }
    }

    #[test]
    fn out_of_range_steps_and_unknown_kinds() {
        let s = WeightSchedule::with_defaults(ScheduleKind::Relu, 10).unwrap();
        assert!(s.weight(0).is_err());
        assert!(s.weight(11).is_err());
        assert!(s.cumulative(11).is_err());
        assert!("tanhshrink".parse::<ScheduleKind>().is_err());
        assert_eq!(
            "log-sigmoid".parse::<ScheduleKind>().unwrap(),
            ScheduleKind::LogSigmoid
        );
    }
}
