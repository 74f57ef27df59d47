//! Experiment configuration: one TOML file describes data, model, training,
//! physics and detection. Unknown keys are rejected on load.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{EmpsParams, GasParams, LvParams, ParamScale};
use crate::detect::ThresholdConfig;
use crate::diffusion::{ElboSteps, NoiseSchedule};
use crate::error::{Error, Result};
use crate::physics::{PhysicsModel, ScheduleKind, WeightSchedule};
use crate::seqnet::{NetConfig, Parameterization};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub physics: PhysicsConfig,
    pub detection: DetectionConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
}

/// Where the series comes from and how it is cut into windows.
///
/// The first `train_points` samples form the training section and must be
/// free of anomalies; evaluation windows are drawn from the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub dt: f64,
    pub window: usize,
    pub train_points: usize,
    /// Fraction of training-section windows used for fitting; the rest
    /// calibrate the threshold.
    pub split_ratio: f64,
    pub eval_seed: u64,
    pub eval_normal: usize,
    pub eval_anomalous: usize,
}

/// Anomaly segments laid out after the training section: `count` segments
/// of `length` samples, each followed by `gap` normal samples.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentLayout {
    pub count: usize,
    pub length: usize,
    pub gap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    LotkaVolterra {
        points: usize,
        x0: f64,
        y0: f64,
        alpha: f64,
        beta: f64,
        delta: f64,
        gamma: f64,
        /// Factors on (alpha, beta, delta, gamma) inside anomalies.
        anomaly_scale: [f64; 4],
        segments: SegmentLayout,
    },
    Emps {
        points: usize,
        mass: f64,
        viscous: f64,
        coulomb: f64,
        offset: f64,
        amplitude: f64,
        frequency: f64,
        /// Factor applied to the torque channel inside anomalies.
        anomaly_scale: f64,
        segments: SegmentLayout,
    },
    IdealGas {
        points: usize,
        gas_constant: f64,
        density: f64,
        volume: f64,
        volume_swing: f64,
        initial_mass: f64,
        base_temperature: f64,
        temperature_swing: f64,
        base_flow: f64,
        flow_swing: f64,
        omega: f64,
        /// Factor applied to the pressure channel inside anomalies.
        anomaly_scale: f64,
        segments: SegmentLayout,
    },
    Csv {
        path: PathBuf,
        /// Channels to read; empty means every non-label column.
        #[serde(default)]
        columns: Vec<String>,
    },
}

impl DataSource {
    pub fn lotka_volterra_default(points: usize, segments: SegmentLayout) -> Self {
        let p = LvParams::default();
        let s = ParamScale::default();
        DataSource::LotkaVolterra {
            points,
            x0: 10.0,
            y0: 2.0,
            alpha: p.alpha,
            beta: p.beta,
            delta: p.delta,
            gamma: p.gamma,
            anomaly_scale: [s.alpha, s.beta, s.delta, s.gamma],
            segments,
        }
    }

    pub fn emps_default(points: usize, segments: SegmentLayout) -> Self {
        let p = EmpsParams::default();
        DataSource::Emps {
            points,
            mass: p.mass,
            viscous: p.viscous,
            coulomb: p.coulomb,
            offset: p.offset,
            amplitude: p.amplitude,
            frequency: p.frequency,
            anomaly_scale: 2.0,
            segments,
        }
    }

    pub fn gas_default(points: usize, segments: SegmentLayout) -> Self {
        let p = GasParams::default();
        DataSource::IdealGas {
            points,
            gas_constant: p.gas_constant,
            density: p.density,
            volume: p.volume,
            volume_swing: p.volume_swing,
            initial_mass: p.initial_mass,
            base_temperature: p.base_temperature,
            temperature_swing: p.temperature_swing,
            base_flow: p.base_flow,
            flow_swing: p.flow_swing,
            omega: p.omega,
            anomaly_scale: 1.5,
            segments,
        }
    }

    /// Generated series length, `None` for CSV input.
    pub fn points(&self) -> Option<usize> {
        match self {
            DataSource::LotkaVolterra { points, .. }
            | DataSource::Emps { points, .. }
            | DataSource::IdealGas { points, .. } => Some(*points),
            DataSource::Csv { .. } => None,
        }
    }

    pub fn segments(&self) -> Option<SegmentLayout> {
        match self {
            DataSource::LotkaVolterra { segments, .. }
            | DataSource::Emps { segments, .. }
            | DataSource::IdealGas { segments, .. } => Some(*segments),
            DataSource::Csv { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub mode: Parameterization,
    pub steps: usize,
    pub sigma_first: f64,
    pub sigma_last: f64,
}

impl ModelConfig {
    pub fn net(&self, channels: usize, window: usize) -> NetConfig {
        NetConfig {
            channels,
            window,
            encoder_hidden: self.encoder_hidden.clone(),
            decoder_hidden: self.decoder_hidden.clone(),
            diffusion_steps: self.steps,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.sigma_first, self.sigma_last)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub enabled: bool,
    pub model: PhysicsModel,
    pub schedule: ScheduleKind,
    /// Amplitude bounds and offset; unset values take the kind's defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
}

impl PhysicsConfig {
    pub fn weights(&self, steps: usize) -> Result<WeightSchedule> {
        let (m, n, l) = self.schedule.default_bounds();
        WeightSchedule::new(
            self.schedule,
            self.m.unwrap_or(m),
            self.n.unwrap_or(n),
            self.l.unwrap_or(l),
            steps,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    pub trim: f64,
    pub k: f64,
    /// Number of reverse steps sampled for the ELBO; unset sums all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elbo_subsample: Option<usize>,
    pub elbo_seed: u64,
    /// Caps how many held-out windows are scored for calibration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_windows: Option<usize>,
}

impl DetectionConfig {
    pub fn threshold(&self) -> ThresholdConfig {
        ThresholdConfig {
            trim: self.trim,
            k: self.k,
        }
    }

    pub fn elbo_steps(&self) -> ElboSteps {
        self.elbo_subsample
            .map_or(ElboSteps::Full, ElboSteps::Subsample)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub kmeans_clusters: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { kmeans_clusters: 4 }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    /// Predator-prey preset sized for a laptop CPU: 20,000 points and capped
    /// batches per epoch.
    pub fn lv_desk() -> Self {
        let segments = SegmentLayout {
            count: 5,
            length: 1000,
            gap: 1000,
        };
        ExperimentConfig {
            dataset: DatasetConfig {
                source: DataSource::lotka_volterra_default(20_000, segments),
                dt: 0.01,
                window: 100,
                train_points: 10_000,
                split_ratio: 0.8,
                eval_seed: 0,
                eval_normal: 700,
                eval_anomalous: 300,
            },
            model: ModelConfig {
                encoder_hidden: vec![8, 16, 32],
                decoder_hidden: vec![16, 8, 2],
                mode: Parameterization::Epsilon,
                steps: 100,
                sigma_first: 1e-4,
                sigma_last: 0.05,
            },
            training: TrainConfig {
                epochs: 80,
                batch_size: 128,
                max_batches_per_epoch: Some(8),
                lr: 1e-4,
                l2: 1e-6,
                seed: 0,
                chunk: 32,
            },
            physics: PhysicsConfig {
                enabled: true,
                model: PhysicsModel::predator_prey(),
                schedule: ScheduleKind::LogSigmoid,
                m: None,
                n: None,
                l: None,
            },
            detection: DetectionConfig {
                trim: 0.1,
                k: 1.5,
                elbo_subsample: Some(10),
                elbo_seed: 0,
                validation_windows: Some(500),
            },
            baselines: BaselineConfig::default(),
        }
    }

    /// Predator-prey preset with the full-scale values: 100,000 points,
    /// 500 epochs over every window, full ELBO sum.
    pub fn lv_full() -> Self {
        let mut c = Self::lv_desk();
        c.dataset.source = DataSource::lotka_volterra_default(
            100_000,
            SegmentLayout {
                count: 10,
                length: 2000,
                gap: 2000,
            },
        );
        c.dataset.train_points = 60_000;
        c.training.epochs = 500;
        c.training.max_batches_per_epoch = None;
        c.detection.elbo_subsample = None;
        c.detection.validation_windows = None;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Points every seed field at `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.training.seed = seed;
        self.dataset.eval_seed = seed;
        self.detection.elbo_seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        // TOML integers are signed 64-bit.
        for (name, seed) in [
            ("training.seed", self.training.seed),
            ("dataset.eval_seed", self.dataset.eval_seed),
            ("detection.elbo_seed", self.detection.elbo_seed),
        ] {
            if seed > i64::MAX as u64 {
                return Err(config_err(format!(
                    "{name} must not exceed {}, got {seed}",
                    i64::MAX
                )));
            }
        }
        let d = &self.dataset;
        positive("dataset.dt", d.dt)?;
        if d.window < 3 {
            return Err(config_err("dataset.window must be at least 3"));
        }
        if !(d.split_ratio > 0.0 && d.split_ratio < 1.0) {
            return Err(config_err(format!(
                "dataset.split_ratio must lie in (0, 1), got {}",
                d.split_ratio
            )));
        }
        if d.train_points < d.window + 1 {
            return Err(config_err(
                "dataset.train_points must exceed the window length",
            ));
        }
        if let (Some(points), Some(seg)) = (d.source.points(), d.source.segments()) {
            let end = d.train_points + seg.count * (seg.length + seg.gap);
            if end > points {
                return Err(config_err(format!(
                    "training section plus anomaly segments need {end} points, series has {points}"
                )));
            }
        }
        match &d.source {
            DataSource::LotkaVolterra {
                x0,
                y0,
                alpha,
                beta,
                delta,
                gamma,
                anomaly_scale,
                ..
            } => {
                for (name, v) in [
                    ("x0", x0),
                    ("y0", y0),
                    ("alpha", alpha),
                    ("beta", beta),
                    ("delta", delta),
                    ("gamma", gamma),
                ] {
                    positive(name, *v)?;
                }
                for v in anomaly_scale {
                    positive("anomaly_scale", *v)?;
                }
            }
            DataSource::Emps {
                mass,
                anomaly_scale,
                ..
            } => {
                positive("mass", *mass)?;
                positive("anomaly_scale", *anomaly_scale)?;
            }
            DataSource::IdealGas {
                gas_constant,
                volume,
                anomaly_scale,
                ..
            } => {
                positive("gas_constant", *gas_constant)?;
                positive("volume", *volume)?;
                positive("anomaly_scale", *anomaly_scale)?;
            }
            DataSource::Csv { .. } => {}
        }

        let m = &self.model;
        if m.encoder_hidden.is_empty() || m.decoder_hidden.is_empty() {
            return Err(config_err(
                "model needs at least one encoder and one decoder layer",
            ));
        }
        if m.encoder_hidden
            .iter()
            .chain(&m.decoder_hidden)
            .any(|&w| w == 0)
        {
            return Err(config_err("layer widths must be positive"));
        }
        m.schedule().map_err(|e| config_err(e.to_string()))?;
        self.training.validate()?;
        self.physics
            .weights(m.steps)
            .map_err(|e| config_err(e.to_string()))?;
        self.detection
            .threshold()
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        if let Some(k) = self.detection.elbo_subsample {
            if k == 0 || k >= m.steps {
                return Err(config_err(format!(
                    "detection.elbo_subsample must be in 1..{}, got {k}",
                    m.steps
                )));
            }
        }
        if self.detection.validation_windows == Some(0) {
            return Err(config_err(
                "detection.validation_windows must be positive when set",
            ));
        }
        if self.baselines.kmeans_clusters == 0 {
            return Err(config_err("baselines.kmeans_clusters must be positive"));
        }
        Ok(())
    }
}
