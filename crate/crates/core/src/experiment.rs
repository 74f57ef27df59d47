//! End-to-end commands: generate data, train, detect, sample, PCA, bench.
//!
//! Every command is deterministic given its config and seed. Output
//! directories are guarded by a lock file so two runs cannot interleave
//! writes.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines::{kmeans_fit, kmeans_score, SeqAutoencoder};
use crate::checkpoint::{round_params, Checkpoint, CheckpointMeta, ModelKind};
use crate::config::{DataSource, DatasetConfig, ExperimentConfig, SegmentLayout};
use crate::data::{
    build_eval_set, inject_anomaly_lv, load_csv, read_metadata, simulate_emps, simulate_gas,
    split_train_val, window, write_csv, write_metadata, AnomalySegment, EmpsParams, EvalCounts,
    GasParams, LvParams, ParamScale, ScaleParams, SeriesMetadata, TimeSeries, WindowSet,
};
use crate::detect::{
    calibrate_threshold, classify_and_f1, pca2, score_windows, write_metrics_json, write_pca_csv,
    write_scores_csv, Metrics, Pca2, ScoreReport,
};
use crate::diffusion::sample;
use crate::error::{ensure, Error, Result};
use crate::par::Execution;
use crate::seqnet::DenoiserModel;
use crate::train::{train, DiffusionObjective, EpochLog, PhysicsTerm, TrainReport};

pub const SERIES_FILE: &str = "series.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const PCA_FILE: &str = "pca.csv";
pub const BENCH_FILE: &str = "bench.json";
const LOCK_FILE: &str = ".tpidm.lock";

/// Exclusive claim on an output directory, released on drop.
pub struct OutDirLock {
    path: PathBuf,
}

impl OutDirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(OutDirLock { path })
    }
}

impl Drop for OutDirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn segment_starts(train_points: usize, layout: SegmentLayout) -> impl Iterator<Item = usize> {
    (0..layout.count).map(move |k| train_points + k * (layout.length + layout.gap))
}

/// Multiplies `channel` by `factor` inside each segment and labels it.
fn scale_segments(
    series: &mut TimeSeries,
    channel: usize,
    factor: f64,
    train_points: usize,
    layout: SegmentLayout,
) {
    let c = series.channels();
    for start in segment_starts(train_points, layout) {
        for i in start..start + layout.length {
            series.values[i * c + channel] *= factor;
            series.labels[i] = true;
        }
    }
}

/// Simulates the configured generator. CSV sources are rejected.
pub fn generate_series(cfg: &DatasetConfig) -> Result<TimeSeries> {
    match &cfg.source {
        DataSource::LotkaVolterra {
            points,
            x0,
            y0,
            alpha,
            beta,
            delta,
            gamma,
            anomaly_scale,
            segments,
        } => {
            let params = LvParams {
                alpha: *alpha,
                beta: *beta,
                delta: *delta,
                gamma: *gamma,
            };
            let [sa, sb, sd, sg] = *anomaly_scale;
            let scale = ParamScale {
                alpha: sa,
                beta: sb,
                delta: sd,
                gamma: sg,
            };
            let segs: Vec<AnomalySegment> = segment_starts(cfg.train_points, *segments)
                .map(|start| AnomalySegment {
                    start,
                    length: segments.length,
                    scale,
                })
                .collect();
            inject_anomaly_lv(&params, *x0, *y0, *points, cfg.dt, &segs)
        }
        DataSource::Emps {
            points,
            mass,
            viscous,
            coulomb,
            offset,
            amplitude,
            frequency,
            anomaly_scale,
            segments,
        } => {
            let p = EmpsParams {
                mass: *mass,
                viscous: *viscous,
                coulomb: *coulomb,
                offset: *offset,
                amplitude: *amplitude,
                frequency: *frequency,
            };
            let mut s = simulate_emps(&p, *points, cfg.dt)?;
            scale_segments(&mut s, 0, *anomaly_scale, cfg.train_points, *segments);
            Ok(s)
        }
        DataSource::IdealGas {
            points,
            gas_constant,
            density,
            volume,
            volume_swing,
            initial_mass,
            base_temperature,
            temperature_swing,
            base_flow,
            flow_swing,
            omega,
            anomaly_scale,
            segments,
        } => {
            let p = GasParams {
                gas_constant: *gas_constant,
                density: *density,
                volume: *volume,
                volume_swing: *volume_swing,
                initial_mass: *initial_mass,
                base_temperature: *base_temperature,
                temperature_swing: *temperature_swing,
                base_flow: *base_flow,
                flow_swing: *flow_swing,
                omega: *omega,
            };
            let mut s = simulate_gas(&p, *points, cfg.dt)?;
            scale_segments(&mut s, 0, *anomaly_scale, cfg.train_points, *segments);
            Ok(s)
        }
        DataSource::Csv { .. } => Err(Error::Config(
            "dataset source is a CSV file; nothing to generate".into(),
        )),
    }
}

/// Reads `data` when given, else the configured CSV, else simulates.
pub fn load_series(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<TimeSeries> {
    let columns = match &cfg.dataset.source {
        DataSource::Csv { columns, .. } => columns.clone(),
        _ => Vec::new(),
    };
    let path = match (data, &cfg.dataset.source) {
        (Some(p), _) => p.to_path_buf(),
        (None, DataSource::Csv { path, .. }) => path.clone(),
        (None, _) => return generate_series(&cfg.dataset),
    };
    let series = load_csv(&path, &columns, cfg.dataset.dt)?;
    if let Ok(meta) = read_metadata(&path) {
        if (meta.dt - cfg.dataset.dt).abs() > 1e-12 * cfg.dataset.dt {
            log::warn!(
                "{} was written with dt {} but the config says {}; using the config",
                path.display(),
                meta.dt,
                cfg.dataset.dt
            );
        }
    }
    Ok(series)
}

/// Writes the generated series and its metadata sidecar into `out`.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let series = generate_series(&cfg.dataset)?;
    let _lock = OutDirLock::acquire(out)?;
    let path = out.join(SERIES_FILE);
    write_csv(&series, &path)?;
    write_metadata(
        &path,
        &SeriesMetadata {
            dt: series.dt,
            names: series.names.clone(),
            units: series.units.clone(),
            generator: serde_json::to_value(&cfg.dataset).expect("dataset config serializes"),
            seed: None,
        },
    )?;
    Ok(path)
}

/// Scaled windows ready for fitting, calibration and evaluation.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub names: Vec<String>,
    pub scale: ScaleParams,
    pub train: WindowSet,
    pub validation: WindowSet,
    pub eval: WindowSet,
}

impl Prepared {
    pub fn channels(&self) -> usize {
        self.scale.channels()
    }
}

/// Fits scaling on the training section, then builds the training,
/// calibration and evaluation windows.
///
/// `scale` overrides the fitted bounds, as when scoring with a checkpoint.
pub fn prepare(
    cfg: &ExperimentConfig,
    series: &TimeSeries,
    scale: Option<&ScaleParams>,
) -> Result<Prepared> {
    let d = &cfg.dataset;
    ensure!(
        series.len() > d.train_points + d.window,
        "series has {} samples; the training section alone needs {}",
        series.len(),
        d.train_points + d.window
    );
    let section = series.slice(0, d.train_points)?;
    if let Some(i) = section.labels.iter().position(|&l| l) {
        return Err(Error::Schema(format!(
            "training section must be anomaly-free, but sample {i} is labelled"
        )));
    }
    let scale = match scale {
        Some(s) => {
            ensure!(
                s.channels() == series.channels(),
                "checkpoint scaling covers {} channels, data has {}",
                s.channels(),
                series.channels()
            );
            s.clone()
        }
        None => ScaleParams::fit(&section.values, section.channels())?,
    };
    let scaled = series.scaled(&scale)?;
    let train_windows = window(&scaled.slice(0, d.train_points)?, d.window)?;
    let (train, mut validation) =
        split_train_val(&train_windows, d.split_ratio, cfg.training.seed)?;
    if let Some(cap) = cfg.detection.validation_windows {
        if validation.len() > cap {
            validation = validation.subset(&(0..cap).collect::<Vec<_>>());
        }
    }
    let pool = window(&scaled.slice(d.train_points, scaled.len())?, d.window)?;
    let eval = build_eval_set(
        &pool,
        EvalCounts {
            normal: d.eval_normal,
            anomalous: d.eval_anomalous,
        },
        &[],
        d.eval_seed,
    )?;
    Ok(Prepared {
        names: series.names.clone(),
        scale,
        train,
        validation,
        eval,
    })
}

/// A trained scorer of any kind that has a checkpoint.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    Diffusion(DenoiserModel),
    Autoencoder(SeqAutoencoder),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Diffusion(_) => ModelKind::Diffusion,
            TrainedModel::Autoencoder(m) if m.variational => ModelKind::Variational,
            TrainedModel::Autoencoder(_) => ModelKind::Autoencoder,
        }
    }

    fn flat_params(&self) -> Vec<f64> {
        match self {
            TrainedModel::Diffusion(m) => m.flat_params(),
            TrainedModel::Autoencoder(m) => crate::train::Objective::flat_params(m),
        }
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        match self {
            TrainedModel::Diffusion(m) => m.set_flat_params(flat),
            TrainedModel::Autoencoder(m) => crate::train::Objective::set_flat_params(m, flat),
        }
    }

    /// Anomaly score per window; larger means more anomalous.
    pub fn score(
        &self,
        cfg: &ExperimentConfig,
        windows: &[Vec<f64>],
        exec: Execution,
    ) -> Result<Vec<f64>> {
        let det = &cfg.detection;
        match self {
            TrainedModel::Diffusion(m) => score_windows(
                windows,
                m,
                &cfg.model.schedule()?,
                det.elbo_steps(),
                det.elbo_seed,
                exec,
            ),
            TrainedModel::Autoencoder(m) if m.variational => {
                m.vae_score(windows, det.elbo_seed, exec)
            }
            TrainedModel::Autoencoder(m) => m.ae_score(windows, exec),
        }
    }

    /// Rebuilds the model described by a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, ExperimentConfig)> {
        let cfg = ExperimentConfig::from_toml(&ckpt.meta.config)
            .map_err(|e| Error::CorruptCheckpoint(format!("embedded config: {e}")))?;
        if ckpt.meta.names.len() != ckpt.meta.channels
            || ckpt.meta.scale.channels() != ckpt.meta.channels
        {
            return Err(Error::CorruptCheckpoint(
                "channel names and scaling disagree with the channel count".into(),
            ));
        }
        let net = cfg.model.net(ckpt.meta.channels, cfg.dataset.window);
        let mut model = match ckpt.meta.kind {
            ModelKind::Diffusion => {
                TrainedModel::Diffusion(DenoiserModel::init(net, cfg.model.mode, 0)?)
            }
            ModelKind::Autoencoder => {
                TrainedModel::Autoencoder(SeqAutoencoder::init(&net, false, 0)?)
            }
            ModelKind::Variational => {
                TrainedModel::Autoencoder(SeqAutoencoder::init(&net, true, 0)?)
            }
        };
        let expected = model.flat_params().len();
        if ckpt.params.len() != expected {
            return Err(Error::CorruptCheckpoint(format!(
                "checkpoint holds {} parameters, the configured widths need {expected}",
                ckpt.params.len()
            )));
        }
        model.set_flat_params(&ckpt.params_f64())?;
        Ok((model, cfg))
    }
}

/// Trains a model of `kind` on the prepared windows.
pub fn fit_model(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    kind: ModelKind,
    exec: Execution,
    on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<(TrainedModel, TrainReport)> {
    let net = cfg.model.net(prepared.channels(), cfg.dataset.window);
    let seed = cfg.training.seed;
    match kind {
        ModelKind::Diffusion => {
            let schedule = cfg.model.schedule()?;
            let physics = if cfg.physics.enabled {
                cfg.physics.model.validate(prepared.channels())?;
                Some(PhysicsTerm {
                    model: cfg.physics.model.clone(),
                    weights: cfg.physics.weights(cfg.model.steps)?,
                    scale: prepared.scale.clone(),
                    dt: cfg.dataset.dt,
                })
            } else {
                None
            };
            let mut obj = DiffusionObjective {
                model: DenoiserModel::init(net, cfg.model.mode, seed)?,
                schedule,
                physics,
            };
            let report = train(
                &mut obj,
                &prepared.train.windows,
                &cfg.training,
                exec,
                on_epoch,
            )?;
            Ok((TrainedModel::Diffusion(obj.model), report))
        }
        ModelKind::Autoencoder | ModelKind::Variational => {
            let mut ae = SeqAutoencoder::init(&net, kind == ModelKind::Variational, seed)?;
            let report = train(
                &mut ae,
                &prepared.train.windows,
                &cfg.training,
                exec,
                on_epoch,
            )?;
            Ok((TrainedModel::Autoencoder(ae), report))
        }
    }
}

/// Calibrates on the held-out windows, then classifies the eval set.
pub fn evaluate_scores(
    cfg: &ExperimentConfig,
    validation: &[f64],
    eval: &[f64],
    truth: &[bool],
) -> Result<ScoreReport> {
    let threshold = calibrate_threshold(validation, &cfg.detection.threshold())?;
    classify_and_f1(eval, threshold, truth)
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    model: &TrainedModel,
    prepared: &Prepared,
    exec: Execution,
) -> Result<ScoreReport> {
    let val = model.score(cfg, &prepared.validation.windows, exec)?;
    let eval = model.score(cfg, &prepared.eval.windows, exec)?;
    evaluate_scores(cfg, &val, &eval, &prepared.eval.labels)
}

/// K-means baseline fitted on the training windows.
pub fn evaluate_kmeans(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    exec: Execution,
) -> Result<ScoreReport> {
    let model = kmeans_fit(
        &prepared.train.windows,
        cfg.baselines.kmeans_clusters,
        cfg.training.seed,
    )?;
    let val = kmeans_score(&prepared.validation.windows, &model, exec)?;
    let eval = kmeans_score(&prepared.eval.windows, &model, exec)?;
    evaluate_scores(cfg, &val, &eval, &prepared.eval.labels)
}

/// Result of `cmd_train`. The model carries the f32-rounded parameters
/// stored in the checkpoint, so it scores exactly like a reloaded one.
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
    pub prepared: Prepared,
}

fn write_log_header(w: &mut impl Write, names: &[&str]) -> std::io::Result<()> {
    writeln!(w, "epoch,{},total", names.join(","))
}

/// Trains, then writes `model.ckpt` and `train_log.csv` into `out`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    data: Option<&Path>,
    out: &Path,
    kind: ModelKind,
    exec: Execution,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let series = load_series(cfg, data)?;
    let prepared = prepare(cfg, &series, None)?;
    let _lock = OutDirLock::acquire(out)?;
    let log_path = out.join(TRAIN_LOG_FILE);
    let io = |e| Error::io(&log_path, e);
    let mut log = BufWriter::new(File::create(&log_path).map_err(io)?);
    let names: &[&str] = match kind {
        ModelKind::Diffusion => &["l_dm", "l_pi"],
        _ => &["recon", "kl"],
    };
    write_log_header(&mut log, names).map_err(io)?;
    let fitted = fit_model(cfg, &prepared, kind, exec, |e| {
        let parts: Vec<String> = e.parts.iter().map(|p| p.to_string()).collect();
        writeln!(log, "{},{},{}", e.epoch, parts.join(","), e.total).map_err(io)?;
        // Keep the log current so a divergence leaves the finite epochs on disk.
        log.flush().map_err(io)
    });
    log.flush().map_err(io)?;
    let (mut model, report) = fitted?;

    let params = round_params(&model.flat_params());
    let checkpoint = Checkpoint {
        meta: CheckpointMeta {
            kind,
            config: cfg.to_toml(),
            steps: report.steps,
            seed: cfg.training.seed,
            channels: prepared.channels(),
            names: prepared.names.clone(),
            scale: prepared.scale.clone(),
        },
        params,
    };
    model.set_flat_params(&checkpoint.params_f64())?;
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    Ok(TrainOutcome {
        model,
        checkpoint,
        report,
        prepared,
    })
}

/// Scores the eval set with a checkpoint and writes `scores.csv` and
/// `metrics.json`. `config` overrides the embedded config when given.
pub fn cmd_detect(
    checkpoint: &Path,
    data: Option<&Path>,
    config: Option<&ExperimentConfig>,
    out: &Path,
    exec: Execution,
) -> Result<ScoreReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (model, embedded) = TrainedModel::from_checkpoint(&ckpt)?;
    let cfg = config.cloned().unwrap_or(embedded);
    cfg.validate()?;
    let series = load_series(&cfg, data)?;
    let prepared = prepare(&cfg, &series, Some(&ckpt.meta.scale))?;
    let report = evaluate(&cfg, &model, &prepared, exec)?;
    let _lock = OutDirLock::acquire(out)?;
    write_scores_csv(&out.join(SCORES_FILE), &report)?;
    let echo = serde_json::to_value(&cfg).expect("config serializes");
    write_metrics_json(&out.join(METRICS_FILE), &Metrics::new(&report, echo))?;
    Ok(report)
}

fn load_diffusion(checkpoint: &Path) -> Result<(DenoiserModel, ExperimentConfig, Checkpoint)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    match TrainedModel::from_checkpoint(&ckpt)? {
        (TrainedModel::Diffusion(m), cfg) => Ok((m, cfg, ckpt)),
        _ => Err(Error::Contract(
            "sampling needs a diffusion checkpoint".into(),
        )),
    }
}

/// Generates `count` windows by ancestral sampling, in physical units.
pub fn generate_windows(
    checkpoint: &Path,
    count: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<String>, ScaleParams)> {
    let (model, cfg, ckpt) = load_diffusion(checkpoint)?;
    let scaled = sample(&model, &cfg.model.schedule()?, count, seed)?;
    let c = ckpt.meta.channels;
    let physical = scaled
        .iter()
        .map(|w| {
            w.chunks_exact(c)
                .flat_map(|row| ckpt.meta.scale.invert(row))
                .collect()
        })
        .collect();
    Ok((physical, ckpt.meta.names.clone(), ckpt.meta.scale.clone()))
}

fn write_windows_csv(path: &Path, windows: &[Vec<f64>], names: &[String]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "window_id,step,{}", names.join(",")).map_err(io)?;
    let c = names.len();
    for (id, win) in windows.iter().enumerate() {
        for (step, row) in win.chunks_exact(c).enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{id},{step},{}", cells.join(",")).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads windows written by `cmd_sample`.
pub fn read_windows_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        .clone();
    ensure!(
        headers.len() > 2 && &headers[0] == "window_id" && &headers[1] == "step",
        "{} is not a sampled-windows file",
        path.display()
    );
    let mut windows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |k: usize| -> Result<f64> {
            rec[k].trim().parse::<f64>().map_err(|e| Error::Parse {
                row,
                column: headers[k].to_string(),
                message: e.to_string(),
            })
        };
        let id = cell(0)? as usize;
        if id == windows.len() {
            windows.push(Vec::new());
        } else {
            ensure!(
                id + 1 == windows.len(),
                "window ids must be contiguous (row {row})"
            );
        }
        for k in 2..rec.len() {
            windows[id].push(cell(k)?);
        }
    }
    Ok(windows)
}

/// Writes `count` sampled windows to `samples.csv` in `out`.
pub fn cmd_sample(checkpoint: &Path, count: usize, seed: u64, out: &Path) -> Result<PathBuf> {
    let (windows, names, _) = generate_windows(checkpoint, count, seed)?;
    let _lock = OutDirLock::acquire(out)?;
    let path = out.join(SAMPLES_FILE);
    write_windows_csv(&path, &windows, &names)?;
    Ok(path)
}

/// PCA of generated windows against `count` training windows.
///
/// Generated windows come from `samples` when given, else are drawn from
/// the checkpoint with `seed`. Both sets are compared in scaled units.
pub fn cmd_pca(
    checkpoint: &Path,
    data: Option<&Path>,
    samples: Option<&Path>,
    count: usize,
    seed: u64,
    out: &Path,
) -> Result<Pca2> {
    ensure!(count >= 2, "PCA needs at least 2 windows per set");
    let (_, cfg, ckpt) = load_diffusion(checkpoint)?;
    let generated_physical = match samples {
        Some(p) => read_windows_csv(p)?,
        None => generate_windows(checkpoint, count, seed)?.0,
    };
    let scale = &ckpt.meta.scale;
    let c = scale.channels();
    let generated: Vec<Vec<f64>> = generated_physical
        .iter()
        .map(|w| w.chunks_exact(c).flat_map(|row| scale.apply(row)).collect())
        .collect();
    let series = load_series(&cfg, data)?;
    let prepared = prepare(&cfg, &series, Some(scale))?;
    let pool = &prepared.train.windows;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference: Vec<Vec<f64>> = sample_indices(&mut rng, pool.len(), count.min(pool.len()))
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    let pca = pca2(&reference, &generated)?;
    let _lock = OutDirLock::acquire(out)?;
    write_pca_csv(&out.join(PCA_FILE), &pca)?;
    Ok(pca)
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub windows: usize,
    pub seconds: f64,
    pub windows_per_second: f64,
    pub parallel: bool,
}

/// Times scoring of `count` windows drawn cyclically from the eval set.
pub fn cmd_bench(
    checkpoint: &Path,
    data: Option<&Path>,
    count: usize,
    out: Option<&Path>,
    exec: Execution,
) -> Result<BenchReport> {
    ensure!(count > 0, "bench needs a positive window count");
    let ckpt = Checkpoint::load(checkpoint)?;
    let (model, cfg) = TrainedModel::from_checkpoint(&ckpt)?;
    let series = load_series(&cfg, data)?;
    let prepared = prepare(&cfg, &series, Some(&ckpt.meta.scale))?;
    let pool = &prepared.eval.windows;
    let windows: Vec<Vec<f64>> = (0..count).map(|i| pool[i % pool.len()].clone()).collect();
    let start = Instant::now();
    let scores = model.score(&cfg, &windows, exec)?;
    let seconds = start.elapsed().as_secs_f64();
    let report = BenchReport {
        windows: scores.len(),
        seconds,
        windows_per_second: scores.len() as f64 / seconds.max(f64::MIN_POSITIVE),
        parallel: exec == Execution::Parallel && cfg!(feature = "parallel"),
    };
    if let Some(out) = out {
        let _lock = OutDirLock::acquire(out)?;
        let path = out.join(BENCH_FILE);
        let text = serde_json::to_string_pretty(&report).expect("bench report serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::lv_desk();
        c.dataset.source = DataSource::lotka_volterra_default(
            1200,
            SegmentLayout {
                count: 2,
                length: 150,
                gap: 150,
            },
        );
        c.dataset.train_points = 500;
        c.dataset.window = 10;
        c.dataset.eval_normal = 20;
        c.dataset.eval_anomalous = 10;
        c.model.encoder_hidden = vec![3, 4];
        c.model.decoder_hidden = vec![3, 2];
        c.model.steps = 20;
        c.training.epochs = 2;
        c.training.batch_size = 16;
        c.training.max_batches_per_epoch = Some(2);
        c.training.lr = 1e-3;
        c.detection.elbo_subsample = Some(4);
        c.detection.validation_windows = Some(30);
        c
    }

    #[test]
    fn generated_layout_labels_segments() {
        let c = tiny_config();
        let s = generate_series(&c.dataset).unwrap();
        assert_eq!(s.len(), 1200);
        assert!(s.labels[..500].iter().all(|&l| !l));
        assert!(s.labels[500..650].iter().all(|&l| l));
        assert!(s.labels[650..800].iter().all(|&l| !l));
        assert!(s.labels[800..950].iter().all(|&l| l));
        assert!(s.labels[950..].iter().all(|&l| !l));
    }

    #[test]
    fn scaled_channel_anomalies_for_emps_and_gas() {
        let layout = SegmentLayout {
            count: 1,
            length: 50,
            gap: 0,
        };
        for source in [
            DataSource::emps_default(400, layout),
            DataSource::gas_default(400, layout),
        ] {
            let mut c = tiny_config();
            c.dataset.source = source;
            c.dataset.train_points = 200;
            let s = generate_series(&c.dataset).unwrap();
            assert_eq!(s.labels.iter().filter(|&&l| l).count(), 50);
            assert!(s.labels[200] && !s.labels[199] && !s.labels[250]);
        }
    }

    #[test]
    fn prepare_builds_disjoint_sets_in_unit_range() {
        let c = tiny_config();
        let s = generate_series(&c.dataset).unwrap();
        let p = prepare(&c, &s, None).unwrap();
        assert_eq!(p.validation.len(), 30);
        assert_eq!(p.eval.len(), 30);
        assert_eq!(p.eval.labels.iter().filter(|&&l| l).count(), 10);
        for w in &p.train.windows {
            assert!(w.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn anomalous_training_section_is_rejected() {
        let mut c = tiny_config();
        let mut s = generate_series(&c.dataset).unwrap();
        s.labels[3] = true;
        assert!(matches!(prepare(&c, &s, None), Err(Error::Schema(_))));
        c.dataset.train_points = 5000;
        assert!(prepare(&c, &s, None).is_err());
    }

    #[test]
    fn lock_blocks_second_writer() {
        let dir = tempfile::tempdir().unwrap();
        let held = OutDirLock::acquire(dir.path()).unwrap();
        assert!(OutDirLock::acquire(dir.path()).is_err());
        drop(held);
        OutDirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn train_detect_round_trip_is_bit_identical() {
        let c = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let outcome = cmd_train(
            &c,
            None,
            dir.path(),
            ModelKind::Diffusion,
            Execution::best_available(),
        )
        .unwrap();
        let in_memory =
            evaluate(&c, &outcome.model, &outcome.prepared, Execution::Sequential).unwrap();
        let report = cmd_detect(
            &dir.path().join(CHECKPOINT_FILE),
            None,
            None,
            dir.path(),
            Execution::best_available(),
        )
        .unwrap();
        assert_eq!(report.scores, in_memory.scores);
        let log = std::fs::read_to_string(dir.path().join(TRAIN_LOG_FILE)).unwrap();
        assert_eq!(log.lines().next().unwrap(), "epoch,l_dm,l_pi,total");
        assert_eq!(log.lines().count(), 3);
        let (_, cfg) = TrainedModel::from_checkpoint(&outcome.checkpoint).unwrap();
        assert_eq!(cfg, c);
    }

    #[test]
    fn samples_round_trip_through_csv_and_pca() {
        let c = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        cmd_train(
            &c,
            None,
            dir.path(),
            ModelKind::Diffusion,
            Execution::Sequential,
        )
        .unwrap();
        let ckpt = dir.path().join(CHECKPOINT_FILE);
        let path = cmd_sample(&ckpt, 5, 3, dir.path()).unwrap();
        let back = read_windows_csv(&path).unwrap();
        let direct = generate_windows(&ckpt, 5, 3).unwrap().0;
        assert_eq!(back.len(), 5);
        for (a, b) in back.iter().zip(&direct) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x, y);
            }
        }
        let pca = cmd_pca(&ckpt, None, Some(&path), 20, 1, dir.path()).unwrap();
        assert_eq!(pca.generated.len(), 5);
        assert_eq!(pca.reference.len(), 20);
    }

    #[test]
    fn autoencoder_checkpoints_score_like_memory() {
        let c = tiny_config();
        for kind in [ModelKind::Autoencoder, ModelKind::Variational] {
            let dir = tempfile::tempdir().unwrap();
            let outcome = cmd_train(&c, None, dir.path(), kind, Execution::Sequential).unwrap();
            let mem =
                evaluate(&c, &outcome.model, &outcome.prepared, Execution::Sequential).unwrap();
            let disk = cmd_detect(
                &dir.path().join(CHECKPOINT_FILE),
                None,
                None,
                dir.path(),
                Execution::Sequential,
            )
            .unwrap();
            assert_eq!(mem.scores, disk.scores);
            assert!(disk.scores.iter().all(|&s| s >= 0.0));
        }
    }

    #[test]
    fn bench_reports_requested_count() {
        let c = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        cmd_train(
            &c,
            None,
            dir.path(),
            ModelKind::Diffusion,
            Execution::Sequential,
        )
        .unwrap();
        let r = cmd_bench(
            &dir.path().join(CHECKPOINT_FILE),
            None,
            40,
            Some(dir.path()),
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(r.windows, 40);
        assert!(r.seconds > 0.0);
    }
}
