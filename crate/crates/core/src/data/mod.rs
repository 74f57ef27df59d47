//! Time series containers, synthetic simulators, CSV ingestion, scaling and
//! windowing.

mod csvio;
mod scale;
mod sim;

pub use csvio::{load_csv, read_metadata, write_csv, write_metadata, SeriesMetadata};
pub use scale::ScaleParams;
pub use sim::{
    inject_anomaly_lv, simulate_emps, simulate_gas, simulate_lv, AnomalySegment, EmpsParams,
    GasParams, LvParams, ParamScale,
};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};

/// Equal-length channels sampled at a fixed interval, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub names: Vec<String>,
    pub units: Vec<String>,
    pub dt: f64,
    /// `len × channels`, row-major.
    pub values: Vec<f64>,
    pub labels: Vec<bool>,
}

impl TimeSeries {
    pub fn new(
        names: Vec<String>,
        units: Vec<String>,
        dt: f64,
        values: Vec<f64>,
        labels: Vec<bool>,
    ) -> Result<Self> {
        ensure!(!names.is_empty(), "a series needs at least one channel");
        ensure!(
            units.len() == names.len(),
            "{} units for {} channels",
            units.len(),
            names.len()
        );
        ensure!(
            dt > 0.0 && dt.is_finite(),
            "dt must be positive, got {}",
            dt
        );
        ensure!(
            values.len() == labels.len() * names.len(),
            "{} values do not form {} rows of {} channels",
            values.len(),
            labels.len(),
            names.len()
        );
        Ok(TimeSeries {
            names,
            units,
            dt,
            values,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(c)
            .step_by(self.channels())
            .copied()
            .collect()
    }

    /// Rows `[start, end)` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Result<TimeSeries> {
        ensure!(
            start < end && end <= self.len(),
            "slice {}..{} out of range for length {}",
            start,
            end,
            self.len()
        );
        let c = self.channels();
        TimeSeries::new(
            self.names.clone(),
            self.units.clone(),
            self.dt,
            self.values[start * c..end * c].to_vec(),
            self.labels[start..end].to_vec(),
        )
    }

    /// Applies min-max scaling channel-wise.
    pub fn scaled(&self, params: &ScaleParams) -> Result<TimeSeries> {
        ensure!(
            params.channels() == self.channels(),
            "scale params cover {} channels, series has {}",
            params.channels(),
            self.channels()
        );
        Ok(TimeSeries {
            values: params.apply(&self.values),
            ..self.clone()
        })
    }
}

/// Fits `[−1, 1]` scaling on `series` and returns the scaled copy.
pub fn scale_to_unit(series: &TimeSeries) -> Result<(TimeSeries, ScaleParams)> {
    let params = ScaleParams::fit(&series.values, series.channels())?;
    Ok((series.scaled(&params)?, params))
}

/// Maps a scaled series back to physical units.
pub fn unscale(series: &TimeSeries, params: &ScaleParams) -> Result<TimeSeries> {
    ensure!(
        params.channels() == series.channels(),
        "scale params cover {} channels, series has {}",
        params.channels(),
        series.channels()
    );
    Ok(TimeSeries {
        values: params.invert(&series.values),
        ..series.clone()
    })
}

/// Fixed-length windows with labels and source offsets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowSet {
    pub length: usize,
    pub channels: usize,
    /// Each window is `length × channels`, row-major.
    pub windows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    /// Index of each window's first sample in its source series.
    pub starts: Vec<usize>,
    /// Number of labelled samples inside each window.
    pub anomalous_points: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> WindowSet {
        WindowSet {
            length: self.length,
            channels: self.channels,
            windows: idx.iter().map(|&i| self.windows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            starts: idx.iter().map(|&i| self.starts[i]).collect(),
            anomalous_points: idx.iter().map(|&i| self.anomalous_points[i]).collect(),
        }
    }

    /// Appends `other`, which must share the window shape.
    pub fn extend(&mut self, other: WindowSet) -> Result<()> {
        if self.is_empty() && self.length == 0 {
            *self = other;
            return Ok(());
        }
        ensure!(
            other.length == self.length && other.channels == self.channels,
            "cannot merge {}×{} windows into {}×{}",
            other.length,
            other.channels,
            self.length,
            self.channels
        );
        self.windows.extend(other.windows);
        self.labels.extend(other.labels);
        self.starts.extend(other.starts);
        self.anomalous_points.extend(other.anomalous_points);
        Ok(())
    }
}

/// Stride-1 windows of length `len`. A window is anomalous if any covered
/// sample is.
pub fn window(series: &TimeSeries, len: usize) -> Result<WindowSet> {
    ensure!(len >= 1, "window length must be positive");
    ensure!(
        series.len() >= len,
        "series of {} samples is shorter than window length {}",
        series.len(),
        len
    );
    let c = series.channels();
    let count = series.len() - len + 1;
    let mut set = WindowSet {
        length: len,
        channels: c,
        windows: Vec::with_capacity(count),
        labels: Vec::with_capacity(count),
        starts: Vec::with_capacity(count),
        anomalous_points: Vec::with_capacity(count),
    };
    let mut inside = series.labels[..len].iter().filter(|&&l| l).count();
    for start in 0..count {
        if start > 0 {
            inside -= series.labels[start - 1] as usize;
            inside += series.labels[start + len - 1] as usize;
        }
        set.windows
            .push(series.values[start * c..(start + len) * c].to_vec());
        set.labels.push(inside > 0);
        set.starts.push(start);
        set.anomalous_points.push(inside);
    }
    Ok(set)
}

/// Seeded shuffle then split: the first `ratio` share goes to training.
pub fn split_train_val(set: &WindowSet, ratio: f64, seed: u64) -> Result<(WindowSet, WindowSet)> {
    ensure!(
        ratio > 0.0 && ratio < 1.0,
        "train ratio must lie in (0, 1), got {}",
        ratio
    );
    ensure!(
        set.len() >= 2,
        "need at least 2 windows to split, got {}",
        set.len()
    );
    ensure!(
        set.labels.iter().all(|&l| !l),
        "training windows must be normal-only"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = sample(&mut rng, set.len(), set.len()).into_vec();
    let cut = ((set.len() as f64 * ratio).round() as usize).clamp(1, set.len() - 1);
    Ok((set.subset(&order[..cut]), set.subset(&order[cut..])))
}

/// Sizes of the evaluation set.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EvalCounts {
    pub normal: usize,
    pub anomalous: usize,
}

impl Default for EvalCounts {
    fn default() -> Self {
        EvalCounts {
            normal: 700,
            anomalous: 300,
        }
    }
}

/// Samples normal and anomalous windows from `pool` without replacement.
///
/// Normal candidates contain no labelled sample; anomalous candidates are
/// labelled on every sample. Windows whose start appears in `exclude` are
/// never drawn. The result lists normal windows first.
pub fn build_eval_set(
    pool: &WindowSet,
    counts: EvalCounts,
    exclude: &[usize],
    seed: u64,
) -> Result<WindowSet> {
    let excluded: std::collections::HashSet<usize> = exclude.iter().copied().collect();
    let mut normal = Vec::new();
    let mut anomalous = Vec::new();
    for i in 0..pool.len() {
        if excluded.contains(&pool.starts[i]) {
            continue;
        }
        match pool.anomalous_points[i] {
            0 => normal.push(i),
            k if k == pool.length => anomalous.push(i),
            _ => {}
        }
    }
    ensure!(
        normal.len() >= counts.normal && anomalous.len() >= counts.anomalous,
        "eval pool too small: {} normal / {} anomalous available, {} / {} requested",
        normal.len(),
        anomalous.len(),
        counts.normal,
        counts.anomalous
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = sample(&mut rng, normal.len(), counts.normal)
        .into_iter()
        .map(|i| normal[i])
        .collect();
    chosen.extend(
        sample(&mut rng, anomalous.len(), counts.anomalous)
            .into_iter()
            .map(|i| anomalous[i]),
    );
    Ok(pool.subset(&chosen))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(n: usize, anomalies: &[usize]) -> TimeSeries {
        let mut labels = vec![false; n];
        for &i in anomalies {
            labels[i] = true;
        }
        TimeSeries::new(
            vec!["a".into(), "b".into()],
            vec!["".into(), "".into()],
            0.1,
            (0..2 * n).map(|v| v as f64).collect(),
            labels,
        )
        .unwrap()
    }

    #[test]
    fn window_count_and_labels() {
        let w = window(&series(5, &[]), 3).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.labels.iter().all(|&l| !l));
        assert_eq!(w.windows[1], vec![2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);

        let w = window(&series(10, &[4]), 3).unwrap();
        let flagged: Vec<usize> = (0..w.len()).filter(|&i| w.labels[i]).collect();
        assert_eq!(flagged, vec![2, 3, 4]);
        assert!(window(&series(2, &[]), 3).is_err());
    }

    #[test]
    fn scaling_round_trip() {
        let s = series(7, &[]);
        let (scaled, params) = scale_to_unit(&s).unwrap();
        assert_eq!(scaled.column(0)[0], -1.0);
        assert_eq!(scaled.column(0)[6], 1.0);
        assert_eq!(unscale(&scaled, &params).unwrap().values, s.values);
    }

    #[test]
    fn split_is_seeded_and_complete() {
        let w = window(&series(50, &[]), 5).unwrap();
        let (a, b) = split_train_val(&w, 0.9, 3).unwrap();
        assert_eq!(a.len() + b.len(), w.len());
        assert_eq!(a.len(), 41);
        let (a2, _) = split_train_val(&w, 0.9, 3).unwrap();
        assert_eq!(a.starts, a2.starts);
        let mut all: Vec<usize> = a.starts.iter().chain(&b.starts).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..w.len()).collect::<Vec<_>>());
        assert!(split_train_val(&window(&series(20, &[3]), 5).unwrap(), 0.9, 0).is_err());
    }

    #[test]
    fn eval_set_counts_and_exclusion() {
        let anomalies: Vec<usize> = (300..500).collect();
        let w = window(&series(800, &anomalies), 10).unwrap();
        let exclude: Vec<usize> = (0..100).collect();
        let counts = EvalCounts {
            normal: 70,
            anomalous: 30,
        };
        let e = build_eval_set(&w, counts, &exclude, 9).unwrap();
        assert_eq!(e.labels.iter().filter(|&&l| l).count(), 30);
        assert_eq!(e.labels.iter().filter(|&&l| !l).count(), 70);
        assert!(e.starts.iter().all(|s| *s >= 100));
        let big = EvalCounts {
            normal: 10_000,
            anomalous: 1,
        };
        assert!(build_eval_set(&w, big, &[], 0).is_err());
    }
}
