use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Per-channel min-max bounds mapping each channel onto `[−1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScaleParams {
    /// Fits bounds on `rows × channels` row-major values.
    pub fn fit(values: &[f64], channels: usize) -> Result<Self> {
        ensure!(channels > 0, "cannot fit scaling on zero channels");
        ensure!(
            !values.is_empty() && values.len().is_multiple_of(channels),
            "cannot fit scaling: {} values for {} channels",
            values.len(),
            channels
        );
        let mut min = vec![f64::INFINITY; channels];
        let mut max = vec![f64::NEG_INFINITY; channels];
        for row in values.chunks_exact(channels) {
            for (c, &v) in row.iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        let params = ScaleParams { min, max };
        params.validate()?;
        Ok(params)
    }

    /// Identity-like bounds `[−1, 1]` for every channel.
    pub fn identity(channels: usize) -> Self {
        ScaleParams {
            min: vec![-1.0; channels],
            max: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.min.len() == self.max.len(),
            "scale params have {} minima and {} maxima",
            self.min.len(),
            self.max.len()
        );
        for (c, (lo, hi)) in self.min.iter().zip(&self.max).enumerate() {
            ensure!(
                lo.is_finite() && hi.is_finite() && hi > lo,
                "channel {} is constant or non-finite (min {}, max {}); cannot scale",
                c,
                lo,
                hi
            );
        }
        Ok(())
    }

    /// Half-width and centre of channel `c`, so `physical = centre + half·scaled`.
    pub fn affine(&self, c: usize) -> (f64, f64) {
        let half = 0.5 * (self.max[c] - self.min[c]);
        (half, self.min[c] + half)
    }

    /// Maps row-major physical values onto `[−1, 1]`.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let channels = self.channels();
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (half, centre) = self.affine(i % channels);
                (v - centre) / half
            })
            .collect()
    }

    /// Inverse of [`ScaleParams::apply`].
    pub fn invert(&self, scaled: &[f64]) -> Vec<f64> {
        let channels = self.channels();
        scaled
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (half, centre) = self.affine(i % channels);
                centre + half * v
            })
            .collect()
    }
}
