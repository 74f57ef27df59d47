//! ELBO scoring, thresholding, metrics, significance tests and PCA export.

mod pca;
mod report;
mod wilcoxon;

pub use pca::{pca2, Pca2};
pub use report::{write_metrics_json, write_pca_csv, write_scores_csv, Metrics};
pub use wilcoxon::{wilcoxon_critical_value, wilcoxon_signed_rank, WilcoxonResult};

use serde::{Deserialize, Serialize};

use crate::diffusion::{elbo_batch, Denoiser, ElboSteps, NoiseSchedule};
use crate::error::{ensure, Error, Result};
use crate::par::Execution;

/// Negative-ELBO anomaly score per window, deterministic given `seed`.
pub fn score_windows<D: Denoiser>(
    windows: &[Vec<f64>],
    model: &D,
    schedule: &NoiseSchedule,
    steps: ElboSteps,
    seed: u64,
    exec: Execution,
) -> Result<Vec<f64>> {
    let scores = elbo_batch(windows, model, schedule, steps, seed, exec)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::numeric(
            format!("score of window {i}"),
            "non-finite ELBO",
        ));
    }
    Ok(scores)
}

/// Trimmed-mean plus IQR threshold rule.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    /// Share dropped from each tail before averaging.
    pub trim: f64,
    /// IQR multiplier.
    pub k: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig { trim: 0.1, k: 1.5 }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..0.5).contains(&self.trim),
            "trim must lie in [0, 0.5), got {}",
            self.trim
        );
        ensure!(
            self.k >= 0.0 && self.k.is_finite(),
            "k must be >= 0, got {}",
            self.k
        );
        Ok(())
    }
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `trimmed mean + k · IQR` of validation scores.
pub fn calibrate_threshold(scores: &[f64], config: &ThresholdConfig) -> Result<f64> {
    config.validate()?;
    ensure!(
        scores.len() >= 10,
        "threshold calibration needs at least 10 scores, got {}",
        scores.len()
    );
    ensure!(
        scores.iter().all(|s| s.is_finite()),
        "validation scores must be finite"
    );
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = (config.trim * sorted.len() as f64).floor() as usize;
    let kept = &sorted[cut..sorted.len() - cut];
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    Ok(mean + config.k * iqr)
}

/// Per-window verdicts and anomaly-class metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub scores: Vec<f64>,
    pub threshold: f64,
    pub verdicts: Vec<bool>,
    pub truth: Vec<bool>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a metric had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

/// Flags `score > threshold` and scores the anomaly class.
pub fn classify_and_f1(scores: &[f64], threshold: f64, truth: &[bool]) -> Result<ScoreReport> {
    ensure!(
        scores.len() == truth.len(),
        "{} scores but {} truth labels",
        scores.len(),
        truth.len()
    );
    let verdicts: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&v, &t) in verdicts.iter().zip(truth) {
        match (v, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let mut zero_division = false;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            zero_division = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
    Ok(ScoreReport {
        scores: scores.to_vec(),
        threshold,
        verdicts,
        truth: truth.to_vec(),
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
        precision,
        recall,
        f1,
        zero_division,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn threshold_hand_oracle() {
        let scores: Vec<f64> = (1..=10).map(f64::from).collect();
        let thr = calibrate_threshold(&scores, &ThresholdConfig { trim: 0.1, k: 1.5 }).unwrap();
        assert_eq!(thr, 12.25);
        let mean = calibrate_threshold(&scores, &ThresholdConfig { trim: 0.0, k: 0.0 }).unwrap();
        assert_eq!(mean, 5.5);
        let flat = calibrate_threshold(&[3.5; 12], &ThresholdConfig::default()).unwrap();
        assert_eq!(flat, 3.5);
        assert!(calibrate_threshold(&[1.0; 9], &ThresholdConfig::default()).is_err());
    }

    #[test]
    fn confusion_matrix_oracle() {
        let mut scores = vec![0.0; 700];
        let mut truth = vec![false; 700];
        scores.extend(vec![1.0; 300]);
        truth.extend(vec![true; 300]);
        let perfect = classify_and_f1(&scores, 0.5, &truth).unwrap();
        assert_eq!(perfect.f1, 1.0);

        let none = classify_and_f1(&scores, 2.0, &truth).unwrap();
        assert_eq!((none.recall, none.f1), (0.0, 0.0));
        assert!(none.zero_division);

        // 290 TP, 10 FN, 10 FP
        let mut s = scores.clone();
        for v in s.iter_mut().skip(700).take(10) {
            *v = 0.0;
        }
        for v in s.iter_mut().take(10) {
            *v = 1.0;
        }
        let r = classify_and_f1(&s, 0.5, &truth).unwrap();
        assert_eq!(
            (r.true_positives, r.false_positives, r.false_negatives),
            (290, 10, 10)
        );
        assert!((r.f1 - 290.0 / 300.0).abs() < 1e-15);
        assert!(classify_and_f1(&s, 0.5, &truth[1..]).is_err());
    }

    proptest! {
        #[test]
        fn threshold_monotone_in_k_and_order_free(
            mut scores in prop::collection::vec(-1e3f64..1e3, 10..60),
            k1 in 0.0f64..4.0,
            dk in 0.0f64..4.0,
            trim in 0.0f64..0.45,
        ) {
            let a = calibrate_threshold(&scores, &ThresholdConfig { trim, k: k1 }).unwrap();
            let b = calibrate_threshold(&scores, &ThresholdConfig { trim, k: k1 + dk }).unwrap();
            prop_assert!(b >= a);
            scores.reverse();
            let c = calibrate_threshold(&scores, &ThresholdConfig { trim, k: k1 }).unwrap();
            prop_assert!((a - c).abs() <= 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn f1_bounded_and_order_free(
            pairs in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..80),
            thr in 0.0f64..1.0,
        ) {
            let (s, t): (Vec<f64>, Vec<bool>) = pairs.iter().copied().unzip();
            let r = classify_and_f1(&s, thr, &t).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.f1));
            let (mut rs, mut rt) = (s.clone(), t.clone());
            rs.reverse();
            rt.reverse();
            prop_assert_eq!(classify_and_f1(&rs, thr, &rt).unwrap().f1, r.f1);
            // add a correctly classified anomaly
            let (mut s2, mut t2) = (s, t);
            s2.push(thr + 1.0);
            t2.push(true);
            prop_assert!(classify_and_f1(&s2, thr, &t2).unwrap().f1 >= r.f1);
        }
    }
}
