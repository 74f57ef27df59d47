use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ensure, Error, Result};

/// Largest effective sample size for the exact null distribution.
const EXACT_LIMIT: usize = 25;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of negative differences `a − b`.
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// Pairs left after discarding zero differences.
    pub effective_n: usize,
    pub exact: bool,
}

/// Mid-ranks of `values`, doubled so ties stay integral.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share rank (i+1 + j+1)/2
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Null distribution of the doubled rank sum: `counts[s]` sign patterns give
/// sum `s`.
fn null_counts(doubled: &[u64]) -> Vec<f64> {
    let total: u64 = doubled.iter().sum();
    let mut counts = vec![0.0; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

fn exact_two_sided(doubled: &[u64], observed: u64) -> f64 {
    let counts = null_counts(doubled);
    let patterns = 2f64.powi(doubled.len() as i32);
    let lower: f64 = counts[..=observed as usize].iter().sum();
    let upper: f64 = counts[observed as usize..].iter().sum();
    (2.0 * lower.min(upper) / patterns).min(1.0)
}

/// Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are discarded and ties get mid-ranks. The p-value is
/// exact (by enumerating the sign-pattern distribution) for up to 25
/// non-zero pairs and uses the tie-corrected normal approximation with
/// continuity correction beyond that.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    ensure!(
        a.len() == b.len(),
        "paired samples differ in length: {} vs {}",
        a.len(),
        b.len()
    );
    ensure!(
        (5..=50).contains(&a.len()),
        "Wilcoxon test supports 5 to 50 pairs, got {}",
        a.len()
    );
    ensure!(
        a.iter().chain(b).all(|v| v.is_finite()),
        "paired samples must be finite"
    );
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(Error::Undefined("all paired differences are zero".into()));
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let doubled = doubled_ranks(&abs);
    let neg_doubled: u64 = diffs
        .iter()
        .zip(&doubled)
        .filter(|(d, _)| **d < 0.0)
        .map(|(_, r)| r)
        .sum();
    let statistic = neg_doubled as f64 / 2.0;

    if n <= EXACT_LIMIT {
        return Ok(WilcoxonResult {
            statistic,
            p_value: exact_two_sided(&doubled, neg_doubled),
            effective_n: n,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = doubled.clone();
    sorted.sort_unstable();
    for group in sorted.chunk_by(|x, y| x == y) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let dev = ((statistic - mean).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(WilcoxonResult {
        statistic,
        p_value: (2.0 * (1.0 - normal.cdf(z))).min(1.0),
        effective_n: n,
        exact: false,
    })
}

/// Largest `W` whose exact two-sided p-value is at most `alpha` for `n`
/// untied non-zero pairs, or `None` when no value qualifies.
pub fn wilcoxon_critical_value(n: usize, alpha: f64) -> Result<Option<u64>> {
    ensure!(
        (1..=EXACT_LIMIT).contains(&n),
        "exact critical values need 1..=25 pairs, got {}",
        n
    );
    let doubled: Vec<u64> = (1..=n as u64).map(|r| 2 * r).collect();
    let counts = null_counts(&doubled);
    let patterns = 2f64.powi(n as i32);
    let mut cumulative = 0.0;
    let mut best = None;
    for w in 0..=(n * (n + 1) / 2) {
        cumulative += counts[2 * w];
        if 2.0 * cumulative / patterns <= alpha {
            best = Some(w as u64);
        } else {
            break;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_positive_differences() {
        for n in [6usize, 8, 10] {
            let a: Vec<f64> = (0..n).map(|i| 2.0 + i as f64).collect();
            let b = vec![1.0; n];
            let r = wilcoxon_signed_rank(&a, &b).unwrap();
            assert_eq!(r.statistic, 0.0);
            assert!((r.p_value - 2.0 / 2f64.powi(n as i32)).abs() < 1e-15);
            assert!(r.exact);
        }
    }

    #[test]
    fn identical_samples_are_undefined() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(matches!(
            wilcoxon_signed_rank(&a, &a),
            Err(Error::Undefined(_))
        ));
        assert!(wilcoxon_signed_rank(&a[..4], &a[..4]).is_err());
    }

    #[test]
    fn swapping_reflects_statistic() {
        let a = [1.3, 2.2, 0.4, 5.0, 3.3, 2.1, 0.9];
        let b = [1.0, 2.9, 0.1, 4.0, 3.5, 1.0, 1.2];
        let ab = wilcoxon_signed_rank(&a, &b).unwrap();
        let ba = wilcoxon_signed_rank(&b, &a).unwrap();
        assert_eq!(ab.statistic + ba.statistic, 28.0);
        assert!((ab.p_value - ba.p_value).abs() < 1e-15);
    }

    #[test]
    fn published_critical_values() {
        // Two-sided α = 0.05.
        for (n, w) in [
            (6, 0),
            (7, 2),
            (8, 3),
            (9, 5),
            (10, 8),
            (12, 13),
            (15, 25),
            (20, 52),
        ] {
            assert_eq!(
                wilcoxon_critical_value(n, 0.05).unwrap(),
                Some(w),
                "n = {n}"
            );
        }
        assert_eq!(wilcoxon_critical_value(5, 0.05).unwrap(), None);
    }

    #[test]
    fn tied_ranks_use_midranks() {
        assert_eq!(doubled_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![7, 2, 7, 4]);
        let a = [2.0, 3.0, 1.0, 5.0, 4.0, 1.5];
        let b = [1.0, 2.0, 2.0, 4.0, 3.0, 0.5];
        // |d| = 1 everywhere: every rank is 3.5, one negative
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.statistic, 3.5);
        // P(#neg ≤ 1) = 7/64 per tail
        assert!((r.p_value - 14.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn normal_approximation_above_exact_limit() {
        let a: Vec<f64> = (0..30)
            .map(|i| i as f64 + if i % 4 == 0 { -0.6 } else { 0.7 })
            .collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(!r.exact);
        assert!(r.p_value > 0.0 && r.p_value < 0.05, "{}", r.p_value);
    }
}
