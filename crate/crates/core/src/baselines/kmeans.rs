use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::par::{self, Execution};

const MAX_ITERATIONS: usize = 300;
const TOLERANCE: f64 = 1e-6;

/// Centroids over flattened windows.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeansModel {
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after initialization and after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dist2(point, c)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

/// k-means++ seeding followed by Lloyd iterations until the relative change
/// in inertia drops below 1e-6 or 300 iterations pass.
pub fn kmeans_fit(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansModel> {
    ensure!(k >= 1, "k must be at least 1");
    ensure!(
        points.len() >= k,
        "k-means needs at least k = {} points, got {}",
        k,
        points.len()
    );
    let dim = points[0].len();
    ensure!(
        points.iter().all(|p| p.len() == dim),
        "points differ in dimension"
    );
    ensure!(
        points.iter().flatten().all(|v| v.is_finite()),
        "k-means input must be finite"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(&mut rng),
            // Every point already coincides with a centroid.
            Err(_) => rng.gen_range(0..points.len()),
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, centroids.last().unwrap()));
        }
    }

    let inertia_of = |cs: &[Vec<f64>]| points.iter().map(|p| nearest(p, cs).1).sum::<f64>();
    let mut history = vec![inertia_of(&centroids)];
    for _ in 0..MAX_ITERATIONS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let (c, _) = nearest(p, &centroids);
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for (c, (sum, &n)) in sums.into_iter().zip(&counts).enumerate() {
            if n > 0 {
                centroids[c] = sum.into_iter().map(|s| s / n as f64).collect();
            }
        }
        let inertia = inertia_of(&centroids);
        let prev = *history.last().unwrap();
        history.push(inertia);
        if prev == 0.0 || (prev - inertia).abs() / prev < TOLERANCE {
            break;
        }
    }
    Ok(KMeansModel {
        centroids,
        inertia_history: history,
    })
}

/// Euclidean distance from each window to its nearest centroid.
pub fn kmeans_score(points: &[Vec<f64>], model: &KMeansModel, exec: Execution) -> Result<Vec<f64>> {
    let dim = model.centroids[0].len();
    ensure!(
        points.iter().all(|p| p.len() == dim),
        "points must have dimension {}",
        dim
    );
    Ok(par::map(exec, points, |p| {
        nearest(p, &model.centroids).1.sqrt()
    }))
}
