use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{ensure, Result};

/// Two-component PCA fitted on a reference set.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca2 {
    pub reference: Vec<[f64; 2]>,
    pub generated: Vec<[f64; 2]>,
    /// Share of reference variance along each component.
    pub explained: [f64; 2],
    /// All eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

fn as_matrix(rows: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>> {
    for (i, r) in rows.iter().enumerate() {
        ensure!(
            r.len() == dim,
            "window {} has {} values, expected {}",
            i,
            r.len(),
            dim
        );
    }
    Ok(DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]))
}

/// Fits PCA on `reference` (covariance eigendecomposition of flattened
/// windows) and projects both sets on the top two components.
pub fn pca2(reference: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<Pca2> {
    ensure!(
        reference.len() >= 2 && generated.len() >= 2,
        "PCA needs at least 2 windows per set, got {} and {}",
        reference.len(),
        generated.len()
    );
    let dim = reference[0].len();
    ensure!(dim >= 2, "PCA needs at least 2 features, got {}", dim);
    let x = as_matrix(reference, dim)?;
    let g = as_matrix(generated, dim)?;
    let mean: DVector<f64> = x.row_mean().transpose();
    let centred = DMatrix::from_fn(x.nrows(), dim, |i, j| x[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (x.nrows() as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    ensure!(
        total > 0.0 && eigenvalues[0] > f64::EPSILON * total.max(1.0),
        "reference windows have zero variance"
    );

    // Fix each axis sign so its largest-magnitude loading is positive.
    let axes: Vec<DVector<f64>> = order[..2]
        .iter()
        .map(|&i| {
            let v = eig.eigenvectors.column(i).into_owned();
            let pivot = v
                .iter()
                .copied()
                .fold(0.0f64, |m, c| if c.abs() > m.abs() { c } else { m });
            if pivot < 0.0 {
                -v
            } else {
                v
            }
        })
        .collect();
    let project = |m: &DMatrix<f64>| -> Vec<[f64; 2]> {
        (0..m.nrows())
            .map(|i| {
                let mut out = [0.0; 2];
                for (k, axis) in axes.iter().enumerate() {
                    out[k] = (0..dim).map(|j| (m[(i, j)] - mean[j]) * axis[j]).sum();
                }
                out
            })
            .collect()
    };
    Ok(Pca2 {
        reference: project(&x),
        generated: project(&g),
        explained: [eigenvalues[0] / total, eigenvalues[1] / total],
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_have_one_component() {
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)])
            .collect();
        let p = pca2(&pts, &pts).unwrap();
        assert!((p.explained[0] - 1.0).abs() < 1e-12);
        assert!(p.explained[1].abs() < 1e-12);
    }

    #[test]
    fn self_projection_matches() {
        let pts: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let t = i as f64 * 0.3;
                vec![t.sin(), t.cos(), 0.5 * t.sin() + 0.1, t.cos() * 2.0]
            })
            .collect();
        let p = pca2(&pts, &pts.clone()).unwrap();
        for (a, b) in p.reference.iter().zip(&p.generated) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
        assert!(p.explained[0] >= p.explained[1] && p.explained[1] >= 0.0);
        assert!(p.explained[0] + p.explained[1] <= 1.0 + 1e-12);
        // rank 2 data: two components carry everything
        assert!((p.explained[0] + p.explained[1] - 1.0).abs() < 1e-9);
        // projected variance equals the eigenvalue
        let var0: f64 = p.reference.iter().map(|c| c[0] * c[0]).sum::<f64>() / 29.0;
        assert!((var0 - p.eigenvalues[0]).abs() < 1e-9);
    }

    #[test]
    fn constant_data_rejected() {
        let pts = vec![vec![1.0, 2.0]; 5];
        assert!(pca2(&pts, &pts).is_err());
        assert!(pca2(&pts[..1], &pts).is_err());
    }
}
