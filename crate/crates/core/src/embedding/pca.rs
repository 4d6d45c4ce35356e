use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub projected: Vec<Vec<f64>>,
    /// Share of total variance along each kept component.
    pub explained: Vec<f64>,
    /// Kept components as unit row vectors.
    pub components: Vec<Vec<f64>>,
    /// True when the points have zero total variance; the basis is then
    /// arbitrary and every ratio is 0.
    pub degenerate: bool,
}

/// Projects mean-centred points onto the top-`k` eigenvectors of their
/// covariance.
pub fn pca_project(points: &[Vec<f64>], k: usize) -> Result<Pca> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two points".into()));
    }
    let n = points[0].len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("cannot keep {k} of {n} components")));
    }
    if points.iter().any(|p| p.len() != n) {
        return Err(Error::Shape("points have different dimensions".into()));
    }
    let m = points.len() as f64;
    let mean: Vec<f64> = (0..n).map(|d| points.iter().map(|p| p[d]).sum::<f64>() / m).collect();
    let centred = DMatrix::from_fn(points.len(), n, |r, c| points[r][c] - mean[c]);
    let cov = centred.transpose() * &centred / (m - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let degenerate = total <= f64::EPSILON * n as f64;
    let components: Vec<Vec<f64>> = order[..k]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    let explained = order[..k]
        .iter()
        .map(|&i| if degenerate { 0.0 } else { eig.eigenvalues[i].max(0.0) / total })
        .collect();
    let projected = (0..points.len())
        .map(|r| {
            components
                .iter()
                .map(|c| c.iter().zip(centred.row(r).iter()).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    Ok(Pca {
        projected,
        explained,
        components,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::squared_distance;
    use crate::numcore::Rng;

    #[test]
    fn points_on_a_line() {
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let p = pca_project(&pts, 1).unwrap();
        assert!((p.explained[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn isotropic_sample_splits_variance() {
        let mut rng = Rng::new(1);
        let pts: Vec<Vec<f64>> = (0..2000).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let p = pca_project(&pts, 2).unwrap();
        for r in p.explained {
            assert!((r - 0.5).abs() < 0.1);
        }
    }

    #[test]
    fn full_rank_preserves_distances() {
        let mut rng = Rng::new(2);
        let pts: Vec<Vec<f64>> = (0..30).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        let p = pca_project(&pts, 4).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let a = squared_distance(&pts[i], &pts[j]);
                let b = squared_distance(&p.projected[i], &p.projected[j]);
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        let p = pca_project(&[vec![1.0, 1.0], vec![1.0, 1.0]], 2).unwrap();
        assert!(p.degenerate);
        assert!(p.explained.iter().all(|&r| r == 0.0));
        assert!(pca_project(&[vec![1.0]], 1).is_err());
        assert!(pca_project(&[vec![1.0], vec![2.0]], 2).is_err());
    }
}
