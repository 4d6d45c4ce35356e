//! Bradley-Terry-Luce losses on embeddings, with gradients.

use super::{dot, norm};
use crate::numcore::{sigmoid, softplus};

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub loss: f64,
    /// Gradients with respect to E1, E2, E3.
    pub grads: [Vec<f64>; 3],
}

/// `softplus(⟨E1,E3⟩ − ⟨E1,E2⟩)`: the loss of asserting that s2 is more
/// similar to s1 than s3 is.
pub fn triplet_loss(e1: &[f64], e2: &[f64], e3: &[f64]) -> TripletLoss {
    let z = dot(e1, e3) - dot(e1, e2);
    let s = sigmoid(z);
    TripletLoss {
        loss: softplus(z),
        grads: [
            e3.iter().zip(e2).map(|(c, b)| s * (c - b)).collect(),
            e1.iter().map(|a| -s * a).collect(),
            e1.iter().map(|a| s * a).collect(),
        ],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    /// Gradients with respect to the easier and the harder embedding.
    pub grads: [Vec<f64>; 2],
}

/// `softplus(‖E_easier‖ − ‖E_harder‖)`. The gradient of a zero-norm
/// embedding is taken as zero.
pub fn norm_pair_loss(easier: &[f64], harder: &[f64]) -> PairLoss {
    let (ne, nh) = (norm(easier), norm(harder));
    let s = sigmoid(ne - nh);
    let unit = |v: &[f64], n: f64, sign: f64| -> Vec<f64> {
        if n == 0.0 {
            vec![0.0; v.len()]
        } else {
            v.iter().map(|x| sign * s * x / n).collect()
        }
    };
    PairLoss {
        loss: softplus(ne - nh),
        grads: [unit(easier, ne, 1.0), unit(harder, nh, -1.0)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;
    use std::f64::consts::LN_2;

    #[test]
    fn reference_values() {
        assert!((triplet_loss(&[1.0, 2.0], &[3.0, 0.0], &[1.0, 1.0]).loss - LN_2).abs() < 1e-12);
        // ⟨E1,E2⟩ − ⟨E1,E3⟩ = 10 gives softplus(−10)
        let l = triplet_loss(&[1.0, 0.0], &[10.0, 5.0], &[0.0, 7.0]).loss;
        assert!((l - 4.5398899e-5).abs() < 1e-10, "{l}");
        let l = triplet_loss(&[0.0, 0.0], &[9.0, -2.0], &[-4.0, 1.0]).loss;
        assert!((l - LN_2).abs() < 1e-12);
        assert!((norm_pair_loss(&[3.0, 4.0], &[0.0, 5.0]).loss - LN_2).abs() < 1e-12);
        let l = norm_pair_loss(&[0.0, 0.0], &[6.0, 8.0]).loss;
        assert!((l - 4.5398899e-5).abs() < 1e-10);
    }

    fn check(f: &dyn Fn(&[Vec<f64>]) -> f64, grads: &[Vec<f64>], at: &[Vec<f64>]) {
        let h = 1e-6;
        for (k, g) in grads.iter().enumerate() {
            for d in 0..g.len() {
                let mut p = at.to_vec();
                p[k][d] += h;
                let mut m = at.to_vec();
                m[k][d] -= h;
                let fd = (f(&p) - f(&m)) / (2.0 * h);
                let err = (fd - g[d]).abs() / fd.abs().max(g[d].abs()).max(1e-6);
                assert!(err < 1e-4, "arg {k} dim {d}: fd {fd} analytic {}", g[d]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let v: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
            let t = triplet_loss(&v[0], &v[1], &v[2]);
            check(&|a| triplet_loss(&a[0], &a[1], &a[2]).loss, &t.grads, &v);
            let p = norm_pair_loss(&v[0], &v[1]);
            check(&|a| norm_pair_loss(&a[0], &a[1]).loss, &p.grads, &v[..2]);
        }
    }

    #[test]
    fn zero_norm_is_finite() {
        let p = norm_pair_loss(&[0.0; 3], &[0.0; 3]);
        assert!((p.loss - LN_2).abs() < 1e-12);
        assert!(p.grads.iter().flatten().all(|g| *g == 0.0));
    }
}
