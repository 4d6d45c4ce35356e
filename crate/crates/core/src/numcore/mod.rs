//! Dense numeric core: MLPs, Adam, stable scalar functions, seeded streams.

mod adam;
mod mlp;
mod rng;
mod scalar;
pub mod weights;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{softmax_in_place, Activation, DenseLayer, Gradients, Mlp, Scratch, Trace};
pub use rng::{derive_seed, Rng};
pub use scalar::{sigmoid, softplus};

#[cfg(test)]
mod gradcheck {
    use super::*;

    fn loss(net: &Mlp, x: &[f64], w: &[f64]) -> f64 {
        net.forward(x).unwrap().iter().zip(w).map(|(a, b)| a * b).sum()
    }

    /// Central differences on up to 100 random parameter coordinates.
    fn check(net: &mut Mlp, x: &[f64], w: &[f64], rng: &mut Rng) {
        let g = net.backward(x, w).unwrap();
        let base = net.params();
        let h = 1e-5;
        let picks = 100.min(base.len());
        for _ in 0..picks {
            let k = rng.index(base.len());
            let mut p = base.clone();
            p[k] += h;
            net.set_params(&p).unwrap();
            let up = loss(net, x, w);
            p[k] -= 2.0 * h;
            net.set_params(&p).unwrap();
            let dn = loss(net, x, w);
            net.set_params(&base).unwrap();
            let fd = (up - dn) / (2.0 * h);
            let an = g.params[k];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!((fd - an).abs() / denom < 1e-4, "param {k}: fd {fd} vs {an}");
        }
        for k in 0..x.len() {
            let mut xp = x.to_vec();
            xp[k] += h;
            let up = loss(net, &xp, w);
            xp[k] -= 2.0 * h;
            let dn = loss(net, &xp, w);
            let fd = (up - dn) / (2.0 * h);
            let denom = fd.abs().max(g.input[k].abs()).max(1e-6);
            assert!((fd - g.input[k]).abs() / denom < 1e-4);
        }
    }

    #[test]
    fn random_small_nets_match_finite_differences() {
        let mut rng = Rng::new(11);
        let acts = [Activation::Tanh, Activation::Relu, Activation::Identity];
        for trial in 0..30 {
            let depth = 1 + trial % 3;
            let mut sizes = vec![1 + rng.index(6)];
            for _ in 0..depth {
                sizes.push(1 + rng.index(16));
            }
            let hidden = acts[trial % 3];
            let out = if trial % 4 == 0 { Activation::Softmax } else { Activation::Tanh };
            let mut net = Mlp::glorot(&sizes, hidden, out, &mut rng);
            // nudge biases away from ReLU kinks
            let p: Vec<f64> = net.params().iter().map(|v| v + rng.uniform(-0.1, 0.1)).collect();
            net.set_params(&p).unwrap();
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let w: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            check(&mut net, &x, &w, &mut rng);
        }
    }
}
