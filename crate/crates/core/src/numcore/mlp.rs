//! Dense feed-forward networks with hand-written reverse mode.

use crate::error::{Error, Result};
use crate::numcore::Rng;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
    Tanh,
    Softmax,
}

impl Activation {
    fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Identity => {}
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Softmax => softmax_in_place(z),
        }
    }

    /// Turns `grad` (w.r.t. the activation output `y`) into the gradient
    /// w.r.t. the pre-activation, in place.
    fn backprop(self, y: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Relu => grad
                .iter_mut()
                .zip(y)
                .for_each(|(g, &y)| {
                    if y <= 0.0 {
                        *g = 0.0
                    }
                }),
            Activation::Identity => {}
            Activation::Tanh => grad
                .iter_mut()
                .zip(y)
                .for_each(|(g, &y)| *g *= 1.0 - y * y),
            Activation::Softmax => {
                // Jacobian-vector product y ⊙ (g − ⟨g, y⟩).
                let dot: f64 = grad.iter().zip(y).map(|(g, y)| g * y).sum();
                grad.iter_mut()
                    .zip(y)
                    .for_each(|(g, &y)| *g = y * (*g - dot));
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::Parse(format!("unknown activation '{other}'"))),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim || biases.len() != out_dim {
            return Err(Error::Shape(format!(
                "layer {in_dim}->{out_dim} given {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: "layer construction".into(),
                detail: format!("layer {in_dim}->{out_dim}"),
            });
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            biases,
            activation,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.uniform(-limit, limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            biases: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    fn forward_into(&self, input: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.in_dim).zip(&self.biases))
        {
            *o = b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
        self.activation.apply(out);
    }
}

/// Reusable buffers for allocation-free forward passes.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Per-layer activations recorded by [`Mlp::trace`]; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct Trace {
    values: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace has input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Flat, in [`Mlp::params`] order.
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch {
                    layer: i + 1,
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-initialised net with `hidden` activations between the given
    /// sizes and `output` on the last layer.
    pub fn glorot(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "need input and output sizes");
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    /// Layer by layer: weights (row-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.in_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = Scratch::default();
        self.forward_with(input, &mut scratch).map(<[f64]>::to_vec)
    }

    /// Forward pass reusing `scratch`; the returned slice borrows it.
    pub fn forward_with<'s>(&self, input: &[f64], scratch: &'s mut Scratch) -> Result<&'s [f64]> {
        self.check_input(input)?;
        scratch.a.clear();
        scratch.a.extend_from_slice(input);
        for l in &self.layers {
            scratch.b.resize(l.out_dim, 0.0);
            l.forward_into(&scratch.a, &mut scratch.b);
            std::mem::swap(&mut scratch.a, &mut scratch.b);
        }
        Ok(&scratch.a)
    }

    /// Forward pass that keeps every layer's output for [`Mlp::backward_trace`].
    pub fn trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for l in &self.layers {
            let mut out = vec![0.0; l.out_dim];
            l.forward_into(values.last().expect("non-empty"), &mut out);
            values.push(out);
        }
        Ok(Trace { values })
    }

    /// Accumulates parameter gradients into `acc` and returns the input
    /// gradient. `output_grad` is taken w.r.t. the network output.
    pub fn backward_trace(&self, trace: &Trace, output_grad: &[f64], acc: &mut [f64]) -> Result<Vec<f64>> {
        let last = self.layers.len() - 1;
        if output_grad.len() != self.out_dim() {
            return Err(Error::DimensionMismatch {
                layer: last,
                expected: self.out_dim(),
                got: output_grad.len(),
            });
        }
        if acc.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "gradient buffer holds {} values, network has {}",
                acc.len(),
                self.num_params()
            )));
        }
        if trace.values.len() != self.layers.len() + 1 {
            return Err(Error::Shape("trace does not match network depth".into()));
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.num_params();
        }

        let mut grad = output_grad.to_vec();
        for (idx, l) in self.layers.iter().enumerate().rev() {
            let y = &trace.values[idx + 1];
            let x = &trace.values[idx];
            l.activation.backprop(y, &mut grad);
            let base = offsets[idx];
            let (wacc, bacc) = acc[base..base + l.num_params()].split_at_mut(l.weights.len());
            for (o, &g) in grad.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                bacc[o] += g;
                let row = &mut wacc[o * l.in_dim..(o + 1) * l.in_dim];
                for (w, &xi) in row.iter_mut().zip(x) {
                    *w += g * xi;
                }
            }
            let mut next = vec![0.0; l.in_dim];
            for (o, &g) in grad.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += g * w;
                }
            }
            grad = next;
        }
        Ok(grad)
    }

    /// Gradients of `⟨output_grad, net(input)⟩` w.r.t. parameters and input.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<Gradients> {
        let trace = self.trace(input)?;
        let mut params = vec![0.0; self.num_params()];
        let input = self.backward_trace(&trace, output_grad, &mut params)?;
        Ok(Gradients { params, input })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer(act: Activation) -> DenseLayer {
        DenseLayer::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], act).unwrap()
    }

    #[test]
    fn identity_layer_passes_input() {
        let net = Mlp::new(vec![identity_layer(Activation::Identity)]).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let net = Mlp::new(vec![identity_layer(Activation::Relu)]).unwrap();
        assert_eq!(net.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn two_layer_matches_hand_product() {
        // W1 = [[1,2],[3,4]], b1 = [0.5,-20]; relu; W2 = [[1,-1],[2,0.5]], b2 = [0,1].
        let l1 = DenseLayer::from_parts(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.5, -20.0], Activation::Relu)
            .unwrap();
        let l2 = DenseLayer::from_parts(2, 2, vec![1.0, -1.0, 2.0, 0.5], vec![0.0, 1.0], Activation::Identity)
            .unwrap();
        let net = Mlp::new(vec![l1, l2]).unwrap();
        // hidden = relu([1+4+0.5, 3+8-20]) = [5.5, 0]
        // out = [5.5, 11 + 1] = [5.5, 12]
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![5.5, 12.0]);
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let a = DenseLayer::from_parts(2, 3, vec![0.0; 6], vec![0.0; 3], Activation::Relu).unwrap();
        let b = DenseLayer::from_parts(2, 1, vec![0.0; 2], vec![0.0; 1], Activation::Identity).unwrap();
        match Mlp::new(vec![a, b]) {
            Err(Error::DimensionMismatch { layer: 1, expected: 3, got: 2 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let net = Mlp::new(vec![identity_layer(Activation::Identity)]).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { layer: 0, .. })
        ));
    }

    #[test]
    fn linear_weight_gradient_is_input_outer_ones() {
        let l = DenseLayer::from_parts(3, 2, vec![0.3; 6], vec![0.1, 0.2], Activation::Identity).unwrap();
        let net = Mlp::new(vec![l]).unwrap();
        let x = [1.0, -2.0, 0.5];
        let g = net.backward(&x, &[1.0, 1.0]).unwrap();
        assert_eq!(&g.params[..6], &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);
        assert_eq!(&g.params[6..], &[1.0, 1.0]);
    }

    #[test]
    fn zero_output_gradient_gives_zero() {
        let mut rng = Rng::new(1);
        let net = Mlp::glorot(&[4, 8, 3], Activation::Tanh, Activation::Softmax, &mut rng);
        let g = net.backward(&[0.1, 0.2, 0.3, 0.4], &[0.0; 3]).unwrap();
        assert!(g.params.iter().chain(&g.input).all(|&v| v == 0.0));
    }

    #[test]
    fn params_round_trip() {
        let mut rng = Rng::new(2);
        let mut net = Mlp::glorot(&[3, 5, 2], Activation::Relu, Activation::Identity, &mut rng);
        let p: Vec<f64> = (0..net.num_params()).map(|i| i as f64 * 0.01).collect();
        net.set_params(&p).unwrap();
        assert_eq!(net.params(), p);
        assert!(net.set_params(&p[1..]).is_err());
    }

    #[test]
    fn softmax_output_sums_to_one() {
        let mut z = vec![1000.0, 1001.0, -5.0];
        softmax_in_place(&mut z);
        assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(z.iter().all(|v| v.is_finite()));
    }
}
