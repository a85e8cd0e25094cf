//! Small fully connected networks with hand-written reverse-mode gradients.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One affine layer followed by an activation. Weights are row-major
/// `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights scaled by `gain`, zero bias.
    fn init<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let limit = gain * (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let mut layer = Self::zeros(in_dim, out_dim, activation);
        for w in &mut layer.weights {
            *w = dist.sample(rng);
        }
        layer
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            let z = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b;
            out.push(self.activation.apply(z));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs and the final output of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl DenseNet {
    /// `sizes = [input, hidden.., output]`; hidden layers use `hidden`, the
    /// output layer is linear with weights shrunk by `output_gain`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if i == last {
                    Dense::init(w[0], w[1], Activation::Identity, output_gain, rng)
                } else {
                    Dense::init(w[0], w[1], hidden, 1.0, rng)
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim, l.activation))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Consecutive dimensions chain and every parameter is finite.
    pub fn is_well_formed(&self) -> bool {
        !self.layers.is_empty()
            && self.layers.windows(2).all(|w| w[0].out_dim == w[1].in_dim)
            && self.layers.iter().all(|l| {
                l.weights.len() == l.in_dim * l.out_dim
                    && l.bias.len() == l.out_dim
                    && l.weights.iter().chain(&l.bias).all(|v| v.is_finite())
            })
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.out_dim);
            layer.forward_into(activations.last().expect("non-empty"), &mut out);
            activations.push(out);
        }
        ForwardCache { activations }
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &[f64],
        grads: &mut DenseNet,
    ) -> Vec<f64> {
        let mut delta: Vec<f64> = grad_out.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[li];
            let output = &cache.activations[li + 1];
            for (d, y) in delta.iter_mut().zip(output) {
                *d *= layer.activation.derivative_from_output(*y);
            }
            let g = &mut grads.layers[li];
            let mut grad_in = vec![0.0; layer.in_dim];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] += d;
                let row = o * layer.in_dim;
                for i in 0..layer.in_dim {
                    g.weights[row + i] += d * input[i];
                    grad_in[i] += d * layer.weights[row + i];
                }
            }
            delta = grad_in;
        }
        delta
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn push_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }

    /// Reads parameters in [`push_params`](Self::push_params) order; returns
    /// how many were consumed.
    pub fn pull_params(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for l in &mut self.layers {
            let (w, b) = (l.weights.len(), l.bias.len());
            l.weights.copy_from_slice(&src[at..at + w]);
            at += w;
            l.bias.copy_from_slice(&src[at..at + b]);
            at += b;
        }
        at
    }
}
