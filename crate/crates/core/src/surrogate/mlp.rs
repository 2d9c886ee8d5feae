//! Fully connected regressor: tanh hidden layers, linear scalar output.
//!
//! Weights are stored input-major (`w[i * out_dim + j]` connects input `i` to
//! output `j`) so the forward pass is a sequence of contiguous axpy updates.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-limit..limit))
                .collect(),
            biases: vec![0.0; out_dim],
        }
    }

    fn affine(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_dim);
        out.copy_from_slice(&self.biases);
        for (x, row) in input.iter().zip(self.weights.chunks_exact(self.out_dim)) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
    }

    fn is_valid(&self) -> bool {
        self.weights.len() == self.in_dim * self.out_dim && self.biases.len() == self.out_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Per-layer activations from the most recent forward pass; entry 0 is the input.
#[derive(Debug, Clone)]
pub struct Activations {
    values: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> f64 {
        self.values.last().expect("at least one layer")[0]
    }
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn reset(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.biases.iter_mut().for_each(|b| *b = 0.0);
        }
    }
}

impl Mlp {
    /// `input → hidden[0] → … → 1` with Glorot initialisation.
    pub fn new<R: Rng>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|w| Layer::glorot(w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn is_valid(&self) -> bool {
        !self.layers.is_empty()
            && self.layers.iter().all(Layer::is_valid)
            && self.layers.windows(2).all(|w| w[0].out_dim == w[1].in_dim)
            && self.layers.last().map(|l| l.out_dim) == Some(1)
    }

    pub fn activations(&self) -> Activations {
        let mut values = vec![vec![0.0; self.input_dim()]];
        values.extend(self.layers.iter().map(|l| vec![0.0; l.out_dim]));
        Activations { values }
    }

    /// Forward pass recording every layer output in `acts`.
    pub fn forward_into(&self, input: &[f64], acts: &mut Activations) -> f64 {
        acts.values[0].copy_from_slice(input);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = acts.values.split_at_mut(l + 1);
            let out = &mut after[0];
            layer.affine(&before[l], out);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        acts.output()
    }

    pub fn forward(&self, input: &[f64]) -> f64 {
        let mut acts = self.activations();
        self.forward_into(input, &mut acts)
    }

    /// Accumulates `d_output · ∂output/∂θ` into `grads`, using the activations
    /// of the forward pass that produced `acts`.
    pub fn backward(&self, acts: &Activations, d_output: f64, grads: &mut Gradients) {
        let mut delta = vec![d_output];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &acts.values[l];
            let g = &mut grads.layers[l];
            for (gb, d) in g.biases.iter_mut().zip(&delta) {
                *gb += d;
            }
            for (x, grow) in input.iter().zip(g.weights.chunks_exact_mut(layer.out_dim)) {
                for (gw, d) in grow.iter_mut().zip(&delta) {
                    *gw += x * d;
                }
            }
            if l > 0 {
                // Previous layer is a tanh hidden layer: d tanh = 1 - a².
                delta = input
                    .iter()
                    .zip(layer.weights.chunks_exact(layer.out_dim))
                    .map(|(a, row)| {
                        let s: f64 = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                        s * (1.0 - a * a)
                    })
                    .collect();
            }
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }
}

/// Heavy-ball momentum: `v ← m·v − lr·g`, `θ ← θ + v`.
#[derive(Debug, Clone)]
pub struct Momentum {
    velocity: Gradients,
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
}

impl Momentum {
    pub fn new(mlp: &Mlp, learning_rate: f64, momentum: f64) -> Self {
        Self {
            velocity: Gradients::zeros_like(mlp),
            learning_rate,
            momentum,
            weight_decay: 0.0,
        }
    }

    /// Adds `weight_decay · w` to every weight gradient (biases are exempt).
    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn apply(&mut self, mlp: &mut Mlp, grads: &Gradients) {
        let (lr, m, wd) = (self.learning_rate, self.momentum, self.weight_decay);
        for ((layer, g), v) in mlp
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.velocity.layers)
        {
            for ((w, gw), vw) in layer.weights.iter_mut().zip(&g.weights).zip(&mut v.weights) {
                *vw = m * *vw - lr * (gw + wd * *w);
                *w += *vw;
            }
            for ((b, gb), vb) in layer.biases.iter_mut().zip(&g.biases).zip(&mut v.biases) {
                *vb = m * *vb - lr * gb;
                *b += *vb;
            }
        }
    }
}
