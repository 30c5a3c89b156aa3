use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Matrix;
use super::Parameters;
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Affine map followed by a pointwise nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    /// Stored as an `out x 1` matrix so every parameter is a [`Matrix`].
    pub bias: Matrix,
    pub activation: Activation,
}

impl Dense {
    pub fn new(input: usize, output: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Dense {
            weight: Matrix::uniform(output, input, bound, rng),
            bias: Matrix::uniform(output, 1, bound, rng),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// A chain of dense layers, e.g. `600 -> 1024 (relu) -> 512 (relu) -> 327`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStack {
    pub layers: Vec<Dense>,
}

/// Inputs and pre-activations of every layer from one forward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl DenseCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl DenseStack {
    /// `sizes = [input, hidden.., output]`; hidden layers use rectifiers and the
    /// last layer is linear.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad dense layer sizes {sizes:?}")));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { Activation::Relu };
                Dense::new(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Ok(DenseStack { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        for pair in layers.windows(2) {
            check_len(pair[0].output_dim(), pair[1].input_dim())?;
        }
        for l in &layers {
            check_len(l.output_dim(), l.bias.rows())?;
        }
        Ok(DenseStack { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn forward(&self, x: &[f64]) -> Result<DenseCache> {
        check_len(self.input_dim(), x.len())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for layer in &self.layers {
            let mut z = vec![0.0; layer.output_dim()];
            layer.weight.matvec(&current, &mut z);
            for (zi, bi) in z.iter_mut().zip(layer.bias.as_slice()) {
                *zi += bi;
            }
            let out = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut current, out));
            pre.push(z);
        }
        Ok(DenseCache {
            inputs,
            pre,
            output: current,
        })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the stack input.
    pub fn backward(&self, cache: &DenseCache, grad_output: &[f64], grads: &mut DenseStack) -> Vec<f64> {
        let mut g = grad_output.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            for (gj, &z) in g.iter_mut().zip(&cache.pre[i]) {
                *gj *= layer.activation.derivative(z);
            }
            let lg = &mut grads.layers[i];
            lg.weight.add_outer(&g, &cache.inputs[i]);
            for (b, gj) in lg.bias.as_mut_slice().iter_mut().zip(&g) {
                *b += gj;
            }
            let mut below = vec![0.0; layer.input_dim()];
            layer.weight.t_matvec_add(&g, &mut below);
            g = below;
        }
        g
    }
}

impl Parameters for DenseStack {
    fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Pulls a gradient with respect to softmax outputs back to the logits.
pub fn softmax_backward(probs: &[f64], grad: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(grad).map(|(p, g)| p * g).sum();
    probs.iter().zip(grad).map(|(p, g)| p * (g - inner)).collect()
}
