use rand::Rng;

use super::tensor::Matrix;
use super::Parameters;
use crate::error::{check_len, Error, Result};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Single-direction LSTM cell. Gate rows are stacked `[input, forget, cell, output]`
/// and act on the concatenation `[x_t; h_{t-1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub weight: Matrix,
    pub bias: Matrix,
    input_dim: usize,
    hidden: usize,
}

#[derive(Debug, Clone)]
struct Step {
    concat: Vec<f64>,
    gates: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
}

/// Per-step activations of one pass, for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    steps: Vec<Step>,
    hidden: Vec<f64>,
}

impl LstmTrace {
    pub fn final_hidden(&self) -> &[f64] {
        &self.hidden
    }
}

impl Lstm {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((input_dim + hidden) as f64).sqrt();
        Lstm {
            weight: Matrix::uniform(4 * hidden, input_dim + hidden, bound, rng),
            bias: Matrix::uniform(4 * hidden, 1, bound, rng),
            input_dim,
            hidden,
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Lstm {
            weight: Matrix::zeros(4 * hidden, input_dim + hidden),
            bias: Matrix::zeros(4 * hidden, 1),
            input_dim,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Runs the cell over `seq` in the given order, starting from zero state.
    pub fn forward<'a>(&self, seq: impl Iterator<Item = &'a [f64]>) -> Result<LstmTrace> {
        let (d, h) = (self.input_dim, self.hidden);
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut steps = Vec::new();
        for x in seq {
            check_len(d, x.len())?;
            let mut concat = Vec::with_capacity(d + h);
            concat.extend_from_slice(x);
            concat.extend_from_slice(&hs);
            let mut gates = vec![0.0; 4 * h];
            self.weight.matvec(&concat, &mut gates);
            for (z, b) in gates.iter_mut().zip(self.bias.as_slice()) {
                *z += b;
            }
            for j in 0..h {
                gates[j] = sigmoid(gates[j]);
                gates[h + j] = sigmoid(gates[h + j]);
                gates[2 * h + j] = gates[2 * h + j].tanh();
                gates[3 * h + j] = sigmoid(gates[3 * h + j]);
            }
            let mut tanh_cell = vec![0.0; h];
            for j in 0..h {
                cs[j] = gates[h + j] * cs[j] + gates[j] * gates[2 * h + j];
                tanh_cell[j] = cs[j].tanh();
                hs[j] = gates[3 * h + j] * tanh_cell[j];
            }
            steps.push(Step {
                concat,
                gates,
                cell: cs.clone(),
                tanh_cell,
            });
        }
        if steps.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        Ok(LstmTrace { steps, hidden: hs })
    }

    /// Backpropagates a gradient on the final hidden state. Input gradients are
    /// discarded since embeddings are frozen.
    pub fn backward(&self, trace: &LstmTrace, grad_hidden: &[f64], grads: &mut Lstm) {
        let h = self.hidden;
        let mut dh = grad_hidden.to_vec();
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        let zero = vec![0.0; h];
        for t in (0..trace.steps.len()).rev() {
            let step = &trace.steps[t];
            let prev_cell = if t > 0 { &trace.steps[t - 1].cell } else { &zero };
            let g = &step.gates;
            for j in 0..h {
                let (i, f, c, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = step.tanh_cell[j];
                dc[j] += dh[j] * o * (1.0 - tc * tc);
                dz[j] = dc[j] * c * i * (1.0 - i);
                dz[h + j] = dc[j] * prev_cell[j] * f * (1.0 - f);
                dz[2 * h + j] = dc[j] * i * (1.0 - c * c);
                dz[3 * h + j] = dh[j] * tc * o * (1.0 - o);
                dc[j] *= f;
            }
            grads.weight.add_outer(&dz, &step.concat);
            for (b, d) in grads.bias.as_mut_slice().iter_mut().zip(&dz) {
                *b += d;
            }
            if t > 0 {
                let mut dconcat = vec![0.0; self.input_dim + h];
                self.weight.t_matvec_add(&dz, &mut dconcat);
                dh.copy_from_slice(&dconcat[self.input_dim..]);
            }
        }
    }
}

impl Parameters for Lstm {
    fn params(&self) -> Vec<&Matrix> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Bidirectional encoder: final forward state concatenated with the final
/// state of a pass over the reversed sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

#[derive(Debug, Clone)]
pub struct BiLstmTrace {
    forward: LstmTrace,
    backward: LstmTrace,
    output: Vec<f64>,
}

impl BiLstmTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl BiLstm {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let forward = Lstm::new(input_dim, hidden, rng);
        let backward = Lstm::new(input_dim, hidden, rng);
        BiLstm { forward, backward }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    pub fn encode(&self, seq: &[Vec<f64>]) -> Result<BiLstmTrace> {
        let fw = self.forward.forward(seq.iter().map(Vec::as_slice))?;
        let bw = self.backward.forward(seq.iter().rev().map(Vec::as_slice))?;
        let mut output = fw.final_hidden().to_vec();
        output.extend_from_slice(bw.final_hidden());
        Ok(BiLstmTrace {
            forward: fw,
            backward: bw,
            output,
        })
    }

    pub fn backward(&self, trace: &BiLstmTrace, grad_output: &[f64], grads: &mut BiLstm) {
        let h = self.forward.hidden;
        self.forward.backward(&trace.forward, &grad_output[..h], &mut grads.forward);
        self.backward.backward(&trace.backward, &grad_output[h..], &mut grads.backward);
    }
}

impl Parameters for BiLstm {
    fn params(&self) -> Vec<&Matrix> {
        let mut p = self.forward.params();
        p.extend(self.backward.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.forward.params_mut();
        p.extend(self.backward.params_mut());
        p
    }
}
