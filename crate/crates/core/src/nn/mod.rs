//! Minimal neural-network building blocks shared by the encoder and ranker.

pub mod checkpoint;
pub mod dense;
pub mod embedding;
pub mod lstm;
pub mod tensor;

use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use dense::{softmax, softmax_backward, Activation, Dense, DenseCache, DenseStack};
pub use embedding::{embed_tokens, EmbeddingProvider, EmbeddingSpec, Embeddings, HashEmbedding, TableEmbedding};
pub use lstm::{BiLstm, BiLstmTrace, Lstm};
pub use tensor::Matrix;

use crate::error::{check_len, Error, Result};

/// A model whose trainable state is an ordered list of matrices. Gradients are
/// stored in a second instance of the same type.
pub trait Parameters {
    fn params(&self) -> Vec<&Matrix>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;

    /// Copy with every parameter set to zero, used as a gradient buffer.
    fn zeroed(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    fn fill_zero(&mut self) {
        for m in self.params_mut() {
            m.as_mut_slice().fill(0.0);
        }
    }

    fn scale(&mut self, factor: f64) {
        for m in self.params_mut() {
            m.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn parameter_count(&self) -> usize {
        self.params().iter().map(|m| m.as_slice().len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|m| m.as_slice().iter().all(|v| v.is_finite()))
    }
}

/// `p <- p - lr * g` on a flat buffer.
pub fn sgd_update(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    check_len(params.len(), grads.len())?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Plain SGD step over every tensor of `model`.
pub fn sgd_step<M: Parameters>(model: &mut M, grads: &M, lr: f64) -> Result<()> {
    let g = grads.params();
    let mut p = model.params_mut();
    check_len(p.len(), g.len())?;
    for (pm, gm) in p.iter_mut().zip(g) {
        if pm.shape() != gm.shape() {
            return Err(Error::LengthMismatch {
                expected: pm.as_slice().len(),
                actual: gm.as_slice().len(),
            });
        }
        sgd_update(pm.as_mut_slice(), gm.as_slice(), lr)?;
    }
    Ok(())
}

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `grads` with central finite differences of `loss` at `model` and
/// returns the largest relative error over all parameters.
pub fn grad_check<M, F>(model: &M, grads: &M, loss: F, step: f64) -> f64
where
    M: Parameters + Clone,
    F: Fn(&M) -> f64,
{
    let mut probe = model.clone();
    let analytic: Vec<Vec<f64>> = grads.params().iter().map(|m| m.as_slice().to_vec()).collect();
    let mut worst = 0.0f64;
    for (t, a) in analytic.iter().enumerate() {
        for (i, &ai) in a.iter().enumerate() {
            let orig = probe.params()[t].as_slice()[i];
            probe.params_mut()[t].as_mut_slice()[i] = orig + step;
            let up = loss(&probe);
            probe.params_mut()[t].as_mut_slice()[i] = orig - step;
            let down = loss(&probe);
            probe.params_mut()[t].as_mut_slice()[i] = orig;
            worst = worst.max(relative_error(ai, (up - down) / (2.0 * step)));
        }
    }
    worst
}

/// SGD training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 1000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sgd_scalar_arithmetic() {
        let mut p = [1.0];
        sgd_update(&mut p, &[0.5], 0.01).unwrap();
        assert!((p[0] - 0.995).abs() < 1e-15);
        let mut q = [2.0, -3.0];
        sgd_update(&mut q, &[0.0, 0.0], 0.5).unwrap();
        assert_eq!(q, [2.0, -3.0]);
        assert!(sgd_update(&mut q, &[1.0], 0.1).is_err());
    }

    #[test]
    fn sgd_step_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = DenseStack::new(&[4, 3, 2], &mut rng).unwrap();
        let mut grads = model.clone();
        for m in grads.params_mut() {
            m.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        let before = model.clone();
        sgd_step(&mut model, &grads, 0.3).unwrap();
        for ((p, b), g) in model.params().iter().zip(before.params()).zip(grads.params()) {
            for i in 0..p.as_slice().len() {
                assert_eq!(p.as_slice()[i], b.as_slice()[i] - 0.3 * g.as_slice()[i]);
            }
        }
        let other = DenseStack::new(&[4, 5, 2], &mut rng).unwrap();
        assert!(sgd_step(&mut model, &other, 0.1).is_err());
    }

    #[test]
    fn grad_check_linear_squared_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = DenseStack::new(&[6, 3], &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |m: &DenseStack| {
            let out = m.forward(&x).unwrap();
            out.output().iter().zip(&y).map(|(o, t)| (o - t).powi(2)).sum::<f64>()
        };
        let cache = model.forward(&x).unwrap();
        let g: Vec<f64> = cache.output().iter().zip(&y).map(|(o, t)| 2.0 * (o - t)).collect();
        let mut grads = model.zeroed();
        model.backward(&cache, &g, &mut grads);
        assert!(grad_check(&model, &grads, loss, 1e-5) <= 1e-8);
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
