use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{matvec_acc, matvec_t_acc, outer_acc, Block};
use super::{check_len, glorot_uniform, selu, selu_grad, Parameters, ShapeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Selu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Selu => selu(x),
        }
    }

    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Selu => selu_grad(pre),
        }
    }
}

/// Fully-connected layer `activation(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        DenseLayer {
            weights: glorot_uniform(inputs, outputs, rng),
            ..DenseLayer::zeros(inputs, outputs, activation)
        }
    }

    pub fn block(&self) -> Block {
        Block::full(self.outputs, self.inputs)
    }

    pub fn apply(&self, input: &[f64]) -> Result<Vec<f64>, ShapeError> {
        check_len(input.len(), self.inputs)?;
        Ok(self.forward(input).out)
    }

    pub fn forward(&self, input: &[f64]) -> DenseCache {
        let mut pre = self.bias.clone();
        matvec_acc(&self.weights, self.block(), input, &mut pre);
        let out = pre.iter().map(|&p| self.activation.apply(p)).collect();
        DenseCache { pre, out }
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dinput`.
    pub fn backward(
        &self,
        input: &[f64],
        cache: &DenseCache,
        d_out: &[f64],
        grad: &mut DenseLayer,
    ) -> Vec<f64> {
        let d_pre: Vec<f64> = d_out
            .iter()
            .zip(&cache.pre)
            .map(|(&g, &p)| g * self.activation.derivative(p))
            .collect();
        outer_acc(&mut grad.weights, self.block(), &d_pre, input);
        for (b, g) in grad.bias.iter_mut().zip(&d_pre) {
            *b += g;
        }
        let mut d_in = vec![0.0; self.inputs];
        matvec_t_acc(&self.weights, self.block(), &d_pre, &mut d_in);
        d_in
    }
}

impl Parameters for DenseLayer {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        vec![
            ("weight".to_string(), &self.weights[..]),
            ("bias".to_string(), &self.bias[..]),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights[..], &mut self.bias[..]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{finite_diff_check, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_bias() {
        let mut layer = DenseLayer::zeros(3, 3, Activation::Linear);
        for i in 0..3 {
            layer.weights[i * 3 + i] = 1.0;
        }
        assert_eq!(layer.apply(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);

        let mut bias_only = DenseLayer::zeros(2, 3, Activation::Linear);
        bias_only.bias = vec![0.1, 0.2, 0.3];
        assert_eq!(bias_only.apply(&[9.0, -9.0]).unwrap(), vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn shape_mismatch() {
        let layer = DenseLayer::zeros(3, 2, Activation::Selu);
        assert_eq!(
            layer.apply(&[1.0]),
            Err(ShapeError {
                expected: 3,
                actual: 1
            })
        );
    }

    #[test]
    fn input_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for act in [Activation::Linear, Activation::Selu] {
            let mut layer = DenseLayer::glorot(5, 4, act, &mut rng);
            layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cache = layer.forward(&x);
            let h = 1e-5;
            for out in 0..4 {
                let mut e = vec![0.0; 4];
                e[out] = 1.0;
                let mut scratch = layer.zeros_like();
                let row = layer.backward(&x, &cache, &e, &mut scratch);
                for j in 0..5 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let fd = (layer.forward(&xp).out[out] - layer.forward(&xm).out[out]) / (2.0 * h);
                    assert!(relative_error(row[j], fd) < 1e-5, "{act:?} d{out}/dx{j}");
                }
            }
        }
    }

    #[test]
    fn parameter_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = DenseLayer::glorot(4, 3, Activation::Selu, &mut rng);
        layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = [0.7, -1.3, 0.4];
        let report = finite_diff_check(
            |p: &DenseLayer| {
                let cache = p.forward(&x);
                let loss = cache.out.iter().zip(&c).map(|(y, c)| y * c).sum();
                let mut g = p.zeros_like();
                p.backward(&x, &cache, &c, &mut g);
                (loss, g)
            },
            &layer,
            1e-5,
            1e-5,
        );
        assert!(report.passed(), "{report}");
    }
}
