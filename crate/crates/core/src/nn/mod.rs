//! Small neural building blocks with hand-written reverse-mode gradients.
//!
//! Everything is `f64`. Matrices are row-major `Vec<f64>` with shape
//! `(outputs, inputs)`.

pub mod checkpoint;
pub mod dense;
pub mod gradcheck;
pub mod gru;
pub mod linalg;
pub mod optim;

pub use checkpoint::{Checkpoint, CheckpointError, NamedArray};
pub use dense::{Activation, DenseCache, DenseLayer};
pub use gradcheck::{finite_diff_check, BlockCheck, GradCheckReport};
pub use gru::{GruCache, GruCell};
pub use optim::OptimizerState;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("shape mismatch: expected {expected} values, got {actual}")]
pub struct ShapeError {
    pub expected: usize,
    pub actual: usize,
}

pub(crate) fn check_len(actual: usize, expected: usize) -> Result<(), ShapeError> {
    if actual == expected {
        Ok(())
    } else {
        Err(ShapeError { expected, actual })
    }
}

/// A set of named, flat parameter blocks. Gradients and optimizer
/// velocities reuse the parameter type itself.
pub trait Parameters: Clone {
    fn blocks(&self) -> Vec<(String, &[f64])>;

    /// Same order as [`Parameters::blocks`].
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for b in z.blocks_mut() {
            b.fill(0.0);
        }
        z
    }

    fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// `self += scale * other`
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        let src: Vec<Vec<f64>> = other.blocks().into_iter().map(|(_, b)| b.to_vec()).collect();
        for (dst, src) in self.blocks_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn l2_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn all_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }
}

/// Uniform Glorot initialization for an `outputs x inputs` matrix.
pub fn glorot_uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Vec<f64> {
    let limit = (6.0 / (inputs + outputs) as f64).sqrt();
    (0..inputs * outputs)
        .map(|_| rng.random_range(-limit..limit))
        .collect()
}

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
pub const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

#[inline]
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE * x
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp_m1()
    }
}

/// Derivative of [`selu`] at pre-activation `x`.
#[inline]
pub fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
