use serde::{Deserialize, Serialize};

use super::Parameters;

/// SGD with Nesterov momentum, in the velocity form
///
/// ```text
/// v     <- mu * v - lr * g
/// theta <- theta + mu * v - lr * g
/// ```
///
/// where the second line uses the freshly updated `v`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerState<P> {
    pub learning_rate: f64,
    pub momentum: f64,
    pub velocity: P,
}

impl<P: Parameters> OptimizerState<P> {
    pub fn new(learning_rate: f64, momentum: f64, like: &P) -> Self {
        OptimizerState {
            learning_rate,
            momentum,
            velocity: like.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut P, grads: &P) {
        let (lr, mu) = (self.learning_rate, self.momentum);
        let grads = grads.blocks();
        let velocity = self.velocity.blocks_mut();
        let params = params.blocks_mut();
        assert_eq!(grads.len(), params.len(), "gradient layout mismatch");
        for ((p, v), (_, g)) in params.into_iter().zip(velocity).zip(grads) {
            assert_eq!(p.len(), g.len(), "gradient block size mismatch");
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *v = mu * *v - lr * g;
                *p += mu * *v - lr * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct Scalar(Vec<f64>);

    impl Parameters for Scalar {
        fn blocks(&self) -> Vec<(String, &[f64])> {
            vec![("theta".into(), &self.0[..])]
        }
        fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0[..]]
        }
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut p = Scalar(vec![1.0, -2.0, 0.5]);
        let g = Scalar(vec![0.3, -0.1, 2.0]);
        let mut opt = OptimizerState::new(0.1, 0.0, &p);
        opt.step(&mut p, &g);
        let expected = [1.0 - 0.1 * 0.3, -2.0 + 0.1 * 0.1, 0.5 - 0.1 * 2.0];
        assert_eq!(p.0, expected);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Scalar(vec![1.0, 2.0]);
        let mut opt = OptimizerState::new(0.1, 0.9, &p);
        opt.step(&mut p, &Scalar(vec![0.0, 0.0]));
        assert_eq!(p.0, vec![1.0, 2.0]);
    }

    #[test]
    fn two_steps_on_a_parabola() {
        // f(theta) = theta^2, grad = 2 theta, from theta = 1 with lr 0.1, mu 0.9:
        //   g1 = 2      v1 = -0.2    theta1 = 1 - 0.18 - 0.2 = 0.62
        //   g2 = 1.24   v2 = -0.304  theta2 = 0.62 - 0.2736 - 0.124 = 0.2224
        let mut p = Scalar(vec![1.0]);
        let mut opt = OptimizerState::new(0.1, 0.9, &p);
        let mut trace = Vec::new();
        for _ in 0..2 {
            let g = Scalar(vec![2.0 * p.0[0]]);
            opt.step(&mut p, &g);
            trace.push((p.0[0], opt.velocity.0[0]));
        }
        assert!((trace[0].0 - 0.62).abs() < 1e-12 && (trace[0].1 + 0.2).abs() < 1e-12);
        assert!((trace[1].0 - 0.2224).abs() < 1e-12 && (trace[1].1 + 0.304).abs() < 1e-12);
    }
}
