use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{matvec_acc, matvec_t_acc, outer_acc, Block};
use super::{check_len, glorot_uniform, sigmoid, Parameters, ShapeError};

/// Gated recurrent cell with equal input and hidden width:
///
/// ```text
/// z  = sigmoid(Wz x + Uz h + bz)
/// r  = sigmoid(Wr x + Ur h + br)
/// n  = tanh(Wn x + Un (r * h) + bn)
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub size: usize,
    pub w_update: Vec<f64>,
    pub w_reset: Vec<f64>,
    pub w_candidate: Vec<f64>,
    pub u_update: Vec<f64>,
    pub u_reset: Vec<f64>,
    pub u_candidate: Vec<f64>,
    pub b_update: Vec<f64>,
    pub b_reset: Vec<f64>,
    pub b_candidate: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    pub update: Vec<f64>,
    pub reset: Vec<f64>,
    pub candidate: Vec<f64>,
    pub reset_hidden: Vec<f64>,
    pub out: Vec<f64>,
}

impl GruCell {
    pub fn zeros(size: usize) -> Self {
        let m = vec![0.0; size * size];
        let v = vec![0.0; size];
        GruCell {
            size,
            w_update: m.clone(),
            w_reset: m.clone(),
            w_candidate: m.clone(),
            u_update: m.clone(),
            u_reset: m.clone(),
            u_candidate: m,
            b_update: v.clone(),
            b_reset: v.clone(),
            b_candidate: v,
        }
    }

    pub fn glorot<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Self {
        let mut cell = GruCell::zeros(size);
        for m in [
            &mut cell.w_update,
            &mut cell.w_reset,
            &mut cell.w_candidate,
            &mut cell.u_update,
            &mut cell.u_reset,
            &mut cell.u_candidate,
        ] {
            *m = glorot_uniform(size, size, rng);
        }
        cell
    }

    pub fn update(&self, hidden: &[f64], input: &[f64]) -> Result<Vec<f64>, ShapeError> {
        check_len(hidden.len(), self.size)?;
        check_len(input.len(), self.size)?;
        Ok(self.forward(hidden, input).out)
    }

    pub fn forward(&self, hidden: &[f64], input: &[f64]) -> GruCache {
        let b = Block::full(self.size, self.size);
        let gate = |w: &[f64], u: &[f64], bias: &[f64], h: &[f64]| {
            let mut a = bias.to_vec();
            matvec_acc(w, b, input, &mut a);
            matvec_acc(u, b, h, &mut a);
            a
        };
        let update: Vec<f64> = gate(&self.w_update, &self.u_update, &self.b_update, hidden)
            .into_iter()
            .map(sigmoid)
            .collect();
        let reset: Vec<f64> = gate(&self.w_reset, &self.u_reset, &self.b_reset, hidden)
            .into_iter()
            .map(sigmoid)
            .collect();
        let reset_hidden: Vec<f64> = reset.iter().zip(hidden).map(|(r, h)| r * h).collect();
        let candidate: Vec<f64> =
            gate(&self.w_candidate, &self.u_candidate, &self.b_candidate, &reset_hidden)
                .into_iter()
                .map(f64::tanh)
                .collect();
        let out = (0..self.size)
            .map(|i| (1.0 - update[i]) * candidate[i] + update[i] * hidden[i])
            .collect();
        GruCache {
            update,
            reset,
            candidate,
            reset_hidden,
            out,
        }
    }

    /// Accumulates parameter gradients into `grad`; returns
    /// `(dL/dhidden, dL/dinput)`.
    pub fn backward(
        &self,
        hidden: &[f64],
        input: &[f64],
        cache: &GruCache,
        d_out: &[f64],
        grad: &mut GruCell,
    ) -> (Vec<f64>, Vec<f64>) {
        let n = self.size;
        let b = Block::full(n, n);
        let mut d_hidden: Vec<f64> = (0..n).map(|i| d_out[i] * cache.update[i]).collect();
        let mut d_input = vec![0.0; n];

        let d_cand_pre: Vec<f64> = (0..n)
            .map(|i| {
                let c = cache.candidate[i];
                d_out[i] * (1.0 - cache.update[i]) * (1.0 - c * c)
            })
            .collect();
        let d_upd_pre: Vec<f64> = (0..n)
            .map(|i| {
                let z = cache.update[i];
                d_out[i] * (hidden[i] - cache.candidate[i]) * z * (1.0 - z)
            })
            .collect();

        outer_acc(&mut grad.w_candidate, b, &d_cand_pre, input);
        outer_acc(&mut grad.u_candidate, b, &d_cand_pre, &cache.reset_hidden);
        super::linalg::add_assign(&mut grad.b_candidate, &d_cand_pre);
        matvec_t_acc(&self.w_candidate, b, &d_cand_pre, &mut d_input);
        let mut d_reset_hidden = vec![0.0; n];
        matvec_t_acc(&self.u_candidate, b, &d_cand_pre, &mut d_reset_hidden);

        let d_rst_pre: Vec<f64> = (0..n)
            .map(|i| {
                let r = cache.reset[i];
                d_hidden[i] += d_reset_hidden[i] * r;
                d_reset_hidden[i] * hidden[i] * r * (1.0 - r)
            })
            .collect();

        for (d_pre, w, u, gw, gu, gb) in [
            (
                &d_upd_pre,
                &self.w_update,
                &self.u_update,
                &mut grad.w_update,
                &mut grad.u_update,
                &mut grad.b_update,
            ),
            (
                &d_rst_pre,
                &self.w_reset,
                &self.u_reset,
                &mut grad.w_reset,
                &mut grad.u_reset,
                &mut grad.b_reset,
            ),
        ] {
            outer_acc(gw, b, d_pre, input);
            outer_acc(gu, b, d_pre, hidden);
            super::linalg::add_assign(gb, d_pre);
            matvec_t_acc(w, b, d_pre, &mut d_input);
            matvec_t_acc(u, b, d_pre, &mut d_hidden);
        }
        (d_hidden, d_input)
    }
}

impl Parameters for GruCell {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        vec![
            ("w_update".into(), &self.w_update[..]),
            ("w_reset".into(), &self.w_reset[..]),
            ("w_candidate".into(), &self.w_candidate[..]),
            ("u_update".into(), &self.u_update[..]),
            ("u_reset".into(), &self.u_reset[..]),
            ("u_candidate".into(), &self.u_candidate[..]),
            ("b_update".into(), &self.b_update[..]),
            ("b_reset".into(), &self.b_reset[..]),
            ("b_candidate".into(), &self.b_candidate[..]),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            &mut self.w_update[..],
            &mut self.w_reset[..],
            &mut self.w_candidate[..],
            &mut self.u_update[..],
            &mut self.u_reset[..],
            &mut self.u_candidate[..],
            &mut self.b_update[..],
            &mut self.b_reset[..],
            &mut self.b_candidate[..],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{finite_diff_check, relative_error};
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cell(size: usize, seed: u64) -> GruCell {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cell = GruCell::glorot(size, &mut rng);
        for b in [&mut cell.b_update, &mut cell.b_reset, &mut cell.b_candidate] {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        cell
    }

    #[test]
    fn zero_parameters_halve_the_hidden_state() {
        let cell = GruCell::zeros(4);
        let h = [0.8, -0.4, 2.0, 0.0];
        let out = cell.update(&h, &[5.0, -3.0, 1.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.4, -0.2, 1.0, 0.0]);
    }

    #[test]
    fn shape_mismatch() {
        let cell = GruCell::zeros(3);
        assert!(cell.update(&[0.0; 3], &[0.0; 2]).is_err());
        assert!(cell.update(&[0.0; 4], &[0.0; 3]).is_err());
    }

    #[test]
    fn pure() {
        let cell = random_cell(5, 1);
        let h = [0.1, 0.2, -0.3, 0.4, 0.0];
        let x = [1.0, -1.0, 0.5, 0.25, 2.0];
        let a = cell.update(&h, &x).unwrap();
        let b = cell.update(&h, &x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn input_and_hidden_gradients() {
        let cell = random_cell(4, 2);
        let h = vec![0.3, -0.6, 0.2, 0.9];
        let x = vec![1.2, -0.4, 0.7, -1.5];
        let c = [0.5, -1.0, 2.0, 0.3];
        let loss = |h: &[f64], x: &[f64]| -> f64 {
            cell.forward(h, x).out.iter().zip(&c).map(|(o, c)| o * c).sum()
        };
        let cache = cell.forward(&h, &x);
        let mut g = cell.zeros_like();
        let (dh, dx) = cell.backward(&h, &x, &cache, &c, &mut g);
        let step = 1e-5;
        for i in 0..4 {
            let (mut hp, mut hm) = (h.clone(), h.clone());
            hp[i] += step;
            hm[i] -= step;
            let fd = (loss(&hp, &x) - loss(&hm, &x)) / (2.0 * step);
            assert!(relative_error(dh[i], fd) < 1e-5);
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += step;
            xm[i] -= step;
            let fd = (loss(&h, &xp) - loss(&h, &xm)) / (2.0 * step);
            assert!(relative_error(dx[i], fd) < 1e-5);
        }
    }

    #[test]
    fn parameter_gradients() {
        let cell = random_cell(4, 3);
        let h = vec![0.3, -0.6, 0.2, 0.9];
        let x = vec![1.2, -0.4, 0.7, -1.5];
        let c = [0.5, -1.0, 2.0, 0.3];
        let report = finite_diff_check(
            |p: &GruCell| {
                let cache = p.forward(&h, &x);
                let loss = cache.out.iter().zip(&c).map(|(o, c)| o * c).sum();
                let mut g = p.zeros_like();
                p.backward(&h, &x, &cache, &c, &mut g);
                (loss, g)
            },
            &cell,
            1e-5,
            1e-5,
        );
        assert!(report.passed(), "{report}");
    }

    proptest! {
        #[test]
        fn output_stays_in_open_unit_interval(
            seed in 0u64..1000,
            h in proptest::collection::vec(-0.999f64..0.999, 6),
            x in proptest::collection::vec(-10.0f64..10.0, 6),
        ) {
            let cell = random_cell(6, seed);
            for v in cell.update(&h, &x).unwrap() {
                prop_assert!(v > -1.0 && v < 1.0);
            }
        }
    }
}
