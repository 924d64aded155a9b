use std::fmt;

use super::Parameters;

/// Gradient magnitudes below this are compared on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance && self.blocks.iter().all(|b| b.max_rel_error.is_finite())
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            writeln!(
                f,
                "  {:<28} n={:<5} max_rel={:.3e} max_abs={:.3e}",
                b.name, b.entries, b.max_rel_error, b.max_abs_error
            )?;
        }
        write!(
            f,
            "  max relative error {:.3e} (tolerance {:.0e}): {}",
            self.max_rel_error(),
            self.tolerance,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

/// Compares the gradient returned by `loss_and_grad` at `params` against
/// central differences with step `step`, entry by entry.
pub fn finite_diff_check<P, F>(loss_and_grad: F, params: &P, step: f64, tolerance: f64) -> GradCheckReport
where
    P: Parameters,
    F: Fn(&P) -> (f64, P),
{
    let (_, analytic) = loss_and_grad(params);
    let analytic: Vec<(String, Vec<f64>)> = analytic
        .blocks()
        .into_iter()
        .map(|(n, b)| (n, b.to_vec()))
        .collect();
    let mut probe = params.clone();
    let mut blocks = Vec::with_capacity(analytic.len());
    for (block_idx, (name, grad)) in analytic.iter().enumerate() {
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for (i, &a) in grad.iter().enumerate() {
            let original = probe.blocks_mut()[block_idx][i];
            probe.blocks_mut()[block_idx][i] = original + step;
            let plus = loss_and_grad(&probe).0;
            probe.blocks_mut()[block_idx][i] = original - step;
            let minus = loss_and_grad(&probe).0;
            probe.blocks_mut()[block_idx][i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let rel = relative_error(a, numeric);
            max_rel = if rel.is_nan() { f64::NAN } else { max_rel.max(rel) };
            max_abs = max_abs.max((a - numeric).abs());
        }
        blocks.push(BlockCheck {
            name: name.clone(),
            entries: grad.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    GradCheckReport { blocks, tolerance }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer};

    #[test]
    fn constant_loss_passes() {
        let layer = DenseLayer::zeros(3, 2, Activation::Selu);
        let report = finite_diff_check(|p: &DenseLayer| (4.2, p.zeros_like()), &layer, 1e-5, 1e-4);
        assert!(report.passed());
        assert_eq!(report.max_rel_error(), 0.0);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut layer = DenseLayer::zeros(2, 1, Activation::Linear);
        layer.weights = vec![0.5, -0.25];
        let x = [1.0, 2.0];
        let report = finite_diff_check(
            |p: &DenseLayer| {
                let cache = p.forward(&x);
                let mut g = p.zeros_like();
                p.backward(&x, &cache, &[1.0], &mut g);
                g.weights[1] *= 1.01;
                (cache.out[0], g)
            },
            &layer,
            1e-5,
            1e-4,
        );
        assert!(!report.passed());
        assert!(report.blocks[0].max_rel_error > 1e-3);
        assert!(report.blocks[1].max_rel_error < 1e-8);
    }
}
