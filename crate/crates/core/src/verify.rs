//! Finite-difference checks of every hand-written gradient, runnable
//! outside the test harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::env::{Bandwidth, EnvState, Network, TrafficDemand};
use crate::exec::Execution;
use crate::gnn::{q_gradients, QNetworkParams, QSample};
use crate::nn::{finite_diff_check, Activation, DenseLayer, GradCheckReport, GruCell, Parameters};
use crate::topology::Topology;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

/// Hidden size and round count used for the full-model check.
pub const CHECK_HIDDEN: usize = 5;
pub const CHECK_STEPS: usize = 2;

fn randomize<P: Parameters, R: Rng>(p: &mut P, rng: &mut R) {
    for b in p.blocks_mut() {
        for v in b.iter_mut() {
            *v = rng.random_range(-0.6..0.6);
        }
    }
}

/// SELU dense layer under a fixed linear loss.
pub fn check_dense(tolerance: f64, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = DenseLayer::zeros(4, 3, Activation::Selu);
    randomize(&mut layer, &mut rng);
    let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    finite_diff_check(
        |p: &DenseLayer| {
            let cache = p.forward(&x);
            let loss = cache.out.iter().zip(&c).map(|(y, c)| y * c).sum();
            let mut g = p.zeros_like();
            p.backward(&x, &cache, &c, &mut g);
            (loss, g)
        },
        &layer,
        FD_STEP,
        tolerance,
    )
}

/// GRU cell under a fixed linear loss.
pub fn check_gru(tolerance: f64, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cell = GruCell::zeros(4);
    randomize(&mut cell, &mut rng);
    let h: Vec<f64> = (0..4).map(|_| rng.random_range(-0.9..0.9)).collect();
    let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
    let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    finite_diff_check(
        |p: &GruCell| {
            let cache = p.forward(&h, &x);
            let loss = cache.out.iter().zip(&c).map(|(o, c)| o * c).sum();
            let mut g = p.zeros_like();
            p.backward(&h, &x, &cache, &c, &mut g);
            (loss, g)
        },
        &cell,
        FD_STEP,
        tolerance,
    )
}

/// Squared error of the full q-network on a triangle with partly used links.
pub fn check_q_value(hidden: usize, steps: usize, tolerance: f64, seed: u64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::new(Topology::new("triangle", 3, [(0, 1), (1, 2), (2, 0)]), 4);
    let mut params = QNetworkParams::new(hidden, steps, &mut rng).expect("valid sizes");
    randomize(&mut params, &mut rng);
    let mut state = EnvState::fresh(3, 200.0, Arc::clone(&net.betweenness));
    for a in &mut state.available {
        *a -= 8.0 * rng.random_range(0..20) as f64;
    }
    let demand = TrafficDemand {
        src: 0,
        dst: 2,
        bandwidth: Bandwidth::Odu32,
    };
    let batch: Vec<QSample> = net
        .candidates(&demand)
        .iter()
        .map(|path| QSample {
            state: state.allocated_unchecked(path, 32.0),
            demand,
            action: path.clone(),
            target: rng.random_range(-2.0..2.0),
        })
        .collect();
    finite_diff_check(
        |p: &QNetworkParams| {
            let (g, loss) = q_gradients(p, &net.topology, &batch, Execution::Sequential).expect("valid batch");
            (loss, g)
        },
        &params,
        FD_STEP,
        tolerance,
    )
}

/// All three checks, labelled.
pub fn run_suite(tolerance: f64, seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    vec![
        ("dense", check_dense(tolerance, seed)),
        ("gru", check_gru(tolerance, seed)),
        ("q_value", check_q_value(CHECK_HIDDEN, CHECK_STEPS, tolerance, seed)),
    ]
}
