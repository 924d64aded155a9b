//! Graph generators and brute-force oracles shared by the integration tests.

#![allow(dead_code)]

use gnnroute::topology::Topology;
use rand::seq::SliceRandom;
use rand::Rng;

/// Connected graph on `n` nodes: a random spanning tree plus `extra` random
/// chords (duplicates are dropped by the topology constructor).
pub fn random_connected<R: Rng>(n: usize, extra: usize, rng: &mut R) -> Topology {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 1..n {
        let parent = order[rng.random_range(0..i)];
        edges.push((parent, order[i]));
    }
    for _ in 0..extra {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.push((a, b));
        }
    }
    let topo = Topology::new("random", n, edges);
    assert!(topo.is_connected());
    topo
}

pub fn ring(n: usize) -> Topology {
    Topology::new(format!("ring{n}"), n, (0..n).map(|i| (i, (i + 1) % n)))
}

pub fn star(n: usize) -> Topology {
    Topology::new(format!("star{n}"), n, (1..n).map(|i| (0, i)))
}

/// Every simple path from `src` to `dst`, sorted by hop count and then by
/// node sequence.
pub fn all_simple_paths(topo: &Topology, src: usize, dst: usize) -> Vec<Vec<usize>> {
    fn dfs(topo: &Topology, cur: usize, dst: usize, path: &mut Vec<usize>, seen: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur == dst {
            out.push(path.clone());
            return;
        }
        for &(v, _) in topo.neighbors(cur) {
            if !seen[v] {
                seen[v] = true;
                path.push(v);
                dfs(topo, v, dst, path, seen, out);
                path.pop();
                seen[v] = false;
            }
        }
    }
    let mut seen = vec![false; topo.num_nodes()];
    seen[src] = true;
    let mut out = Vec::new();
    dfs(topo, src, dst, &mut vec![src], &mut seen, &mut out);
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

/// Uniform random permutation of `0..n`.
pub fn permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

use gnnroute::env::{Bandwidth, EnvState, Network, TrafficDemand};
use gnnroute::gnn::{q_value, QNetworkParams};
use gnnroute::paths::CandidatePath;
use std::sync::Arc;

/// Relative difference between q on a random state of `topo` and q on the
/// same state after relabeling nodes and reordering links at random.
pub fn permuted_q_gap<R: Rng>(topo: &Topology, params: &QNetworkParams, rng: &mut R) -> f64 {
    let net = Network::new(topo.clone(), 4);
    let l = topo.num_links();
    let mut state = EnvState::fresh(l, 200.0, Arc::clone(&net.betweenness));
    for a in &mut state.available {
        *a = 8.0 * rng.random_range(0..=25) as f64;
    }
    let n = topo.num_nodes();
    let src = rng.random_range(0..n);
    let dst = (src + rng.random_range(1..n)) % n;
    let bandwidth = Bandwidth::ALL[rng.random_range(0..3)];
    let demand = TrafficDemand { src, dst, bandwidth };
    let candidates = net.paths.paths(src, dst);
    let action = &candidates[rng.random_range(0..candidates.len())];
    let q = q_value(params, topo, &state, &demand, action).unwrap();

    let perm = permutation(n, rng);
    let link_order = permutation(l, rng);
    let moved = topo.relabeled(&perm, &link_order);
    let moved_state = EnvState {
        available: link_order.iter().map(|&old| state.available[old]).collect(),
        max_capacity: link_order.iter().map(|&old| state.max_capacity[old]).collect(),
        betweenness: Arc::new(link_order.iter().map(|&old| net.betweenness[old]).collect()),
    };
    let moved_demand = TrafficDemand {
        src: perm[src],
        dst: perm[dst],
        bandwidth,
    };
    let moved_action = CandidatePath::from_nodes(&moved, action.nodes().iter().map(|&u| perm[u]).collect());
    let q_moved = q_value(params, &moved, &moved_state, &moved_demand, &moved_action).unwrap();
    (q - q_moved).abs() / (q.abs() + 1e-12)
}
