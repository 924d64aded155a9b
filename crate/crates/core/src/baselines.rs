//! Reference policies: load balancing (uniformly random candidate) and the
//! fluid model that splits each demand over all candidates in proportion to
//! their free capacity.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{argmax, evaluate_actions, AgentError};
use crate::env::{generate_demand, EnvConfig, EnvError, Episode, EpisodeSummary, Network, StepRecord, TrafficDemand};
use crate::exec::Execution;
use crate::gnn::QNetworkParams;
use crate::paths::CandidatePath;
use crate::seed::derive_seed;

/// Slack below zero tolerated before a fluid allocation counts as overdrawn.
pub const FLUID_TOLERANCE: f64 = 1e-9;

/// Uniformly random rank among `paths`.
pub fn lb_select<R: Rng + ?Sized>(paths: &[CandidatePath], rng: &mut R) -> usize {
    assert!(!paths.is_empty(), "no candidate paths");
    rng.random_range(0..paths.len())
}

/// Real-valued per-link free capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub available: Vec<f64>,
}

impl FluidState {
    pub fn fresh(num_links: usize, capacity: f64) -> Self {
        FluidState {
            available: vec![capacity; num_links],
        }
    }

    fn path_capacity(&self, path: &CandidatePath) -> f64 {
        path.links()
            .iter()
            .map(|&l| self.available[l])
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidOutcome {
    pub reward: f64,
    pub done: bool,
    pub state: FluidState,
    /// Bandwidth placed on each candidate path, in candidate order. Empty
    /// when the demand was rejected.
    pub shares: Vec<f64>,
}

/// Splits `demand` over `paths` proportionally to each path's bottleneck
/// capacity. Shares on links common to several paths add up. The demand is
/// rejected, and the episode ends, when no path has capacity or when any
/// link would be overdrawn.
pub fn fluid_step(state: &FluidState, demand: &TrafficDemand, paths: &[CandidatePath]) -> FluidOutcome {
    assert!(!paths.is_empty(), "no candidate paths");
    let rejected = || FluidOutcome {
        reward: 0.0,
        done: true,
        state: state.clone(),
        shares: Vec::new(),
    };
    let caps: Vec<f64> = paths.iter().map(|p| state.path_capacity(p).max(0.0)).collect();
    let total: f64 = caps.iter().sum();
    if total <= 0.0 {
        return rejected();
    }
    let bw = demand.bandwidth.units();
    let shares: Vec<f64> = caps.iter().map(|c| bw * c / total).collect();
    let mut next = state.clone();
    for (path, &share) in paths.iter().zip(&shares) {
        for &l in path.links() {
            next.available[l] -= share;
        }
    }
    if next.available.iter().any(|&a| a < -FLUID_TOLERANCE) {
        return rejected();
    }
    for a in &mut next.available {
        *a = a.max(0.0);
    }
    FluidOutcome {
        reward: bw,
        done: false,
        state: next,
        shares,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Gnn,
    Lb,
    Fluid,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Gnn, PolicyKind::Lb, PolicyKind::Fluid];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Gnn => "gnn",
            PolicyKind::Lb => "lb",
            PolicyKind::Fluid => "fluid",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gnn" | "drl" => Ok(PolicyKind::Gnn),
            "lb" => Ok(PolicyKind::Lb),
            "fluid" => Ok(PolicyKind::Fluid),
            other => Err(format!("unknown policy '{other}' (expected gnn, lb or fluid)")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    Gnn(&'a QNetworkParams),
    Lb,
    Fluid,
}

impl Policy<'_> {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Gnn(_) => PolicyKind::Gnn,
            Policy::Lb => PolicyKind::Lb,
            Policy::Fluid => PolicyKind::Fluid,
        }
    }
}

/// Plays one episode of `policy` on the demand stream of `demand_seed`.
/// Every policy sees the same demands for the same seed. The LB coin flips
/// come from a separate stream derived from the seed.
pub fn run_policy_episode(
    policy: Policy<'_>,
    network: &Network,
    env_config: &EnvConfig,
    demand_seed: u64,
    exec: Execution,
) -> Result<EpisodeSummary, AgentError> {
    match policy {
        Policy::Gnn(params) => crate::agent::greedy_episode(params, network, env_config, demand_seed, exec),
        Policy::Lb => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(demand_seed, "lb", 0));
            let mut episode = Episode::new(network, env_config, demand_seed);
            while !episode.is_done() {
                let candidates = episode.candidates();
                if candidates.is_empty() {
                    return Err(no_path(episode.demand()));
                }
                let rank = lb_select(candidates, &mut rng);
                episode.step(rank)?;
            }
            Ok(episode.into_summary())
        }
        Policy::Fluid => run_fluid_episode(network, env_config, demand_seed),
    }
}

fn no_path(demand: &TrafficDemand) -> AgentError {
    AgentError::Env(EnvError::NoCandidatePath {
        src: demand.src,
        dst: demand.dst,
    })
}

fn run_fluid_episode(network: &Network, env_config: &EnvConfig, demand_seed: u64) -> Result<EpisodeSummary, AgentError> {
    let topo = &network.topology;
    let mut rng = ChaCha8Rng::seed_from_u64(demand_seed);
    let mut state = FluidState::fresh(topo.num_links(), env_config.link_capacity);
    let mut demand = generate_demand(topo.num_nodes(), &env_config.demand_sizes, &mut rng);
    let mut score = 0.0;
    let mut log = Vec::new();
    loop {
        let candidates = network.candidates(&demand);
        if candidates.is_empty() {
            return Err(no_path(&demand));
        }
        let out = fluid_step(&state, &demand, candidates);
        log.push(StepRecord {
            step: log.len(),
            demand,
            action_rank: None,
            success: !out.done,
        });
        score += out.reward;
        if out.done {
            return Ok(EpisodeSummary { score, log });
        }
        state = out.state;
        // Same draw order as `env::step`: the next demand is drawn only
        // after a successful allocation.
        demand = generate_demand(topo.num_nodes(), &env_config.demand_sizes, &mut rng);
    }
}

/// Greedy GNN choice for one demand; exposed for tools that step episodes
/// themselves.
pub fn gnn_select(
    params: &QNetworkParams,
    episode: &Episode<'_>,
    exec: Execution,
) -> Result<usize, AgentError> {
    let qs = evaluate_actions(params, episode.network(), episode.state(), episode.demand(), exec)?;
    Ok(argmax(&qs))
}
