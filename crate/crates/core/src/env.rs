//! The demand-allocation MDP: per-link capacities, random demand arrivals,
//! and the episode that ends at the first demand that does not fit.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paths::{link_betweenness, CandidatePath, PathTable};
use crate::topology::Topology;

pub const DEFAULT_LINK_CAPACITY: f64 = 200.0;

/// Demand sizes in ODU0 units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bandwidth {
    Odu8,
    Odu32,
    Odu64,
}

impl Bandwidth {
    pub const ALL: [Bandwidth; 3] = [Bandwidth::Odu8, Bandwidth::Odu32, Bandwidth::Odu64];

    pub fn units(self) -> f64 {
        match self {
            Bandwidth::Odu8 => 8.0,
            Bandwidth::Odu32 => 32.0,
            Bandwidth::Odu64 => 64.0,
        }
    }

    /// Slot of this size in the one-hot action encoding.
    pub fn class_index(self) -> usize {
        match self {
            Bandwidth::Odu8 => 0,
            Bandwidth::Odu32 => 1,
            Bandwidth::Odu64 => 2,
        }
    }

    pub fn from_units(units: u32) -> Option<Self> {
        match units {
            8 => Some(Bandwidth::Odu8),
            32 => Some(Bandwidth::Odu32),
            64 => Some(Bandwidth::Odu64),
            _ => None,
        }
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.units())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrafficDemand {
    pub src: usize,
    pub dst: usize,
    pub bandwidth: Bandwidth,
}

/// Draws an ordered pair uniformly among `src != dst` and a size uniformly
/// from `sizes`.
pub fn generate_demand<R: Rng + ?Sized>(
    num_nodes: usize,
    sizes: &[Bandwidth],
    rng: &mut R,
) -> TrafficDemand {
    assert!(num_nodes >= 2, "need two nodes to draw a demand");
    let src = rng.random_range(0..num_nodes);
    let mut dst = rng.random_range(0..num_nodes - 1);
    if dst >= src {
        dst += 1;
    }
    let bandwidth = sizes[rng.random_range(0..sizes.len())];
    TrafficDemand { src, dst, bandwidth }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub link_capacity: f64,
    pub demand_sizes: Vec<Bandwidth>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            link_capacity: DEFAULT_LINK_CAPACITY,
            demand_sizes: Bandwidth::ALL.to_vec(),
        }
    }
}

/// Per-link capacities plus the static betweenness feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub available: Vec<f64>,
    pub max_capacity: Vec<f64>,
    pub betweenness: Arc<Vec<f64>>,
}

/// The first link on the path that could not carry the demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationFailure {
    pub link: usize,
}

impl EnvState {
    pub fn fresh(num_links: usize, capacity: f64, betweenness: Arc<Vec<f64>>) -> Self {
        assert_eq!(betweenness.len(), num_links);
        EnvState {
            available: vec![capacity; num_links],
            max_capacity: vec![capacity; num_links],
            betweenness,
        }
    }

    pub fn num_links(&self) -> usize {
        self.available.len()
    }

    /// Subtracts `bw` from every path link if all of them can carry it.
    pub fn try_allocate(&self, path: &CandidatePath, bw: f64) -> Result<EnvState, AllocationFailure> {
        if let Some(&link) = path.links().iter().find(|&&l| self.available[l] < bw) {
            return Err(AllocationFailure { link });
        }
        Ok(self.allocated_unchecked(path, bw))
    }

    /// Tentative allocation used to score an action; capacities may go
    /// negative.
    pub fn allocated_unchecked(&self, path: &CandidatePath, bw: f64) -> EnvState {
        let mut next = self.clone();
        for &l in path.links() {
            next.available[l] -= bw;
        }
        next
    }

    pub fn total_available(&self) -> f64 {
        self.available.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub next_state: EnvState,
    /// `None` once the episode is over.
    pub next_demand: Option<TrafficDemand>,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("path {path_src}->{path_dst} does not serve demand {demand_src}->{demand_dst}")]
    EndpointMismatch {
        path_src: usize,
        path_dst: usize,
        demand_src: usize,
        demand_dst: usize,
    },
    #[error("no candidate path for {src}->{dst}")]
    NoCandidatePath { src: usize, dst: usize },
    #[error("action {action_rank} out of range for {candidates} candidate paths")]
    ActionOutOfRange { action_rank: usize, candidates: usize },
    #[error("episode already finished")]
    Finished,
}

/// One step of the episode log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub demand: TrafficDemand,
    /// `None` for policies that split a demand over several paths.
    pub action_rank: Option<usize>,
    pub success: bool,
}

pub fn write_episode_log<W: Write>(records: &[StepRecord], writer: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["step", "src", "dst", "bw", "action_rank", "success"])?;
    for r in records {
        out.write_record([
            r.step.to_string(),
            r.demand.src.to_string(),
            r.demand.dst.to_string(),
            r.demand.bandwidth.to_string(),
            r.action_rank.map(|a| a.to_string()).unwrap_or_default(),
            u8::from(r.success).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Pure transition: allocates `demand` on `path` or ends the episode.
/// `next_demand` is drawn only on success.
pub fn step<R: Rng + ?Sized>(
    state: &EnvState,
    demand: &TrafficDemand,
    path: &CandidatePath,
    num_nodes: usize,
    sizes: &[Bandwidth],
    rng: &mut R,
) -> Result<StepOutcome, EnvError> {
    if path.src() != demand.src || path.dst() != demand.dst {
        return Err(EnvError::EndpointMismatch {
            path_src: path.src(),
            path_dst: path.dst(),
            demand_src: demand.src,
            demand_dst: demand.dst,
        });
    }
    Ok(match state.try_allocate(path, demand.bandwidth.units()) {
        Ok(next_state) => StepOutcome {
            reward: demand.bandwidth.units(),
            done: false,
            next_state,
            next_demand: Some(generate_demand(num_nodes, sizes, rng)),
        },
        Err(_) => StepOutcome {
            reward: 0.0,
            done: true,
            next_state: state.clone(),
            next_demand: None,
        },
    })
}

/// Score and step log of a finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub score: f64,
    pub log: Vec<StepRecord>,
}

impl EpisodeSummary {
    /// Demands in arrival order, including the one that ended the episode.
    pub fn demands(&self) -> Vec<TrafficDemand> {
        self.log.iter().map(|r| r.demand).collect()
    }
}

/// Static per-topology context shared by every episode on it.
#[derive(Debug, Clone)]
pub struct Network {
    pub topology: Topology,
    pub paths: PathTable,
    pub betweenness: Arc<Vec<f64>>,
}

impl Network {
    pub fn new(topology: Topology, k: usize) -> Self {
        let paths = crate::paths::build_path_table(&topology, k);
        let betweenness = Arc::new(link_betweenness(&topology, &paths));
        Network {
            topology,
            paths,
            betweenness,
        }
    }

    pub fn candidates(&self, demand: &TrafficDemand) -> &[CandidatePath] {
        self.paths.paths(demand.src, demand.dst)
    }
}

/// A live episode. The demand stream depends only on the seed, so every
/// policy run with the same seed sees the same demand sequence.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    network: &'a Network,
    config: &'a EnvConfig,
    state: EnvState,
    demand: TrafficDemand,
    demand_rng: ChaCha8Rng,
    done: bool,
    score: f64,
    log: Vec<StepRecord>,
}

impl<'a> Episode<'a> {
    /// All links at full capacity and the first demand drawn.
    pub fn new(network: &'a Network, config: &'a EnvConfig, demand_seed: u64) -> Self {
        let mut demand_rng = ChaCha8Rng::seed_from_u64(demand_seed);
        let state = EnvState::fresh(
            network.topology.num_links(),
            config.link_capacity,
            Arc::clone(&network.betweenness),
        );
        let demand = generate_demand(
            network.topology.num_nodes(),
            &config.demand_sizes,
            &mut demand_rng,
        );
        Episode {
            network,
            config,
            state,
            demand,
            demand_rng,
            done: false,
            score: 0.0,
            log: Vec::new(),
        }
    }

    pub fn network(&self) -> &'a Network {
        self.network
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn demand(&self) -> &TrafficDemand {
        &self.demand
    }

    pub fn candidates(&self) -> &'a [CandidatePath] {
        self.network.candidates(&self.demand)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    pub fn into_summary(self) -> EpisodeSummary {
        EpisodeSummary {
            score: self.score,
            log: self.log,
        }
    }

    /// Routes the current demand on candidate `action_rank`.
    pub fn step(&mut self, action_rank: usize) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::Finished);
        }
        let candidates = self.candidates();
        if candidates.is_empty() {
            return Err(EnvError::NoCandidatePath {
                src: self.demand.src,
                dst: self.demand.dst,
            });
        }
        let path = candidates.get(action_rank).ok_or(EnvError::ActionOutOfRange {
            action_rank,
            candidates: candidates.len(),
        })?;
        let outcome = step(
            &self.state,
            &self.demand,
            path,
            self.network.topology.num_nodes(),
            &self.config.demand_sizes,
            &mut self.demand_rng,
        )?;
        self.log.push(StepRecord {
            step: self.log.len(),
            demand: self.demand,
            action_rank: Some(action_rank),
            success: !outcome.done,
        });
        self.score += outcome.reward;
        self.done = outcome.done;
        self.state = outcome.next_state.clone();
        if let Some(next) = outcome.next_demand {
            self.demand = next;
        }
        Ok(outcome)
    }
}
