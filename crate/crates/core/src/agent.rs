//! DQN agent: epsilon-greedy selection over the candidate paths, a FIFO
//! experience replay buffer, Bellman targets, and the training loop.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvConfig, EnvError, EnvState, Episode, EpisodeSummary, Network, TrafficDemand};
use crate::exec::Execution;
use crate::gnn::{q_gradients, q_value, GnnError, QNetworkParams, QSample};
use crate::nn::{OptimizerState, Parameters};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("no candidate path for demand {src}->{dst}")]
    NoCandidates { src: usize, dst: usize },
    #[error("invalid agent config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    /// episodes run at `epsilon_start` before decay begins
    pub epsilon_hold_episodes: usize,
    pub epsilon_decay_rate: f64,
    /// episodes between decay ticks
    pub epsilon_decay_every: usize,
    pub epsilon_min: f64,
    /// episodes between replay rounds
    pub replay_period: usize,
    pub batches_per_replay: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// candidate paths per demand
    pub k: usize,
    pub training_episodes: usize,
    pub eval_period: usize,
    pub eval_episodes: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden: usize,
    pub steps: usize,
    /// Replay rounds between target-network refreshes. `0` computes targets
    /// with the online parameters.
    pub target_sync_period: usize,
    /// Rescale each batch gradient to at most this L2 norm; `0` disables.
    pub grad_clip_norm: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.95,
            epsilon_start: 1.0,
            epsilon_hold_episodes: 10,
            epsilon_decay_rate: 0.995,
            epsilon_decay_every: 2,
            epsilon_min: 0.01,
            replay_period: 2,
            batches_per_replay: 5,
            batch_size: 32,
            buffer_capacity: 5000,
            k: 4,
            training_episodes: 1000,
            eval_period: 100,
            eval_episodes: 50,
            learning_rate: 1e-4,
            momentum: 0.9,
            hidden: crate::gnn::DEFAULT_HIDDEN,
            steps: crate::gnn::DEFAULT_STEPS,
            target_sync_period: 0,
            grad_clip_norm: 1.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |msg: &str| Err(AgentError::Config(msg.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_min)
            || !(self.epsilon_min..=1.0).contains(&self.epsilon_start)
        {
            return fail("need 0 <= epsilon_min <= epsilon_start <= 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon_decay_rate) {
            return fail("epsilon_decay_rate must lie in [0, 1]");
        }
        if self.epsilon_decay_every == 0 || self.replay_period == 0 || self.eval_period == 0 {
            return fail("periods must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return fail("need 0 < batch_size <= buffer_capacity");
        }
        if self.k == 0 {
            return fail("k must be positive");
        }
        if self.learning_rate <= 0.0 || !(0.0..1.0).contains(&self.momentum) {
            return fail("need learning_rate > 0 and 0 <= momentum < 1");
        }
        if self.grad_clip_norm < 0.0 {
            return fail("grad_clip_norm must be non-negative");
        }
        Ok(())
    }
}

/// Exploration rate for a training episode: held at the start value, then
/// multiplied by the decay rate once every `epsilon_decay_every` episodes.
pub fn epsilon_at(episode: usize, cfg: &AgentConfig) -> f64 {
    if episode < cfg.epsilon_hold_episodes {
        return cfg.epsilon_start;
    }
    let ticks = (episode - cfg.epsilon_hold_episodes) / cfg.epsilon_decay_every;
    let decayed = cfg.epsilon_start * cfg.epsilon_decay_rate.powi(ticks.min(i32::MAX as usize) as i32);
    decayed.max(cfg.epsilon_min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: EnvState,
    pub demand: TrafficDemand,
    pub action_rank: usize,
    pub reward: f64,
    pub next_state: EnvState,
    pub next_demand: Option<TrafficDemand>,
    pub done: bool,
}

/// Bounded FIFO; the oldest transition is evicted first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

/// Q-value of each candidate path, scored on the state after tentatively
/// placing the demand on that path. Capacities are not checked here; the
/// network sees the attempted allocation through its features.
pub fn evaluate_actions(
    params: &QNetworkParams,
    network: &Network,
    state: &EnvState,
    demand: &TrafficDemand,
    exec: Execution,
) -> Result<Vec<f64>, AgentError> {
    let candidates = network.candidates(demand);
    if candidates.is_empty() {
        return Err(AgentError::NoCandidates {
            src: demand.src,
            dst: demand.dst,
        });
    }
    let bw = demand.bandwidth.units();
    exec.map(candidates, |path| {
        let after = state.allocated_unchecked(path, bw);
        q_value(params, &network.topology, &after, demand, path)
    })
    .into_iter()
    .map(|q| q.map_err(AgentError::from))
    .collect()
}

/// Lowest index among the maximal values.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// With probability `epsilon` a uniformly random rank, otherwise the argmax.
pub fn select_action<R: Rng + ?Sized>(q_values: &[f64], epsilon: f64, rng: &mut R) -> usize {
    assert!(!q_values.is_empty(), "no actions to select from");
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q_values.len())
    } else {
        argmax(q_values)
    }
}

/// `r` for terminal transitions, `r + gamma * max_a' Q(s', a')` otherwise.
pub fn bellman_target(
    tr: &Transition,
    network: &Network,
    params: &QNetworkParams,
    gamma: f64,
    exec: Execution,
) -> Result<f64, AgentError> {
    match (tr.done, &tr.next_demand) {
        (false, Some(next)) => {
            let qs = evaluate_actions(params, network, &tr.next_state, next, exec)?;
            let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(tr.reward + gamma * best)
        }
        _ => Ok(tr.reward),
    }
}

/// Runs `cfg.batches_per_replay` minibatch updates. Returns the mean batch
/// loss, or `None` when the buffer holds fewer than `cfg.batch_size`
/// transitions.
#[allow(clippy::too_many_arguments)]
pub fn replay_train<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    params: &mut QNetworkParams,
    opt: &mut OptimizerState<QNetworkParams>,
    target_params: Option<&QNetworkParams>,
    network: &Network,
    cfg: &AgentConfig,
    rng: &mut R,
    exec: Execution,
) -> Result<Option<f64>, AgentError> {
    if buffer.len() < cfg.batch_size {
        log::debug!(
            "replay skipped: {} transitions buffered, batch size {}",
            buffer.len(),
            cfg.batch_size
        );
        return Ok(None);
    }
    let mut loss_sum = 0.0;
    for _ in 0..cfg.batches_per_replay {
        let batch = buffer.sample(cfg.batch_size, rng);
        let target_net = target_params.unwrap_or(params);
        let samples: Vec<Result<QSample, AgentError>> = exec.map(&batch, |tr| {
            let target = bellman_target(tr, network, target_net, cfg.gamma, Execution::Sequential)?;
            let path = network
                .candidates(&tr.demand)
                .get(tr.action_rank)
                .ok_or(AgentError::NoCandidates {
                    src: tr.demand.src,
                    dst: tr.demand.dst,
                })?;
            Ok(QSample {
                state: tr.state.allocated_unchecked(path, tr.demand.bandwidth.units()),
                demand: tr.demand,
                action: path.clone(),
                target,
            })
        });
        let samples = samples.into_iter().collect::<Result<Vec<_>, _>>()?;
        let (mut grads, loss) = q_gradients(params, &network.topology, &samples, exec)?;
        if cfg.grad_clip_norm > 0.0 {
            let norm = grads.l2_norm();
            if norm > cfg.grad_clip_norm {
                grads.scale(cfg.grad_clip_norm / norm);
            }
        }
        opt.step(params, &grads);
        loss_sum += loss;
    }
    Ok(Some(loss_sum / cfg.batches_per_replay as f64))
}

/// Plays one episode choosing the highest-q candidate at every step.
pub fn greedy_episode(
    params: &QNetworkParams,
    network: &Network,
    env_config: &EnvConfig,
    demand_seed: u64,
    exec: Execution,
) -> Result<EpisodeSummary, AgentError> {
    let mut episode = Episode::new(network, env_config, demand_seed);
    while !episode.is_done() {
        let qs = evaluate_actions(params, network, episode.state(), episode.demand(), exec)?;
        episode.step(argmax(&qs))?;
    }
    Ok(episode.into_summary())
}

/// Mean greedy score over `episodes` demand seeds derived from
/// `(seed, experiment)`. Episodes run through `exec`.
pub fn greedy_sweep(
    params: &QNetworkParams,
    network: &Network,
    env_config: &EnvConfig,
    seed: u64,
    experiment: &str,
    episodes: usize,
    exec: Execution,
) -> Result<f64, AgentError> {
    let scores = exec.map_range(episodes, |i| {
        greedy_episode(
            params,
            network,
            env_config,
            derive_seed(seed, experiment, i as u64),
            Execution::Sequential,
        )
        .map(|s| s.score)
    });
    let mut total = 0.0;
    for s in scores {
        total += s?;
    }
    Ok(total / episodes.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRow {
    pub episode: usize,
    pub epsilon: f64,
    pub score: f64,
    /// mean replay loss, when a replay ran after this episode
    pub loss: Option<f64>,
    /// mean greedy evaluation score, when an evaluation sweep ran
    pub eval_mean: Option<f64>,
}

pub fn write_training_log<W: std::io::Write>(rows: &[TrainingLogRow], writer: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["episode", "epsilon", "episode_score", "loss_mean", "eval_mean"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        out.write_record([
            r.episode.to_string(),
            format!("{:.6}", r.epsilon),
            format!("{}", r.score),
            opt(r.loss),
            opt(r.eval_mean),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestCheckpoint {
    pub episode: usize,
    pub eval_mean: f64,
    pub params: QNetworkParams,
}

/// Complete training state at an episode boundary. Serializable, so a run
/// can be stopped after any episode and resumed with identical results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerState {
    pub seed: u64,
    pub config: AgentConfig,
    pub env_config: EnvConfig,
    pub next_episode: usize,
    pub params: QNetworkParams,
    pub optimizer: OptimizerState<QNetworkParams>,
    pub target: Option<QNetworkParams>,
    pub replays_done: usize,
    pub buffer: ReplayBuffer,
    pub rng: ChaCha8Rng,
    pub best: Option<BestCheckpoint>,
    pub log: Vec<TrainingLogRow>,
}

impl TrainerState {
    pub fn new(config: AgentConfig, env_config: EnvConfig, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init", 0));
        let params = QNetworkParams::new(config.hidden, config.steps, &mut init_rng)?;
        let optimizer = OptimizerState::new(config.learning_rate, config.momentum, &params);
        let target = (config.target_sync_period > 0).then(|| params.clone());
        Ok(TrainerState {
            seed,
            next_episode: 0,
            optimizer,
            target,
            replays_done: 0,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "agent", 0)),
            best: None,
            log: Vec::new(),
            params,
            config,
            env_config,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.next_episode >= self.config.training_episodes
    }

    /// The best evaluated parameters, or the current ones when no
    /// evaluation has run yet.
    pub fn best_params(&self) -> &QNetworkParams {
        self.best.as_ref().map(|b| &b.params).unwrap_or(&self.params)
    }

    /// Runs one training episode plus any replay and evaluation due after it.
    pub fn run_episode(&mut self, network: &Network, exec: Execution) -> Result<&TrainingLogRow, AgentError> {
        let ep = self.next_episode;
        let cfg = &self.config;
        let epsilon = epsilon_at(ep, cfg);
        let mut episode = Episode::new(network, &self.env_config, derive_seed(self.seed, "train", ep as u64));
        while !episode.is_done() {
            let state = episode.state().clone();
            let demand = *episode.demand();
            let qs = evaluate_actions(&self.params, network, &state, &demand, exec)?;
            let action = select_action(&qs, epsilon, &mut self.rng);
            let outcome = episode.step(action)?;
            self.buffer.push(Transition {
                state,
                demand,
                action_rank: action,
                reward: outcome.reward,
                next_state: outcome.next_state,
                next_demand: outcome.next_demand,
                done: outcome.done,
            });
        }

        let mut loss = None;
        if (ep + 1) % cfg.replay_period == 0 {
            loss = replay_train(
                &self.buffer,
                &mut self.params,
                &mut self.optimizer,
                self.target.as_ref(),
                network,
                &self.config,
                &mut self.rng,
                exec,
            )?;
            if loss.is_some() {
                self.replays_done += 1;
                let period = self.config.target_sync_period;
                if period > 0 && self.replays_done % period == 0 {
                    self.target = Some(self.params.clone());
                }
            }
        }

        let mut eval_mean = None;
        if (ep + 1) % self.config.eval_period == 0 {
            let mean = greedy_sweep(
                &self.params,
                network,
                &self.env_config,
                self.seed,
                "train-eval",
                self.config.eval_episodes,
                exec,
            )?;
            eval_mean = Some(mean);
            if self.best.as_ref().is_none_or(|b| mean > b.eval_mean) {
                self.best = Some(BestCheckpoint {
                    episode: ep,
                    eval_mean: mean,
                    params: self.params.clone(),
                });
            }
        }

        self.log.push(TrainingLogRow {
            episode: ep,
            epsilon,
            score: episode.score(),
            loss,
            eval_mean,
        });
        self.next_episode += 1;
        Ok(self.log.last().expect("row just pushed"))
    }
}

pub struct TrainOutcome {
    pub best: QNetworkParams,
    pub best_episode: Option<usize>,
    pub best_eval_mean: Option<f64>,
    pub final_params: QNetworkParams,
    pub log: Vec<TrainingLogRow>,
}

/// Runs the remaining episodes of `state`.
pub fn train(state: &mut TrainerState, network: &Network, exec: Execution) -> Result<(), AgentError> {
    while !state.is_finished() {
        state.run_episode(network, exec)?;
    }
    Ok(())
}

/// Fresh training run from `seed` to completion.
pub fn train_from_scratch(
    network: &Network,
    config: AgentConfig,
    env_config: EnvConfig,
    seed: u64,
    exec: Execution,
) -> Result<TrainOutcome, AgentError> {
    let mut state = TrainerState::new(config, env_config, seed)?;
    train(&mut state, network, exec)?;
    Ok(state.into_outcome())
}

impl TrainerState {
    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            best: self.best.as_ref().map(|b| b.params.clone()).unwrap_or_else(|| self.params.clone()),
            best_episode: self.best.as_ref().map(|b| b.episode),
            best_eval_mean: self.best.as_ref().map(|b| b.eval_mean),
            final_params: self.params,
            log: self.log,
        }
    }
}
