//! Experiment orchestration behind the command-line tool: configuration
//! resolution, paired policy evaluation, and the CSV outputs of each command.
//!
//! Every command writes its resolved configuration to `config.toml` in the
//! output directory. All outputs except `run_metadata.txt` are a pure
//! function of that configuration.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{epsilon_at, write_training_log, AgentConfig, AgentError, TrainerState};
use crate::baselines::{run_policy_episode, Policy, PolicyKind};
use crate::env::{Bandwidth, EnvConfig, EpisodeSummary, Network};
use crate::exec::Execution;
use crate::gnn::QNetworkParams;
use crate::nn::checkpoint::write_atomic;
use crate::nn::{Checkpoint, CheckpointError};
use crate::seed::derive_seed;
use crate::topology::{
    evaluate_filter, geant2, load_topology, nsfnet, remove_random_links, FilterCriteria, FilterDecision,
    Topology, TopologyError, TopologyFormat,
};
use crate::verify;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Experiment id of the paired evaluation demand streams. Link-failure
/// level 0 reuses it, so its scores equal those of `eval`.
pub const EVAL_EXPERIMENT: &str = "episode";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Verification(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Data(_) => 2,
            HarnessError::Verification(_) => 3,
        }
    }
}

impl From<TopologyError> for HarnessError {
    fn from(e: TopologyError) -> Self {
        HarnessError::Data(e.to_string())
    }
}

impl From<CheckpointError> for HarnessError {
    fn from(e: CheckpointError) -> Self {
        HarnessError::Data(format!("checkpoint: {e}"))
    }
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Config(msg) => HarnessError::Usage(msg),
            other => HarnessError::Data(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Data(format!("{}: {e}", path.display()))
}

/// Where the topology of a command comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TopologySource {
    Nsfnet,
    Geant2,
    File(PathBuf),
}

impl TopologySource {
    fn parse(s: &str) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "nsfnet" => TopologySource::Nsfnet,
            "geant2" => TopologySource::Geant2,
            _ => TopologySource::File(PathBuf::from(s)),
        }
    }

    fn as_config_value(&self) -> String {
        match self {
            TopologySource::Nsfnet => "nsfnet".into(),
            TopologySource::Geant2 => "geant2".into(),
            TopologySource::File(p) => p.display().to_string(),
        }
    }

    pub fn load(&self) -> Result<Topology, HarnessError> {
        Ok(match self {
            TopologySource::Nsfnet => nsfnet(),
            TopologySource::Geant2 => geant2(),
            TopologySource::File(p) => load_topology(p, TopologyFormat::from_path(p))?,
        })
    }
}

/// Fully resolved settings of one command invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub topology: TopologySource,
    pub topology_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// paired evaluation episodes (per topology for the zoo sweep)
    pub episodes: usize,
    pub policies: Vec<PolicyKind>,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub filter: FilterCriteria,
    pub max_failures: usize,
    pub failure_step: usize,
    /// experiments per failure level
    pub experiments: usize,
    pub removal_retries: usize,
    /// episodes between trainer snapshots; `0` only snapshots at the end
    pub snapshot_every: usize,
    pub resume: bool,
    pub log_demands: bool,
    pub execution: Execution,
    pub gradcheck_tolerance: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            out_dir: PathBuf::from("out"),
            topology: TopologySource::Nsfnet,
            topology_dir: None,
            checkpoint: None,
            episodes: 100,
            policies: PolicyKind::ALL.to_vec(),
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            filter: FilterCriteria::default(),
            max_failures: 10,
            failure_step: 1,
            experiments: 100,
            removal_retries: crate::topology::DEFAULT_REMOVAL_RETRIES,
            snapshot_every: 100,
            resume: false,
            log_demands: false,
            execution: Execution::default(),
            gradcheck_tolerance: verify::DEFAULT_TOLERANCE,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| HarnessError::Usage(format!("invalid value '{value}' for {key}: {e}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError>
where
    T::Err: std::fmt::Display,
{
    let items = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_value(key, s))
        .collect::<Result<Vec<T>, _>>()?;
    if items.is_empty() {
        return Err(HarnessError::Usage(format!("{key} needs at least one entry")));
    }
    Ok(items)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Converts one value of the config file to its command-line spelling.
fn toml_to_string(key: &str, value: &toml::Value) -> Result<String, HarnessError> {
    Ok(match value {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        toml::Value::Array(items) => items
            .iter()
            .map(|v| toml_to_string(key, v))
            .collect::<Result<Vec<_>, _>>()?
            .join(","),
        _ => return Err(HarnessError::Usage(format!("{key}: nested values are not supported"))),
    })
}

/// Reads a flat `key = value` file into string pairs.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Usage(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| HarnessError::Usage(format!("{}: {e}", path.display())))?;
    table
        .iter()
        .map(|(k, v)| Ok((k.clone(), toml_to_string(k, v)?)))
        .collect()
}

impl ExperimentConfig {
    /// Defaults, then the config file, then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = file {
            for (k, v) in read_config_file(path)? {
                cfg.set(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.agent.validate()?;
        if self.failure_step == 0 {
            return Err(HarnessError::Usage("failure_step must be positive".into()));
        }
        if self.env.link_capacity <= 0.0 {
            return Err(HarnessError::Usage("link_capacity must be positive".into()));
        }
        Ok(())
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let a = &mut self.agent;
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "topology" => self.topology = TopologySource::parse(value),
            "topology_dir" => self.topology_dir = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "episodes" => self.episodes = parse_value(key, value)?,
            "policies" => self.policies = parse_list(key, value)?,
            "link_capacity" => self.env.link_capacity = parse_value(key, value)?,
            "demand_sizes" => {
                self.env.demand_sizes = parse_list::<u32>(key, value)?
                    .into_iter()
                    .map(|u| {
                        Bandwidth::from_units(u)
                            .ok_or_else(|| HarnessError::Usage(format!("demand size {u} is not one of 8, 32, 64")))
                    })
                    .collect::<Result<_, _>>()?
            }
            "gamma" => a.gamma = parse_value(key, value)?,
            "epsilon_start" => a.epsilon_start = parse_value(key, value)?,
            "epsilon_hold_episodes" => a.epsilon_hold_episodes = parse_value(key, value)?,
            "epsilon_decay_rate" => a.epsilon_decay_rate = parse_value(key, value)?,
            "epsilon_decay_every" => a.epsilon_decay_every = parse_value(key, value)?,
            "epsilon_min" => a.epsilon_min = parse_value(key, value)?,
            "replay_period" => a.replay_period = parse_value(key, value)?,
            "batches_per_replay" => a.batches_per_replay = parse_value(key, value)?,
            "batch_size" => a.batch_size = parse_value(key, value)?,
            "buffer_capacity" => a.buffer_capacity = parse_value(key, value)?,
            "k" => a.k = parse_value(key, value)?,
            "training_episodes" => a.training_episodes = parse_value(key, value)?,
            "eval_period" => a.eval_period = parse_value(key, value)?,
            "eval_episodes" => a.eval_episodes = parse_value(key, value)?,
            "learning_rate" => a.learning_rate = parse_value(key, value)?,
            "momentum" => a.momentum = parse_value(key, value)?,
            "hidden" => a.hidden = parse_value(key, value)?,
            "steps" => a.steps = parse_value(key, value)?,
            "target_sync_period" => a.target_sync_period = parse_value(key, value)?,
            "grad_clip_norm" => a.grad_clip_norm = parse_value(key, value)?,
            "filter_min_nodes_exclusive" => self.filter.min_nodes_exclusive = parse_value(key, value)?,
            "filter_max_nodes" => self.filter.max_nodes = parse_value(key, value)?,
            "filter_min_mean_degree" => self.filter.min_mean_degree = parse_value(key, value)?,
            "filter_max_mean_degree" => self.filter.max_mean_degree = parse_value(key, value)?,
            "filter_min_degree_ratio" => self.filter.min_degree_ratio = parse_value(key, value)?,
            "max_failures" => self.max_failures = parse_value(key, value)?,
            "failure_step" => self.failure_step = parse_value(key, value)?,
            "experiments" => self.experiments = parse_value(key, value)?,
            "removal_retries" => self.removal_retries = parse_value(key, value)?,
            "snapshot_every" => self.snapshot_every = parse_value(key, value)?,
            "resume" => self.resume = parse_value(key, value)?,
            "log_demands" => self.log_demands = parse_value(key, value)?,
            "execution" => self.execution = parse_value(key, value)?,
            "gradcheck_tolerance" => self.gradcheck_tolerance = parse_value(key, value)?,
            other => return Err(HarnessError::Usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Every setting as a TOML table that [`ExperimentConfig::resolve`]
    /// reads back to an equal config. `execution` and `out_dir` are left
    /// out since they never change results.
    pub fn to_table(&self) -> toml::Table {
        use toml::Value;
        let mut t = toml::Table::new();
        let mut put = |k: &str, v: Value| {
            t.insert(k.to_string(), v);
        };
        let int = |v: usize| Value::Integer(v as i64);
        let a = &self.agent;
        // u64 seeds above i64::MAX do not fit a TOML integer
        put("seed", Value::String(self.seed.to_string()));
        put("topology", Value::String(self.topology.as_config_value()));
        if let Some(d) = &self.topology_dir {
            put("topology_dir", Value::String(d.display().to_string()));
        }
        if let Some(c) = &self.checkpoint {
            put("checkpoint", Value::String(c.display().to_string()));
        }
        put("episodes", int(self.episodes));
        put("policies", Value::String(join(&self.policies)));
        put("link_capacity", Value::Float(self.env.link_capacity));
        put("demand_sizes", Value::String(join(&self.env.demand_sizes)));
        put("gamma", Value::Float(a.gamma));
        put("epsilon_start", Value::Float(a.epsilon_start));
        put("epsilon_hold_episodes", int(a.epsilon_hold_episodes));
        put("epsilon_decay_rate", Value::Float(a.epsilon_decay_rate));
        put("epsilon_decay_every", int(a.epsilon_decay_every));
        put("epsilon_min", Value::Float(a.epsilon_min));
        put("replay_period", int(a.replay_period));
        put("batches_per_replay", int(a.batches_per_replay));
        put("batch_size", int(a.batch_size));
        put("buffer_capacity", int(a.buffer_capacity));
        put("k", int(a.k));
        put("training_episodes", int(a.training_episodes));
        put("eval_period", int(a.eval_period));
        put("eval_episodes", int(a.eval_episodes));
        put("learning_rate", Value::Float(a.learning_rate));
        put("momentum", Value::Float(a.momentum));
        put("hidden", int(a.hidden));
        put("steps", int(a.steps));
        put("target_sync_period", int(a.target_sync_period));
        put("grad_clip_norm", Value::Float(a.grad_clip_norm));
        put("filter_min_nodes_exclusive", int(self.filter.min_nodes_exclusive));
        put("filter_max_nodes", int(self.filter.max_nodes));
        put("filter_min_mean_degree", Value::Float(self.filter.min_mean_degree));
        put("filter_max_mean_degree", Value::Float(self.filter.max_mean_degree));
        put("filter_min_degree_ratio", Value::Float(self.filter.min_degree_ratio));
        put("max_failures", int(self.max_failures));
        put("failure_step", int(self.failure_step));
        put("experiments", int(self.experiments));
        put("removal_retries", int(self.removal_retries));
        put("snapshot_every", int(self.snapshot_every));
        put("resume", Value::Boolean(self.resume));
        put("log_demands", Value::Boolean(self.log_demands));
        put("gradcheck_tolerance", Value::Float(self.gradcheck_tolerance));
        t
    }

    fn network(&self) -> Result<Network, HarnessError> {
        let topo = self.topology.load()?;
        Ok(Network::new(topo, self.agent.k))
    }

    fn load_params(&self) -> Result<QNetworkParams, HarnessError> {
        let path = self
            .checkpoint
            .as_ref()
            .ok_or_else(|| HarnessError::Usage("the gnn policy needs --checkpoint".into()))?;
        let ckpt = Checkpoint::load(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
        Ok(QNetworkParams::from_checkpoint(&ckpt)?)
    }

    fn load_params_if_needed(&self, policies: &[PolicyKind]) -> Result<Option<QNetworkParams>, HarnessError> {
        if policies.contains(&PolicyKind::Gnn) {
            self.load_params().map(Some)
        } else {
            Ok(None)
        }
    }
}

/// Output directory of one command run. Creates the directory and writes
/// `config.toml` up front, and `run_metadata.txt` when finished.
pub struct RunDir {
    path: PathBuf,
    command: &'static str,
    started: SystemTime,
    clock: Instant,
}

impl RunDir {
    pub fn create(cfg: &ExperimentConfig, command: &'static str) -> Result<Self, HarnessError> {
        fs::create_dir_all(&cfg.out_dir).map_err(|e| io_error(&cfg.out_dir, e))?;
        let dir = RunDir {
            path: cfg.out_dir.clone(),
            command,
            started: SystemTime::now(),
            clock: Instant::now(),
        };
        let body = toml::to_string(&cfg.to_table()).expect("flat table serializes");
        let text = format!("# gnnroute {TOOL_VERSION} {command}\ncommand = \"{command}\"\n{body}");
        dir.write_text("config.toml", &text)?;
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, HarnessError> {
        let path = self.file(name);
        write_atomic(&path, |w| w.write_all(bytes)).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, HarnessError> {
        self.write_bytes(name, text.as_bytes())
    }

    /// CSV preceded by a `# gnnroute <schema> v<version>` line.
    pub fn write_csv(&self, name: &str, schema: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, HarnessError> {
        let mut buf = format!("# gnnroute {schema} v{CSV_SCHEMA_VERSION}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header).map_err(|e| io_error(&self.file(name), e))?;
            for r in rows {
                w.write_record(r).map_err(|e| io_error(&self.file(name), e))?;
            }
            w.flush().map_err(|e| io_error(&self.file(name), e))?;
        }
        self.write_bytes(name, &buf)
    }

    pub fn finish(self) -> Result<(), HarnessError> {
        let secs = self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let text = format!(
            "tool_version = {TOOL_VERSION}\ncommand = {}\nstarted_unix = {secs}\nelapsed_seconds = {:.3}\nparallel = {}\n",
            self.command,
            self.clock.elapsed().as_secs_f64(),
            Execution::is_parallel_available(),
        );
        self.write_text("run_metadata.txt", &text)?;
        Ok(())
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

// ----------------------------------------------------------------------------
// statistics

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard error of the mean with the sample standard deviation.
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Min, quartiles, and max; quartiles interpolate linearly between order
/// statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn five_number(xs: &[f64]) -> Option<FiveNumber> {
    if xs.is_empty() {
        return None;
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    Some(FiveNumber {
        min: s[0],
        q1: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q3: quantile_sorted(&s, 0.75),
        max: s[s.len() - 1],
    })
}

/// Empirical CDF as `(value, fraction <= value)` points, one per sample.
pub fn cdf_points(xs: &[f64]) -> Vec<(f64, f64)> {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.into_iter().enumerate().map(|(i, v)| (v, (i + 1) as f64 / n)).collect()
}

/// Mann-Kendall trend statistic with the tie-corrected variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannKendall {
    pub s: i64,
    pub variance: f64,
    /// normal score with continuity correction; positive for upward trends
    pub z: f64,
}

pub fn mann_kendall(xs: &[f64]) -> MannKendall {
    let n = xs.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            s += match xs[j].partial_cmp(&xs[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j + 1;
    }
    let nf = n as f64;
    let variance = (nf * (nf - 1.0) * (2.0 * nf + 5.0) - tie_term) / 18.0;
    let z = if variance <= 0.0 || s == 0 {
        0.0
    } else if s > 0 {
        (s as f64 - 1.0) / variance.sqrt()
    } else {
        (s as f64 + 1.0) / variance.sqrt()
    };
    MannKendall { s, variance, z }
}

// ----------------------------------------------------------------------------
// paired evaluation

/// All requested policies on one demand seed.
#[derive(Debug, Clone)]
pub struct PairedEpisode {
    pub index: usize,
    pub seed: u64,
    pub runs: Vec<(PolicyKind, EpisodeSummary)>,
    /// fluid reference score, computed whether or not fluid was requested
    pub fluid_score: f64,
}

impl PairedEpisode {
    pub fn score(&self, kind: PolicyKind) -> Option<f64> {
        self.runs.iter().find(|(k, _)| *k == kind).map(|(_, s)| s.score)
    }

    /// Score over the fluid reference; missing when the reference is zero.
    pub fn relative(&self, kind: PolicyKind) -> Option<f64> {
        let s = self.score(kind)?;
        (self.fluid_score > 0.0).then(|| s / self.fluid_score)
    }
}

/// Runs every policy on the demand stream of each seed. Episodes are
/// distributed over `exec`; results keep seed order.
pub fn paired_evaluation(
    params: Option<&QNetworkParams>,
    network: &Network,
    env: &EnvConfig,
    policies: &[PolicyKind],
    seeds: &[(usize, u64)],
    exec: Execution,
) -> Result<Vec<PairedEpisode>, HarnessError> {
    let results = exec.map(seeds, |&(index, seed)| -> Result<PairedEpisode, HarnessError> {
        let mut runs = Vec::with_capacity(policies.len());
        for &kind in policies {
            let policy = match kind {
                PolicyKind::Gnn => Policy::Gnn(
                    params.ok_or_else(|| HarnessError::Usage("the gnn policy needs --checkpoint".into()))?,
                ),
                PolicyKind::Lb => Policy::Lb,
                PolicyKind::Fluid => Policy::Fluid,
            };
            runs.push((kind, run_policy_episode(policy, network, env, seed, Execution::Sequential)?));
        }
        let fluid_score = match runs.iter().find(|(k, _)| *k == PolicyKind::Fluid) {
            Some((_, s)) => s.score,
            None => run_policy_episode(Policy::Fluid, network, env, seed, Execution::Sequential)?.score,
        };
        Ok(PairedEpisode {
            index,
            seed,
            runs,
            fluid_score,
        })
    });
    results.into_iter().collect()
}

fn eval_seeds(master: u64, episodes: usize) -> Vec<(usize, u64)> {
    (0..episodes)
        .map(|i| (i, derive_seed(master, EVAL_EXPERIMENT, i as u64)))
        .collect()
}

fn dedup_policies(policies: &[PolicyKind]) -> Vec<PolicyKind> {
    let mut out: Vec<PolicyKind> = Vec::new();
    for &p in policies {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

// ----------------------------------------------------------------------------
// train

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub episodes: usize,
    pub best_episode: Option<usize>,
    pub best_eval_mean: Option<f64>,
    /// trend of the evaluation means recorded once exploration decays
    pub eval_trend: Option<MannKendall>,
    pub best_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
}

pub const TRAINER_STATE_FILE: &str = "trainer_state.json";

fn checkpoint_with_config(params: &QNetworkParams, cfg: &ExperimentConfig, episode: Option<usize>) -> Checkpoint {
    let mut ckpt = params.to_checkpoint();
    for (k, v) in cfg.to_table() {
        let is_training_key = matches!(
            k.as_str(),
            "seed" | "gamma" | "learning_rate" | "momentum" | "training_episodes" | "batch_size" | "k"
                | "grad_clip_norm" | "target_sync_period" | "epsilon_decay_rate" | "epsilon_min"
                | "link_capacity" | "topology"
        );
        if is_training_key {
            let text = match v {
                toml::Value::String(s) => s,
                other => other.to_string(),
            };
            ckpt.set_meta(&format!("train.{k}"), text.replace(char::is_whitespace, "_"));
        }
    }
    if let Some(ep) = episode {
        ckpt.set_meta("train.episode", ep);
    }
    ckpt
}

fn save_trainer_state(dir: &RunDir, state: &TrainerState) -> Result<(), HarnessError> {
    let json = serde_json::to_vec(state).map_err(|e| HarnessError::Data(format!("trainer state: {e}")))?;
    dir.write_bytes(TRAINER_STATE_FILE, &json)?;
    Ok(())
}

fn load_trainer_state(path: &Path) -> Result<TrainerState, HarnessError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainReport, HarnessError> {
    let network = cfg.network()?;
    let dir = RunDir::create(cfg, "train")?;
    let state_path = dir.file(TRAINER_STATE_FILE);
    let mut state = if cfg.resume && state_path.exists() {
        let s = load_trainer_state(&state_path)?;
        if s.config != cfg.agent || s.seed != cfg.seed || s.env_config != cfg.env {
            return Err(HarnessError::Usage(format!(
                "{} was written with a different configuration",
                state_path.display()
            )));
        }
        log::info!("resuming at episode {}", s.next_episode);
        s
    } else {
        TrainerState::new(cfg.agent.clone(), cfg.env.clone(), cfg.seed)?
    };

    while !state.is_finished() {
        let row = state.run_episode(&network, cfg.execution)?;
        if let Some(m) = row.eval_mean {
            log::info!("episode {} epsilon {:.3} eval mean {m:.1}", row.episode, row.epsilon);
        }
        if cfg.snapshot_every > 0 && state.next_episode % cfg.snapshot_every == 0 && !state.is_finished() {
            save_trainer_state(&dir, &state)?;
        }
    }
    save_trainer_state(&dir, &state)?;

    let best_episode = state.best.as_ref().map(|b| b.episode);
    let best_eval_mean = state.best.as_ref().map(|b| b.eval_mean);
    let best_checkpoint = dir.file("best.ckpt");
    let final_checkpoint = dir.file("final.ckpt");
    checkpoint_with_config(state.best_params(), cfg, best_episode).save(&best_checkpoint)?;
    checkpoint_with_config(&state.params, cfg, Some(state.next_episode.saturating_sub(1))).save(&final_checkpoint)?;

    let mut log_csv = format!("# gnnroute train_log v{CSV_SCHEMA_VERSION}\n").into_bytes();
    write_training_log(&state.log, &mut log_csv).map_err(|e| HarnessError::Data(e.to_string()))?;
    dir.write_bytes("train_log.csv", &log_csv)?;

    let decaying: Vec<f64> = state
        .log
        .iter()
        .filter(|r| epsilon_at(r.episode, &cfg.agent) < cfg.agent.epsilon_start)
        .filter_map(|r| r.eval_mean)
        .collect();
    let eval_trend = (decaying.len() >= 3).then(|| mann_kendall(&decaying));
    dir.finish()?;
    Ok(TrainReport {
        episodes: state.log.len(),
        best_episode,
        best_eval_mean,
        eval_trend,
        best_checkpoint,
        final_checkpoint,
    })
}

// ----------------------------------------------------------------------------
// eval

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub topology: String,
    pub policies: Vec<PolicyKind>,
    pub episodes: Vec<PairedEpisode>,
}

impl EvalSummary {
    pub fn scores(&self, kind: PolicyKind) -> Vec<f64> {
        self.episodes.iter().filter_map(|e| e.score(kind)).collect()
    }

    /// Relative scores with missing entries dropped.
    pub fn relative(&self, kind: PolicyKind) -> Vec<f64> {
        self.episodes.iter().filter_map(|e| e.relative(kind)).collect()
    }

    pub fn mean_score(&self, kind: PolicyKind) -> f64 {
        mean(&self.scores(kind))
    }

    /// Fraction of episodes where `a` scores strictly more than `b`.
    pub fn win_rate(&self, a: PolicyKind, b: PolicyKind) -> f64 {
        let pairs: Vec<(f64, f64)> = self
            .episodes
            .iter()
            .filter_map(|e| Some((e.score(a)?, e.score(b)?)))
            .collect();
        pairs.iter().filter(|(x, y)| x > y).count() as f64 / pairs.len().max(1) as f64
    }
}

fn summary_rows(kind: PolicyKind, metric: &str, xs: &[f64]) -> Vec<String> {
    let f = five_number(xs);
    let g = |v: Option<f64>| fmt_opt(v);
    vec![
        kind.to_string(),
        metric.to_string(),
        xs.len().to_string(),
        g((!xs.is_empty()).then(|| mean(xs))),
        g(f.map(|f| f.min)),
        g(f.map(|f| f.q1)),
        g(f.map(|f| f.median)),
        g(f.map(|f| f.q3)),
        g(f.map(|f| f.max)),
    ]
}

const SUMMARY_HEADER: [&str; 9] = ["policy", "metric", "n", "mean", "min", "q1", "median", "q3", "max"];

fn demand_rows(episodes: &[PairedEpisode], prefix: &[String]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for e in episodes {
        for (kind, s) in &e.runs {
            for r in &s.log {
                let mut row = prefix.to_vec();
                row.extend([
                    e.index.to_string(),
                    kind.to_string(),
                    r.step.to_string(),
                    r.demand.src.to_string(),
                    r.demand.dst.to_string(),
                    r.demand.bandwidth.to_string(),
                    r.action_rank.map(|a| a.to_string()).unwrap_or_default(),
                    u8::from(r.success).to_string(),
                ]);
                rows.push(row);
            }
        }
    }
    rows
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<EvalSummary, HarnessError> {
    let policies = dedup_policies(&cfg.policies);
    let params = cfg.load_params_if_needed(&policies)?;
    let network = cfg.network()?;
    let dir = RunDir::create(cfg, "eval")?;
    let episodes = paired_evaluation(
        params.as_ref(),
        &network,
        &cfg.env,
        &policies,
        &eval_seeds(cfg.seed, cfg.episodes),
        cfg.execution,
    )?;
    let summary = EvalSummary {
        topology: network.topology.name().to_string(),
        policies: policies.clone(),
        episodes,
    };

    let mut raw = Vec::new();
    for e in &summary.episodes {
        for (kind, s) in &e.runs {
            raw.push(vec![
                e.index.to_string(),
                e.seed.to_string(),
                kind.to_string(),
                s.score.to_string(),
                fmt_opt(e.relative(*kind)),
            ]);
        }
    }
    dir.write_csv(
        "eval_raw.csv",
        "eval_raw",
        &["episode", "seed", "policy", "score", "relative_to_fluid"],
        &raw,
    )?;

    let mut rows = Vec::new();
    let mut cdf = Vec::new();
    for &kind in &policies {
        rows.push(summary_rows(kind, "score", &summary.scores(kind)));
        let rel = summary.relative(kind);
        rows.push(summary_rows(kind, "relative_to_fluid", &rel));
        for (v, p) in cdf_points(&rel) {
            cdf.push(vec![kind.to_string(), fmt_f(v), fmt_f(p)]);
        }
    }
    dir.write_csv("eval_summary.csv", "eval_summary", &SUMMARY_HEADER, &rows)?;
    dir.write_csv(
        "eval_cdf.csv",
        "eval_cdf",
        &["policy", "relative_to_fluid", "cumulative_fraction"],
        &cdf,
    )?;
    if cfg.log_demands {
        dir.write_csv(
            "eval_demands.csv",
            "eval_demands",
            &["episode", "policy", "step", "src", "dst", "bw", "action_rank", "success"],
            &demand_rows(&summary.episodes, &[]),
        )?;
    }
    dir.finish()?;
    Ok(summary)
}

// ----------------------------------------------------------------------------
// filter and zoo sweep

/// One input file of a topology directory.
#[derive(Debug, Clone)]
pub struct ScannedTopology {
    pub file: String,
    pub outcome: Result<Topology, String>,
}

fn supported_extension(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("graphml" | "xml" | "txt" | "edges" | "edgelist")
    )
}

/// Loads every supported file of `dir` in file-name order. Files that fail
/// to parse are kept with their error so they can be reported.
pub fn scan_topology_dir(dir: &Path) -> Result<Vec<ScannedTopology>, HarnessError> {
    let entries = fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && supported_extension(p))
        .collect();
    paths.sort();
    Ok(paths
        .into_iter()
        .map(|p| {
            let file = p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            let outcome = load_topology(&p, TopologyFormat::from_path(&p)).map_err(|e| e.to_string());
            if let Err(msg) = &outcome {
                log::warn!("skipping {file}: {msg}");
            }
            ScannedTopology { file, outcome }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct FilterRow {
    pub file: String,
    pub decision: Result<FilterDecision, String>,
}

impl FilterRow {
    pub fn accepted(&self) -> bool {
        matches!(&self.decision, Ok(d) if d.accepted())
    }
}

fn filter_csv_rows(rows: &[FilterRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| match &r.decision {
            Ok(d) => {
                let ratio = if d.stats.degree_variance > 0.0 {
                    fmt_f(d.stats.mean_degree / d.stats.degree_variance)
                } else {
                    String::new()
                };
                vec![
                    r.file.clone(),
                    d.name.clone(),
                    d.nodes.to_string(),
                    d.links.to_string(),
                    fmt_f(d.stats.mean_degree),
                    fmt_f(d.stats.degree_variance),
                    ratio,
                    if d.accepted() { "keep" } else { "reject" }.to_string(),
                    d.reasons.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
                ]
            }
            Err(msg) => vec![
                r.file.clone(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                "skip".to_string(),
                msg.clone(),
            ],
        })
        .collect()
}

const FILTER_HEADER: [&str; 9] = [
    "file",
    "name",
    "nodes",
    "links",
    "mean_degree",
    "degree_variance",
    "mean_over_variance",
    "verdict",
    "reason",
];

fn filter_inputs(cfg: &ExperimentConfig) -> Result<Vec<ScannedTopology>, HarnessError> {
    match &cfg.topology_dir {
        Some(d) => scan_topology_dir(d),
        None => {
            let topo = cfg.topology.load()?;
            Ok(vec![ScannedTopology {
                file: cfg.topology.as_config_value(),
                outcome: Ok(topo),
            }])
        }
    }
}

/// Dry run of the dataset filter over `topology_dir`, or over `topology`
/// when no directory is given.
pub fn cmd_filter(cfg: &ExperimentConfig) -> Result<Vec<FilterRow>, HarnessError> {
    let scanned = filter_inputs(cfg)?;
    let dir = RunDir::create(cfg, "filter")?;
    if scanned.is_empty() {
        log::warn!("no topology files found");
    }
    let rows: Vec<FilterRow> = scanned
        .into_iter()
        .map(|s| FilterRow {
            file: s.file,
            decision: s.outcome.map(|t| evaluate_filter(&t, &cfg.filter)),
        })
        .collect();
    dir.write_csv("filter_report.csv", "filter_report", &FILTER_HEADER, &filter_csv_rows(&rows))?;
    dir.finish()?;
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct ZooRow {
    pub topology_id: usize,
    pub file: String,
    pub name: String,
    pub nodes: usize,
    pub links: usize,
    pub gnn_mean: f64,
    pub lb_mean: f64,
    pub fluid_mean: f64,
}

impl ZooRow {
    pub fn gnn_relative_pct(&self) -> Option<f64> {
        (self.fluid_mean > 0.0).then(|| 100.0 * self.gnn_mean / self.fluid_mean)
    }

    pub fn lb_relative_pct(&self) -> Option<f64> {
        (self.fluid_mean > 0.0).then(|| 100.0 * self.lb_mean / self.fluid_mean)
    }
}

/// Filters the topologies of `topology_dir`, evaluates gnn, lb and fluid on
/// each kept one, and writes the rows sorted by gnn minus lb.
pub fn cmd_zoo_sweep(cfg: &ExperimentConfig) -> Result<Vec<ZooRow>, HarnessError> {
    let topo_dir = cfg
        .topology_dir
        .as_ref()
        .ok_or_else(|| HarnessError::Usage("zoo-sweep needs --topology-dir".into()))?;
    let scanned = scan_topology_dir(topo_dir)?;
    let params = cfg.load_params()?;
    let dir = RunDir::create(cfg, "zoo-sweep")?;
    if scanned.is_empty() {
        log::warn!("{} holds no topology files", topo_dir.display());
    }

    let mut filter_rows = Vec::new();
    let mut kept = Vec::new();
    for s in scanned {
        let decision = match s.outcome {
            Err(msg) => Err(msg),
            Ok(t) if !t.is_connected() => {
                log::warn!("skipping {}: disconnected", s.file);
                Err("disconnected".to_string())
            }
            Ok(t) => {
                let d = evaluate_filter(&t, &cfg.filter);
                if d.accepted() {
                    kept.push((s.file.clone(), t));
                }
                Ok(d)
            }
        };
        filter_rows.push(FilterRow { file: s.file, decision });
    }
    dir.write_csv("zoo_filter.csv", "filter_report", &FILTER_HEADER, &filter_csv_rows(&filter_rows))?;

    let policies = PolicyKind::ALL;
    let seeds = eval_seeds(cfg.seed, cfg.episodes);
    let mut rows = Vec::with_capacity(kept.len());
    for (id, (file, topo)) in kept.into_iter().enumerate() {
        let network = Network::new(topo, cfg.agent.k);
        let eps = paired_evaluation(Some(&params), &network, &cfg.env, &policies, &seeds, cfg.execution)?;
        let avg = |k: PolicyKind| mean(&eps.iter().filter_map(|e| e.score(k)).collect::<Vec<_>>());
        rows.push(ZooRow {
            topology_id: id,
            file,
            name: network.topology.name().to_string(),
            nodes: network.topology.num_nodes(),
            links: network.topology.num_links(),
            gnn_mean: avg(PolicyKind::Gnn),
            lb_mean: avg(PolicyKind::Lb),
            fluid_mean: avg(PolicyKind::Fluid),
        });
        log::info!("topology {id} done");
    }
    rows.sort_by(|a, b| {
        (a.gnn_mean - a.lb_mean)
            .total_cmp(&(b.gnn_mean - b.lb_mean))
            .then(a.topology_id.cmp(&b.topology_id))
    });

    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(rank, r)| {
            vec![
                rank.to_string(),
                r.topology_id.to_string(),
                r.name.clone(),
                r.nodes.to_string(),
                r.links.to_string(),
                cfg.episodes.to_string(),
                fmt_f(r.gnn_mean),
                fmt_f(r.lb_mean),
                fmt_f(r.fluid_mean),
                fmt_opt(r.gnn_relative_pct()),
                fmt_opt(r.lb_relative_pct()),
                fmt_f(r.gnn_mean - r.lb_mean),
            ]
        })
        .collect();
    dir.write_csv(
        "zoo_sweep.csv",
        "zoo_sweep",
        &[
            "rank",
            "topology_id",
            "name",
            "nodes",
            "links",
            "episodes",
            "gnn_mean",
            "lb_mean",
            "fluid_mean",
            "gnn_relative_pct",
            "lb_relative_pct",
            "gnn_minus_lb",
        ],
        &csv_rows,
    )?;
    let mut by_id: Vec<&ZooRow> = rows.iter().collect();
    by_id.sort_by_key(|r| r.topology_id);
    let id_rows: Vec<Vec<String>> = by_id
        .iter()
        .map(|r| vec![r.topology_id.to_string(), r.name.clone(), r.file.clone()])
        .collect();
    dir.write_csv("topology_ids.csv", "topology_ids", &["topology_id", "name", "file"], &id_rows)?;
    dir.finish()?;
    Ok(rows)
}

// ----------------------------------------------------------------------------
// link failures

#[derive(Debug, Clone)]
pub struct FailureLevel {
    pub failures: usize,
    pub episodes: Vec<PairedEpisode>,
    /// samples redrawn after the removal retries ran out
    pub resamples: usize,
}

impl FailureLevel {
    pub fn scores(&self, kind: PolicyKind) -> Vec<f64> {
        self.episodes.iter().filter_map(|e| e.score(kind)).collect()
    }

    pub fn relative(&self, kind: PolicyKind) -> Vec<f64> {
        self.episodes.iter().filter_map(|e| e.relative(kind)).collect()
    }
}

/// Resample cap for a single experiment before giving up.
pub const MAX_RESAMPLES: usize = 100;

fn failed_topology(
    cfg: &ExperimentConfig,
    base: &Topology,
    failures: usize,
    experiment: usize,
) -> Result<(Topology, usize), HarnessError> {
    let sample_seed = derive_seed(cfg.seed, &format!("failures-{failures}"), experiment as u64);
    for attempt in 0..MAX_RESAMPLES {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(sample_seed, "resample", attempt as u64));
        match remove_random_links(base, failures, &mut rng, cfg.removal_retries) {
            Ok(t) => return Ok((t, attempt)),
            Err(TopologyError::RetriesExhausted { .. }) => {
                log::warn!("failure level {failures}, experiment {experiment}: retries exhausted, resampling");
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(HarnessError::Data(format!(
        "no connected sample with {failures} failed links after {MAX_RESAMPLES} resamples"
    )))
}

/// Scores the policies on connected random link removals of every level in
/// `0..=max_failures` (stepping by `failure_step`). Experiment `j` of every
/// level uses the demand stream of evaluation episode `j`.
pub fn cmd_link_failures(cfg: &ExperimentConfig) -> Result<Vec<FailureLevel>, HarnessError> {
    let base = cfg.topology.load()?;
    let spare = base.num_links() as isize - (base.num_nodes() as isize - 1);
    if cfg.max_failures as isize >= spare {
        return Err(HarnessError::Usage(format!(
            "max_failures {} must be below {spare} (links minus a spanning tree)",
            cfg.max_failures
        )));
    }
    let policies = dedup_policies(&cfg.policies);
    let params = cfg.load_params_if_needed(&policies)?;
    let dir = RunDir::create(cfg, "link-failures")?;
    let seeds = eval_seeds(cfg.seed, cfg.experiments);

    let mut levels = Vec::new();
    for failures in (0..=cfg.max_failures).step_by(cfg.failure_step) {
        let per_experiment = cfg.execution.map(&seeds, |&(j, seed)| -> Result<(PairedEpisode, usize), HarnessError> {
            let (topo, resamples) = failed_topology(cfg, &base, failures, j)?;
            let network = Network::new(topo, cfg.agent.k);
            let mut ep = paired_evaluation(
                params.as_ref(),
                &network,
                &cfg.env,
                &policies,
                &[(j, seed)],
                Execution::Sequential,
            )?;
            Ok((ep.remove(0), resamples))
        });
        let mut episodes = Vec::with_capacity(seeds.len());
        let mut resamples = 0;
        for r in per_experiment {
            let (e, n) = r?;
            episodes.push(e);
            resamples += n;
        }
        log::info!("failure level {failures} done");
        levels.push(FailureLevel {
            failures,
            episodes,
            resamples,
        });
    }

    let mut raw = Vec::new();
    let mut summary = Vec::new();
    for level in &levels {
        for e in &level.episodes {
            for (kind, s) in &e.runs {
                raw.push(vec![
                    level.failures.to_string(),
                    e.index.to_string(),
                    e.seed.to_string(),
                    kind.to_string(),
                    s.score.to_string(),
                    fmt_opt(e.relative(*kind)),
                ]);
            }
        }
        for &kind in &policies {
            let scores = level.scores(kind);
            let rel = level.relative(kind);
            let rel_five = five_number(&rel);
            summary.push(vec![
                level.failures.to_string(),
                kind.to_string(),
                scores.len().to_string(),
                fmt_f(mean(&scores)),
                fmt_f(standard_error(&scores)),
                fmt_opt((!rel.is_empty()).then(|| mean(&rel))),
                fmt_opt(rel_five.map(|f| f.q1)),
                fmt_opt(rel_five.map(|f| f.median)),
                fmt_opt(rel_five.map(|f| f.q3)),
                level.resamples.to_string(),
            ]);
        }
    }
    dir.write_csv(
        "link_failures_raw.csv",
        "link_failures_raw",
        &["failures", "experiment", "demand_seed", "policy", "score", "relative_to_fluid"],
        &raw,
    )?;
    dir.write_csv(
        "link_failures_summary.csv",
        "link_failures_summary",
        &[
            "failures",
            "policy",
            "n",
            "mean_score",
            "std_error",
            "relative_mean",
            "relative_q1",
            "relative_median",
            "relative_q3",
            "resamples",
        ],
        &summary,
    )?;
    dir.finish()?;
    Ok(levels)
}

// ----------------------------------------------------------------------------
// gradcheck

pub fn cmd_gradcheck(cfg: &ExperimentConfig) -> Result<Vec<(&'static str, crate::nn::GradCheckReport)>, HarnessError> {
    let dir = RunDir::create(cfg, "gradcheck")?;
    let reports = verify::run_suite(cfg.gradcheck_tolerance, cfg.seed);
    let mut text = String::new();
    for (name, r) in &reports {
        text.push_str(&format!("{name}\n{r}\n"));
    }
    dir.write_text("gradcheck.txt", &text)?;
    dir.finish()?;
    let failed: Vec<&str> = reports.iter().filter(|(_, r)| !r.passed()).map(|(n, _)| *n).collect();
    if !failed.is_empty() {
        return Err(HarnessError::Verification(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )));
    }
    Ok(reports)
}
