//! Link-level message-passing network that scores a routing action.
//!
//! Each link starts from `[capacity share, betweenness, one-hot demand size
//! if the link is on the action path, zero padding]`, exchanges messages with
//! the links it shares a node with for `steps` rounds, and the element-wise
//! sum of the final link states is read out into a scalar q-value.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvState, TrafficDemand};
use crate::exec::Execution;
use crate::nn::linalg::{add_assign, matvec_acc, matvec_t_acc, outer_acc, Block};
use crate::nn::{
    Activation, Checkpoint, CheckpointError, DenseCache, DenseLayer, GruCache, GruCell, Parameters,
};
use crate::paths::CandidatePath;
use crate::topology::Topology;

/// Bumped whenever the input feature layout changes; checkpoints carrying a
/// different value are refused.
pub const FEATURE_LAYOUT_VERSION: u32 = 1;
/// capacity, betweenness, three one-hot demand-size slots
pub const NUM_FEATURES: usize = 5;
pub const DEFAULT_HIDDEN: usize = 25;
pub const DEFAULT_STEPS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum GnnError {
    #[error("hidden size {0} cannot hold {NUM_FEATURES} input features")]
    HiddenTooSmall(usize),
    #[error("need at least one message-passing step")]
    NoSteps,
    #[error("action path {path_src}->{path_dst} does not serve demand {src}->{dst}")]
    ActionMismatch {
        path_src: usize,
        path_dst: usize,
        src: usize,
        dst: usize,
    },
    #[error("state has {state} links but the topology has {topology}")]
    LinkCountMismatch { state: usize, topology: usize },
}

/// `links x hidden` matrix of link states, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkHiddenStates {
    pub links: usize,
    pub hidden: usize,
    pub data: Vec<f64>,
}

impl LinkHiddenStates {
    pub fn zeros(links: usize, hidden: usize) -> Self {
        LinkHiddenStates {
            links,
            hidden,
            data: vec![0.0; links * hidden],
        }
    }

    pub fn row(&self, link: usize) -> &[f64] {
        &self.data[link * self.hidden..(link + 1) * self.hidden]
    }

    pub fn row_mut(&mut self, link: usize) -> &mut [f64] {
        &mut self.data[link * self.hidden..(link + 1) * self.hidden]
    }
}

/// Initial link states for scoring `action` on `demand` from `state`.
pub fn init_hidden_states(
    state: &EnvState,
    action: &CandidatePath,
    demand: &TrafficDemand,
    hidden: usize,
) -> Result<LinkHiddenStates, GnnError> {
    if hidden < NUM_FEATURES {
        return Err(GnnError::HiddenTooSmall(hidden));
    }
    let mut h = LinkHiddenStates::zeros(state.num_links(), hidden);
    for l in 0..state.num_links() {
        let row = h.row_mut(l);
        row[0] = state.available[l] / state.max_capacity[l];
        row[1] = state.betweenness[l];
    }
    let slot = 2 + demand.bandwidth.class_index();
    for &l in action.links() {
        h.row_mut(l)[slot] = 1.0;
    }
    Ok(h)
}

/// All learnable weights plus the two structural sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetworkParams {
    pub hidden: usize,
    pub steps: usize,
    /// message function, first layer: `[h_l, h_i]` (2H) -> H, SELU
    pub message_hidden: DenseLayer,
    /// message function, second layer: H -> H, linear
    pub message_out: DenseLayer,
    pub update: GruCell,
    pub readout_hidden: DenseLayer,
    pub readout_out: DenseLayer,
}

impl QNetworkParams {
    pub fn new<R: Rng + ?Sized>(hidden: usize, steps: usize, rng: &mut R) -> Result<Self, GnnError> {
        if hidden < NUM_FEATURES {
            return Err(GnnError::HiddenTooSmall(hidden));
        }
        if steps == 0 {
            return Err(GnnError::NoSteps);
        }
        Ok(QNetworkParams {
            hidden,
            steps,
            message_hidden: DenseLayer::glorot(2 * hidden, hidden, Activation::Selu, rng),
            message_out: DenseLayer::glorot(hidden, hidden, Activation::Linear, rng),
            update: GruCell::glorot(hidden, rng),
            readout_hidden: DenseLayer::glorot(hidden, hidden, Activation::Selu, rng),
            readout_out: DenseLayer::glorot(hidden, 1, Activation::Linear, rng),
        })
    }

    /// Layer names and shapes, in parameter-block order.
    fn array_specs(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        let mut specs = Vec::new();
        let dense = |name: &str, l: &DenseLayer, specs: &mut Vec<(String, Vec<usize>)>| {
            specs.push((format!("{name}.weight"), vec![l.outputs, l.inputs]));
            specs.push((format!("{name}.bias"), vec![l.outputs]));
        };
        dense("message_hidden", &self.message_hidden, &mut specs);
        dense("message_out", &self.message_out, &mut specs);
        for (name, _) in self.update.blocks() {
            let shape = if name.starts_with('b') { vec![h] } else { vec![h, h] };
            specs.push((format!("update.{name}"), shape));
        }
        dense("readout_hidden", &self.readout_hidden, &mut specs);
        dense("readout_out", &self.readout_out, &mut specs);
        specs
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        ckpt.set_meta("feature_layout", FEATURE_LAYOUT_VERSION);
        ckpt.set_meta("hidden", self.hidden);
        ckpt.set_meta("steps", self.steps);
        for ((name, shape), (_, data)) in self.array_specs().into_iter().zip(self.blocks()) {
            ckpt.push_array(name, shape, data.to_vec());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, CheckpointError> {
        let layout: u32 = ckpt.meta_parsed("feature_layout")?;
        if layout != FEATURE_LAYOUT_VERSION {
            return Err(CheckpointError::Incompatible(format!(
                "feature layout {layout}, this build expects {FEATURE_LAYOUT_VERSION}"
            )));
        }
        let hidden: usize = ckpt.meta_parsed("hidden")?;
        let steps: usize = ckpt.meta_parsed("steps")?;
        if hidden < NUM_FEATURES || steps == 0 {
            return Err(CheckpointError::Incompatible(format!(
                "hidden {hidden}, steps {steps}"
            )));
        }
        let mut params = QNetworkParams {
            hidden,
            steps,
            message_hidden: DenseLayer::zeros(2 * hidden, hidden, Activation::Selu),
            message_out: DenseLayer::zeros(hidden, hidden, Activation::Linear),
            update: GruCell::zeros(hidden),
            readout_hidden: DenseLayer::zeros(hidden, hidden, Activation::Selu),
            readout_out: DenseLayer::zeros(hidden, 1, Activation::Linear),
        };
        let specs = params.array_specs();
        for ((name, shape), block) in specs.iter().zip(params.blocks_mut()) {
            block.copy_from_slice(ckpt.array(name, shape)?);
        }
        Ok(params)
    }
}

impl Parameters for QNetworkParams {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (prefix, p) in [
            ("message_hidden", &self.message_hidden as &dyn NamedBlocks),
            ("message_out", &self.message_out),
            ("update", &self.update),
            ("readout_hidden", &self.readout_hidden),
            ("readout_out", &self.readout_out),
        ] {
            for (name, b) in p.named_blocks() {
                out.push((format!("{prefix}.{name}"), b));
            }
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.message_hidden.blocks_mut();
        out.extend(self.message_out.blocks_mut());
        out.extend(self.update.blocks_mut());
        out.extend(self.readout_hidden.blocks_mut());
        out.extend(self.readout_out.blocks_mut());
        out
    }
}

/// Object-safe view of [`Parameters::blocks`].
trait NamedBlocks {
    fn named_blocks(&self) -> Vec<(String, &[f64])>;
}

impl<P: Parameters> NamedBlocks for P {
    fn named_blocks(&self) -> Vec<(String, &[f64])> {
        self.blocks()
    }
}

/// Everything one message-passing round needs for its backward pass.
#[derive(Debug, Clone)]
struct RoundTrace {
    input: LinkHiddenStates,
    /// first message-layer pre-activations, one row per (link, neighbor)
    pre: Vec<f64>,
    /// per link, sum over neighbors of the first message-layer output
    summed: LinkHiddenStates,
    message: LinkHiddenStates,
    gru: Vec<GruCache>,
}

#[derive(Debug, Clone)]
struct ForwardTrace {
    rounds: Vec<RoundTrace>,
    readout_in: Vec<f64>,
    readout_hidden: DenseCache,
    readout_out: DenseCache,
}

impl ForwardTrace {
    fn q(&self) -> f64 {
        self.readout_out.out[0]
    }
}

fn message_round(
    params: &QNetworkParams,
    adjacency: &[Vec<usize>],
    input: LinkHiddenStates,
) -> (LinkHiddenStates, RoundTrace) {
    let h = params.hidden;
    let links = input.links;
    let w1 = &params.message_hidden;
    let left = Block {
        rows: h,
        cols: h,
        stride: 2 * h,
        offset: 0,
    };
    let right = Block { offset: h, ..left };

    // W1 [h_l; h_i] = W1_left h_l + W1_right h_i, so each half is applied
    // once per link instead of once per neighbor pair.
    let mut own = LinkHiddenStates::zeros(links, h);
    let mut other = LinkHiddenStates::zeros(links, h);
    for l in 0..links {
        matvec_acc(&w1.weights, left, input.row(l), own.row_mut(l));
        matvec_acc(&w1.weights, right, input.row(l), other.row_mut(l));
    }

    let pairs: usize = adjacency.iter().map(Vec::len).sum();
    let mut pre = Vec::with_capacity(pairs * h);
    let mut summed = LinkHiddenStates::zeros(links, h);
    for (l, neighbors) in adjacency.iter().enumerate() {
        for &i in neighbors {
            let acc = summed.row_mut(l);
            for j in 0..h {
                let p = own.data[l * h + j] + other.data[i * h + j] + w1.bias[j];
                pre.push(p);
                acc[j] += w1.activation.apply(p);
            }
        }
    }

    // The second message layer is linear, so summing its outputs over the
    // neighbors equals applying it to the summed hidden activations, with
    // the bias counted once per neighbor.
    let w2 = &params.message_out;
    let mut message = LinkHiddenStates::zeros(links, h);
    for (l, neighbors) in adjacency.iter().enumerate() {
        let row = message.row_mut(l);
        let deg = neighbors.len() as f64;
        for (m, b) in row.iter_mut().zip(&w2.bias) {
            *m = deg * b;
        }
        matvec_acc(&w2.weights, w2.block(), summed.row(l), row);
    }

    let mut next = LinkHiddenStates::zeros(links, h);
    let mut gru = Vec::with_capacity(links);
    for l in 0..links {
        let cache = params.update.forward(input.row(l), message.row(l));
        next.row_mut(l).copy_from_slice(&cache.out);
        gru.push(cache);
    }
    (
        next,
        RoundTrace {
            input,
            pre,
            summed,
            message,
            gru,
        },
    )
}

/// Backpropagates one round: takes `dL/d(output states)`, accumulates
/// parameter gradients, and returns `dL/d(input states)`.
fn message_round_backward(
    params: &QNetworkParams,
    adjacency: &[Vec<usize>],
    trace: &RoundTrace,
    d_out: &LinkHiddenStates,
    grad: &mut QNetworkParams,
) -> LinkHiddenStates {
    let h = params.hidden;
    let links = trace.input.links;
    let mut d_in = LinkHiddenStates::zeros(links, h);
    let mut d_summed = LinkHiddenStates::zeros(links, h);
    let w2 = &params.message_out;

    for l in 0..links {
        let (dh, dm) = params.update.backward(
            trace.input.row(l),
            trace.message.row(l),
            &trace.gru[l],
            d_out.row(l),
            &mut grad.update,
        );
        add_assign(d_in.row_mut(l), &dh);
        outer_acc(&mut grad.message_out.weights, w2.block(), &dm, trace.summed.row(l));
        let deg = adjacency[l].len() as f64;
        for (gb, g) in grad.message_out.bias.iter_mut().zip(&dm) {
            *gb += deg * g;
        }
        matvec_t_acc(&w2.weights, w2.block(), &dm, d_summed.row_mut(l));
    }

    let w1 = &params.message_hidden;
    let mut d_own = LinkHiddenStates::zeros(links, h);
    let mut d_other = LinkHiddenStates::zeros(links, h);
    let mut k = 0;
    for (l, neighbors) in adjacency.iter().enumerate() {
        for &i in neighbors {
            for j in 0..h {
                let d_pre = d_summed.data[l * h + j] * w1.activation.derivative(trace.pre[k]);
                k += 1;
                d_own.data[l * h + j] += d_pre;
                d_other.data[i * h + j] += d_pre;
                grad.message_hidden.bias[j] += d_pre;
            }
        }
    }

    let left = Block {
        rows: h,
        cols: h,
        stride: 2 * h,
        offset: 0,
    };
    let right = Block { offset: h, ..left };
    for l in 0..links {
        let x = trace.input.row(l);
        outer_acc(&mut grad.message_hidden.weights, left, d_own.row(l), x);
        outer_acc(&mut grad.message_hidden.weights, right, d_other.row(l), x);
        let d = d_in.row_mut(l);
        matvec_t_acc(&w1.weights, left, d_own.row(l), d);
        matvec_t_acc(&w1.weights, right, d_other.row(l), d);
    }
    d_in
}

/// One synchronous round: every link reads only the pre-round states.
pub fn message_pass(
    hidden: &LinkHiddenStates,
    adjacency: &[Vec<usize>],
    params: &QNetworkParams,
) -> LinkHiddenStates {
    assert_eq!(adjacency.len(), hidden.links, "adjacency does not match link count");
    message_round(params, adjacency, hidden.clone()).0
}

fn forward(params: &QNetworkParams, adjacency: &[Vec<usize>], initial: LinkHiddenStates) -> ForwardTrace {
    let mut rounds = Vec::with_capacity(params.steps);
    let mut states = initial;
    for _ in 0..params.steps {
        let (next, trace) = message_round(params, adjacency, states);
        rounds.push(trace);
        states = next;
    }
    let mut readout_in = vec![0.0; params.hidden];
    for l in 0..states.links {
        add_assign(&mut readout_in, states.row(l));
    }
    let readout_hidden = params.readout_hidden.forward(&readout_in);
    let readout_out = params.readout_out.forward(&readout_hidden.out);
    ForwardTrace {
        rounds,
        readout_in,
        readout_hidden,
        readout_out,
    }
}

fn backward(
    params: &QNetworkParams,
    adjacency: &[Vec<usize>],
    trace: &ForwardTrace,
    d_q: f64,
    grad: &mut QNetworkParams,
) {
    let d_hidden = params.readout_out.backward(
        &trace.readout_hidden.out,
        &trace.readout_out,
        &[d_q],
        &mut grad.readout_out,
    );
    let d_sum = params.readout_hidden.backward(
        &trace.readout_in,
        &trace.readout_hidden,
        &d_hidden,
        &mut grad.readout_hidden,
    );
    let links = adjacency.len();
    let mut d_states = LinkHiddenStates::zeros(links, params.hidden);
    for l in 0..links {
        d_states.row_mut(l).copy_from_slice(&d_sum);
    }
    for round in trace.rounds.iter().rev() {
        d_states = message_round_backward(params, adjacency, round, &d_states, grad);
    }
}

fn prepare(
    params: &QNetworkParams,
    topo: &Topology,
    state: &EnvState,
    demand: &TrafficDemand,
    action: &CandidatePath,
) -> Result<LinkHiddenStates, GnnError> {
    if action.src() != demand.src || action.dst() != demand.dst {
        return Err(GnnError::ActionMismatch {
            path_src: action.src(),
            path_dst: action.dst(),
            src: demand.src,
            dst: demand.dst,
        });
    }
    if state.num_links() != topo.num_links() {
        return Err(GnnError::LinkCountMismatch {
            state: state.num_links(),
            topology: topo.num_links(),
        });
    }
    init_hidden_states(state, action, demand, params.hidden)
}

/// Q-value of routing `demand` on `action` given link capacities `state`.
pub fn q_value(
    params: &QNetworkParams,
    topo: &Topology,
    state: &EnvState,
    demand: &TrafficDemand,
    action: &CandidatePath,
) -> Result<f64, GnnError> {
    let initial = prepare(params, topo, state, demand, action)?;
    Ok(forward(params, topo.link_adjacency(), initial).q())
}

/// One regression example for [`q_gradients`].
#[derive(Debug, Clone)]
pub struct QSample {
    pub state: EnvState,
    pub demand: TrafficDemand,
    pub action: CandidatePath,
    pub target: f64,
}

/// Mean squared error over the batch and its gradient with respect to every
/// parameter. Per-sample gradients are reduced in batch order, so the result
/// does not depend on `exec`.
pub fn q_gradients(
    params: &QNetworkParams,
    topo: &Topology,
    batch: &[QSample],
    exec: Execution,
) -> Result<(QNetworkParams, f64), GnnError> {
    assert!(!batch.is_empty(), "empty batch");
    let n = batch.len() as f64;
    let adjacency = topo.link_adjacency();
    let per_sample = exec.map(batch, |s| -> Result<(QNetworkParams, f64), GnnError> {
        let initial = prepare(params, topo, &s.state, &s.demand, &s.action)?;
        let trace = forward(params, adjacency, initial);
        let err = trace.q() - s.target;
        let mut g = params.zeros_like();
        backward(params, adjacency, &trace, 2.0 * err / n, &mut g);
        Ok((g, err * err))
    });
    let mut total = params.zeros_like();
    let mut sq = 0.0;
    for item in per_sample {
        let (g, e) = item?;
        total.add_scaled(&g, 1.0);
        sq += e;
    }
    Ok((total, sq / n))
}
