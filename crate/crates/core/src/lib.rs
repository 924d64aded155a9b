//! Deep Q-learning with a link-level graph neural network for routing
//! traffic demands over optical transport network topologies.
//!
//! The crate is organized bottom-up:
//!
//! - [`topology`]: graphs, file loaders, dataset filter, link failures
//! - [`paths`]: k shortest candidate paths and link betweenness
//! - [`env`]: the demand-allocation environment
//! - [`nn`]: dense layers, gated recurrent cell, optimizer, gradient checks
//! - [`gnn`]: the message-passing q-value estimator
//! - [`agent`]: replay buffer, epsilon-greedy selection, DQN training
//! - [`baselines`]: load balancing and the fluid reference
//! - [`harness`]: experiment commands and CSV outputs

pub mod agent;
pub mod baselines;
pub mod env;
pub mod exec;
pub mod gnn;
pub mod harness;
pub mod nn;
pub mod paths;
pub mod seed;
pub mod topology;
pub mod verify;

pub use exec::Execution;
