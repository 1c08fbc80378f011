//! Composite staged trust evaluation for multi-hop collaborator selection.
//!
//! The pipeline runs in stages:
//!
//! 1. [`netsim`] simulates task relaying over a [`domain::Topology`] and logs
//!    forwarding and computing interactions.
//! 2. [`trustgraph`] turns the log into a directed graph of direct trust.
//! 3. [`embed`] produces initial device embeddings from biased random walks.
//! 4. [`gnnet`] propagates trust over the graph with an attention GNN and
//!    predicts historical trust for every initiator/device pair.
//! 5. [`restrust`] gates devices on task-specific idle, storage and energy
//!    conditions.
//! 6. [`planner`] combines both trusts, keeps the devices that meet the task
//!    thresholds and searches for the multi-hop path with the highest average
//!    trust.
//!
//! [`experiment`] wires the stages together and runs parameter sweeps.

// Validation uses negated comparisons on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod gnnet;
pub mod netsim;
pub mod planner;
pub mod restrust;
pub mod rng;
pub mod trustgraph;

pub use domain::{Device, DeviceId, DeviceKind, Task, Topology, TopologyConfig};
pub use error::{Error, Result};
pub use netsim::{InteractionKind, InteractionRecord};
pub use planner::PathResult;
pub use trustgraph::{InteractionGraph, TrustWeights};
