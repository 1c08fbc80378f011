//! Shared fixtures for the criterion benchmarks in `benches/`.

use std::collections::BTreeMap;

use cste_core::domain::{build_random_topology, DeviceId, Topology, TopologyConfig};
use cste_core::embed::{gaussian_embeddings, EmbeddingTable};
use cste_core::gnnet::{labeled_edges, GnnConfig, GnnModel, GraphView, LabeledEdge};
use cste_core::netsim::{run_workload, InteractionRecord};
use cste_core::planner::TrustedTopology;
use cste_core::rng;
use cste_core::trustgraph::{build_graph, InteractionGraph, TrustWeights};
use rand::Rng;

pub const SEED: u64 = 17;

/// Default-sized topology with a short workload over it.
pub struct Fixture {
    pub topology: Topology,
    pub records: Vec<InteractionRecord>,
    pub graph: InteractionGraph,
    pub embeddings: EmbeddingTable,
}

pub fn fixture(n_tasks: usize) -> Fixture {
    let topology = build_random_topology(&TopologyConfig::default(), SEED).expect("default topology");
    let records = run_workload(&topology, n_tasks, 1000, SEED).expect("workload");
    let kinds = topology.devices().iter().map(|d| d.kind).collect();
    let graph = build_graph(&records, kinds, TrustWeights::default()).expect("graph");
    let embeddings = gaussian_embeddings(topology.len(), 128, SEED);
    Fixture {
        topology,
        records,
        graph,
        embeddings,
    }
}

pub fn model_inputs(f: &Fixture) -> (GnnModel, GraphView, Vec<LabeledEdge>) {
    let config = GnnConfig::default();
    let model = GnnModel::xavier(&config, f.embeddings.dim, &mut rng::stream(SEED, "bench", 0)).expect("model");
    let view = GraphView::new(&f.graph, config.bins).expect("view");
    let edges = labeled_edges(&f.graph, config.bins).expect("labels");
    (model, view, edges)
}

/// Whole topology as a trusted topology with uniform random trust, seen from
/// the first terminal.
pub fn trusted(topology: &Topology) -> TrustedTopology {
    let mut r = rng::stream(SEED, "bench-trust", 0);
    let trust: BTreeMap<DeviceId, f64> = topology.devices().iter().skip(1).map(|d| (d.id, r.random_range(0.4..1.0))).collect();
    let kinds = topology.devices().iter().map(|d| d.kind).collect();
    TrustedTopology::new(kinds, topology.links(), trust, DeviceId(0)).expect("trusted topology")
}
