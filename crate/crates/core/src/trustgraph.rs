//! Direct trust from interaction records and the directed interaction graph.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{DeviceId, DeviceKind};
use crate::error::{Error, Result};
use crate::netsim::{InteractionKind, InteractionRecord};

pub const EDGE_HEADER: &str = "trustor,trustee,direct_trust,n_interactions";

/// Default number of trust classes.
pub const DEFAULT_BINS: usize = 10;

/// Mean over records of the delivered packet fraction.
pub fn plr_trust(records: &[&InteractionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::NoInteractions("plr_trust over empty record set".into()));
    }
    let mut sum = 0.0;
    for r in records {
        if r.p_tot == 0 {
            return Err(Error::invalid(format!(
                "task {}: p_tot = 0 in a forward record",
                r.task_index
            )));
        }
        sum += 1.0 - r.p_lost as f64 / r.p_tot as f64;
    }
    Ok(sum / records.len() as f64)
}

/// Mean over records with `p_rec > 0` of the forwarded fraction.
pub fn tfsr_trust(records: &[&InteractionRecord]) -> Result<f64> {
    let ratios: Vec<f64> = records
        .iter()
        .filter(|r| r.p_rec > 0)
        .map(|r| r.p_tra as f64 / r.p_rec as f64)
        .collect();
    if ratios.is_empty() {
        return Err(Error::NoInteractions(
            "tfsr_trust: no record with received packets".into(),
        ));
    }
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustWeights {
    /// Weight of the packet-loss component.
    pub alpha1: f64,
    /// Weight of the forwarding-success component.
    pub alpha2: f64,
}

impl Default for TrustWeights {
    fn default() -> Self {
        TrustWeights {
            alpha1: 0.6,
            alpha2: 0.4,
        }
    }
}

impl TrustWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.alpha1)
            && (0.0..=1.0).contains(&self.alpha2)
            && (self.alpha1 + self.alpha2 - 1.0).abs() <= 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "weights ({}, {}) must lie in [0, 1] and sum to 1",
                self.alpha1, self.alpha2
            )))
        }
    }
}

pub fn direct_trust_tf(t_plr: f64, t_tfsr: f64, weights: TrustWeights) -> Result<f64> {
    weights.validate()?;
    Ok(weights.alpha1 * t_plr + weights.alpha2 * t_tfsr)
}

/// Fraction of successfully executed tasks.
pub fn direct_trust_ec(records: &[&InteractionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::NoInteractions("direct_trust_ec over empty record set".into()));
    }
    let ok = records.iter().filter(|r| r.outcome == 1).count();
    Ok(ok as f64 / records.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustEdge {
    pub trustor: DeviceId,
    pub trustee: DeviceId,
    pub direct_trust: f64,
    pub n_interactions: u64,
}

/// Directed graph of direct trust, edges sorted by (trustor, trustee).
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    kinds: Vec<DeviceKind>,
    edges: Vec<TrustEdge>,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
}

impl InteractionGraph {
    pub fn from_edges(kinds: Vec<DeviceKind>, mut edges: Vec<TrustEdge>) -> Result<Self> {
        let n = kinds.len();
        edges.sort_by_key(|e| (e.trustor, e.trustee));
        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            for id in [e.trustor, e.trustee] {
                if id.index() >= n {
                    return Err(Error::UnknownDevice(id));
                }
            }
            if e.trustor == e.trustee {
                return Err(Error::invalid(format!("self edge on {}", e.trustor)));
            }
            if i > 0 && (edges[i - 1].trustor, edges[i - 1].trustee) == (e.trustor, e.trustee) {
                return Err(Error::invalid(format!(
                    "duplicate edge {} -> {}",
                    e.trustor, e.trustee
                )));
            }
            if !(0.0..=1.0).contains(&e.direct_trust) || e.n_interactions == 0 {
                return Err(Error::invalid(format!(
                    "edge {} -> {}: weight {} / count {} out of range",
                    e.trustor, e.trustee, e.direct_trust, e.n_interactions
                )));
            }
            if kinds[e.trustor.index()] == DeviceKind::Edge {
                return Err(Error::invalid(format!(
                    "edge device {} cannot be a trustor",
                    e.trustor
                )));
            }
            outgoing[e.trustor.index()].push(i);
            incoming[e.trustee.index()].push(i);
        }
        // Edge order is (trustor, trustee) so outgoing lists are sorted by
        // trustee; sort incoming lists by trustor for deterministic traversal.
        for list in &mut incoming {
            list.sort_by_key(|&i| edges[i].trustor);
        }
        Ok(InteractionGraph {
            kinds,
            edges,
            incoming,
            outgoing,
        })
    }

    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    pub fn kinds(&self) -> &[DeviceKind] {
        &self.kinds
    }

    pub fn kind(&self, id: DeviceId) -> DeviceKind {
        self.kinds[id.index()]
    }

    pub fn edges(&self) -> &[TrustEdge] {
        &self.edges
    }

    /// Indices into `edges()` of edges pointing at `id`, sorted by trustor.
    pub fn incoming(&self, id: DeviceId) -> &[usize] {
        &self.incoming[id.index()]
    }

    /// Indices into `edges()` of edges leaving `id`, sorted by trustee.
    pub fn outgoing(&self, id: DeviceId) -> &[usize] {
        &self.outgoing[id.index()]
    }

    pub fn edge(&self, trustor: DeviceId, trustee: DeviceId) -> Option<&TrustEdge> {
        self.edges
            .binary_search_by_key(&(trustor, trustee), |e| (e.trustor, e.trustee))
            .ok()
            .map(|i| &self.edges[i])
    }

    /// Same nodes, keeping only the edges whose index passes `keep`.
    pub fn subgraph(&self, keep: impl Fn(usize) -> bool) -> Self {
        let edges = self
            .edges
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, e)| *e)
            .collect();
        InteractionGraph::from_edges(self.kinds.clone(), edges).expect("subset of a valid graph")
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        w.write_record(EDGE_HEADER.split(','))?;
        for e in &self.edges {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, kinds: Vec<DeviceKind>, path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut edges = Vec::new();
        for (i, row) in r.deserialize::<TrustEdge>().enumerate() {
            edges.push(row.map_err(|e| Error::Row {
                path: path.to_owned(),
                row: i + 2,
                msg: e.to_string(),
            })?);
        }
        Self::from_edges(kinds, edges)
    }
}

/// Builds the direct-trust graph: one edge per (trustor, trustee) pair seen
/// in `records`. Forward pairs are weighted by packet-loss and forwarding
/// trust, compute pairs by execution success rate.
pub fn build_graph(
    records: &[InteractionRecord],
    kinds: Vec<DeviceKind>,
    weights: TrustWeights,
) -> Result<InteractionGraph> {
    weights.validate()?;
    let mut groups: BTreeMap<(DeviceId, DeviceId), Vec<&InteractionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.trustor, r.trustee)).or_default().push(r);
    }
    let mut edges = Vec::with_capacity(groups.len());
    for ((trustor, trustee), mut recs) in groups {
        // Fixed summation order regardless of input order.
        recs.sort_by_key(|r| (r.task_index, r.p_tot, r.p_lost, r.p_tra, r.outcome));
        let kind = recs[0].kind;
        if recs.iter().any(|r| r.kind != kind) {
            return Err(Error::invalid(format!(
                "pair {trustor} -> {trustee} mixes forward and compute records"
            )));
        }
        let direct_trust = match kind {
            InteractionKind::Forward => {
                let plr = plr_trust(&recs)?;
                let tfsr = tfsr_trust(&recs).unwrap_or_else(|_| {
                    log::warn!(
                        "edge {trustor} -> {trustee}: no packets ever received, forwarding trust set to 0"
                    );
                    0.0
                });
                direct_trust_tf(plr, tfsr, weights)?
            }
            InteractionKind::Compute => direct_trust_ec(&recs)?,
        };
        let tasks: BTreeSet<u64> = recs.iter().map(|r| r.task_index).collect();
        edges.push(TrustEdge {
            trustor,
            trustee,
            direct_trust,
            n_interactions: tasks.len() as u64,
        });
    }
    InteractionGraph::from_edges(kinds, edges)
}

/// A trust value bucketed into one of `bins` classes, with the class index
/// also given as an LSB-first bit code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrustClass {
    pub bins: usize,
    pub class_index: usize,
    pub code: Vec<u8>,
}

/// Length of the binary class code for `bins` classes.
pub fn code_width(bins: usize) -> usize {
    let mut width = 0;
    while (1usize << width) < bins {
        width += 1;
    }
    width.max(1)
}

pub fn discretize(trust: f64, bins: usize) -> Result<TrustClass> {
    if bins < 2 {
        return Err(Error::invalid("need at least 2 trust bins"));
    }
    if !(0.0..=1.0).contains(&trust) {
        return Err(Error::invalid(format!("trust {trust} outside [0, 1]")));
    }
    let class_index = ((trust * bins as f64).floor() as usize).min(bins - 1);
    let code = (0..code_width(bins))
        .map(|bit| ((class_index >> bit) & 1) as u8)
        .collect();
    Ok(TrustClass {
        bins,
        class_index,
        code,
    })
}
