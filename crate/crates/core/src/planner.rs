//! Trusted-topology filtering and multi-hop path planning.
//!
//! The objective is the mean composite trust of the devices on a path from
//! the initiator to an edge device, initiator excluded. [`astar_plan`] runs
//! one best-first agent per trusted edge device and keeps the best result,
//! [`brute_force_best`] enumerates every simple path, and [`greedy_plan`]
//! walks myopically from the initiator.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::domain::{DeviceId, DeviceKind, Task, Topology};
use crate::error::{Error, Result};

pub const DEFAULT_ORACLE_CAP: usize = 14;

pub fn composite_trust(t_his: f64, t_res: u8) -> f64 {
    t_his * f64::from(t_res)
}

/// Subgraph of devices that meet the task's trust thresholds, plus the
/// initiator.
#[derive(Clone, Debug, PartialEq)]
pub struct TrustedTopology {
    initiator: DeviceId,
    kinds: Vec<DeviceKind>,
    member: Vec<bool>,
    adjacency: Vec<Vec<DeviceId>>,
    trust: BTreeMap<DeviceId, f64>,
}

impl TrustedTopology {
    /// Builds a trusted topology directly. Every non-initiator device listed
    /// in `trust` is a member; links touching non-members are dropped.
    pub fn new(
        kinds: Vec<DeviceKind>,
        links: &[(DeviceId, DeviceId)],
        trust: BTreeMap<DeviceId, f64>,
        initiator: DeviceId,
    ) -> Result<Self> {
        let n = kinds.len();
        if initiator.index() >= n {
            return Err(Error::UnknownDevice(initiator));
        }
        let mut member = vec![false; n];
        member[initiator.index()] = true;
        for &id in trust.keys() {
            if id.index() >= n {
                return Err(Error::UnknownDevice(id));
            }
            member[id.index()] = true;
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in links {
            if a.index() >= n || b.index() >= n || a == b {
                return Err(Error::invalid(format!("bad link ({a}, {b})")));
            }
            if member[a.index()] && member[b.index()] {
                adjacency[a.index()].push(b);
                adjacency[b.index()].push(a);
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
            adj.dedup();
        }
        let mut trust = trust;
        trust.remove(&initiator);
        Ok(TrustedTopology {
            initiator,
            kinds,
            member,
            adjacency,
            trust,
        })
    }

    pub fn initiator(&self) -> DeviceId {
        self.initiator
    }

    /// Kinds of every device in the underlying topology, members or not.
    pub fn kinds(&self) -> &[DeviceKind] {
        &self.kinds
    }

    pub fn contains(&self, id: DeviceId) -> bool {
        self.member.get(id.index()).copied().unwrap_or(false)
    }

    pub fn members(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.member
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| DeviceId(i as u32))
    }

    pub fn member_count(&self) -> usize {
        self.member.iter().filter(|&&m| m).count()
    }

    pub fn neighbors(&self, id: DeviceId) -> &[DeviceId] {
        &self.adjacency[id.index()]
    }

    pub fn is_edge(&self, id: DeviceId) -> bool {
        self.kinds[id.index()] == DeviceKind::Edge
    }

    /// Composite trust from the initiator's perspective; `None` for the
    /// initiator and non-members.
    pub fn trust(&self, id: DeviceId) -> Option<f64> {
        self.trust.get(&id).copied()
    }

    pub fn trust_map(&self) -> &BTreeMap<DeviceId, f64> {
        &self.trust
    }

    pub fn edge_devices(&self) -> impl Iterator<Item = DeviceId> + '_ {
        self.members().filter(|&id| self.is_edge(id))
    }

    fn trust_of(&self, id: DeviceId) -> f64 {
        self.trust.get(&id).copied().unwrap_or(0.0)
    }
}

/// Keeps the initiator, every terminal with trust at least `c_tf` and every
/// edge device with trust at least `c_ec`.
pub fn filter_trusted(topology: &Topology, trust: &BTreeMap<DeviceId, f64>, task: &Task) -> Result<TrustedTopology> {
    let initiator = task.initiator;
    if initiator.index() >= topology.len() {
        return Err(Error::UnknownDevice(initiator));
    }
    let mut kept = BTreeMap::new();
    for d in topology.devices() {
        if d.id == initiator {
            continue;
        }
        let t = *trust.get(&d.id).ok_or_else(|| Error::invalid(format!("no trust value for device {}", d.id)))?;
        let threshold = if d.is_edge() { task.c_ec } else { task.c_tf };
        if t >= threshold {
            kept.insert(d.id, t);
        }
    }
    if !kept.keys().any(|id| topology.device(*id).is_edge()) {
        return Err(Error::NoTrustedEdge);
    }
    let kinds = topology.devices().iter().map(|d| d.kind).collect();
    TrustedTopology::new(kinds, topology.links(), kept, initiator)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub planner: String,
    /// Initiator first, edge device last.
    pub path: Vec<DeviceId>,
    /// Trust of `path[1..]`.
    pub per_device_trust: Vec<f64>,
    pub avg_trust: f64,
}

impl PathResult {
    pub fn new(planner: &str, path: Vec<DeviceId>, trusted: &TrustedTopology) -> Self {
        let per_device_trust: Vec<f64> = path[1..].iter().map(|&id| trusted.trust_of(id)).collect();
        let avg_trust = per_device_trust.iter().sum::<f64>() / per_device_trust.len() as f64;
        PathResult {
            planner: planner.to_string(),
            path,
            per_device_trust,
            avg_trust,
        }
    }

    /// Number of devices after the initiator.
    pub fn hops(&self) -> usize {
        self.path.len() - 1
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks the structural invariants against a trusted topology.
    pub fn validate(&self, trusted: &TrustedTopology) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("invalid path {:?}: {m}", self.path)));
        if self.path.len() < 2 || self.path[0] != trusted.initiator() {
            return bad("must start at the initiator and contain an edge device");
        }
        let last = *self.path.last().unwrap();
        if !trusted.is_edge(last) {
            return bad("must end at an edge device");
        }
        let mut seen = std::collections::BTreeSet::new();
        for (k, &id) in self.path.iter().enumerate() {
            if !trusted.contains(id) || !seen.insert(id) {
                return bad("devices must be trusted and distinct");
            }
            if k > 0 && k + 1 < self.path.len() && trusted.is_edge(id) {
                return bad("edge devices cannot relay");
            }
            if k > 0 && !trusted.neighbors(self.path[k - 1]).contains(&id) {
                return bad("consecutive devices must be linked");
            }
        }
        Ok(())
    }
}

/// Search state: a partial path from an edge device.
#[derive(Debug)]
struct Entry {
    f: f64,
    path: Vec<DeviceId>,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    /// Max-heap order: larger `f`, then shorter path, then smaller current
    /// device, then lexicographically smaller path.
    fn cmp(&self, other: &Self) -> Ordering {
        self.f
            .total_cmp(&other.f)
            .then_with(|| other.path.len().cmp(&self.path.len()))
            .then_with(|| other.path.last().cmp(&self.path.last()))
            .then_with(|| other.path.cmp(&self.path))
    }
}

/// One agent's best-first search from `start` back to the initiator. Returns
/// the first initiator-reaching path popped, edge device first.
///
/// A path ending at the initiator is scored by its average trust alone since
/// no devices remain to estimate. Each (device, path length) state is expanded
/// at most once, by the highest-priority path that reaches it, which bounds
/// the search at `n^2` expansions.
fn agent_search(trusted: &TrustedTopology, start: DeviceId) -> Option<Vec<DeviceId>> {
    let initiator = trusted.initiator();
    let n = trusted.kinds.len();
    let mut heap = BinaryHeap::new();
    heap.push(Entry {
        f: trusted.trust_of(start),
        path: vec![start],
    });
    let mut on_path = vec![false; n];
    let mut expanded = vec![false; n * (n + 1)];
    while let Some(Entry { path, .. }) = heap.pop() {
        let cur = *path.last().unwrap();
        if cur == initiator {
            return Some(path);
        }
        let state = cur.index() * (n + 1) + path.len();
        if std::mem::replace(&mut expanded[state], true) {
            continue;
        }
        on_path.iter_mut().for_each(|x| *x = false);
        for &id in &path {
            on_path[id.index()] = true;
        }
        let path_sum: f64 = path.iter().map(|&id| trusted.trust_of(id)).sum();
        for &next in trusted.neighbors(cur) {
            if on_path[next.index()] || (next != initiator && trusted.is_edge(next)) {
                continue;
            }
            let f = if next == initiator {
                path_sum / path.len() as f64
            } else {
                let f1 = (path_sum + trusted.trust_of(next)) / (path.len() + 1) as f64;
                // Average over next's neighbors not yet on the path.
                let (mut sum, mut count) = (0.0, 0usize);
                for &m in trusted.neighbors(next) {
                    if m != initiator && !on_path[m.index()] {
                        sum += trusted.trust_of(m);
                        count += 1;
                    }
                }
                f1 + if count == 0 { 0.0 } else { sum / count as f64 }
            };
            let mut new_path = path.clone();
            new_path.push(next);
            heap.push(Entry { f, path: new_path });
        }
    }
    None
}

/// Multi-agent best-first planning. Each agent stops at its first path to
/// the initiator; the best average-trust path over all agents wins, ties
/// going to the agent with the smaller edge device id.
pub fn astar_plan(trusted: &TrustedTopology, initiator: DeviceId) -> Option<PathResult> {
    if initiator != trusted.initiator() {
        return None;
    }
    let mut best: Option<PathResult> = None;
    for ec in trusted.edge_devices().collect::<Vec<_>>() {
        if let Some(mut path) = agent_search(trusted, ec) {
            path.reverse();
            let result = PathResult::new("cste", path, trusted);
            if best.as_ref().is_none_or(|b| result.avg_trust > b.avg_trust) {
                best = Some(result);
            }
        }
    }
    best
}

/// Exhaustive search over simple initiator-to-edge paths. Ties go to the
/// lexicographically smallest path.
pub fn brute_force_best(trusted: &TrustedTopology, initiator: DeviceId, cap: usize) -> Result<Option<PathResult>> {
    let nodes = trusted.member_count();
    if nodes > cap {
        return Err(Error::OracleCap { nodes, cap });
    }
    if initiator != trusted.initiator() {
        return Ok(None);
    }
    let mut best: Option<(f64, Vec<DeviceId>)> = None;
    let mut path = vec![initiator];
    let mut visited = vec![false; trusted.kinds.len()];
    visited[initiator.index()] = true;
    enumerate(trusted, &mut path, &mut visited, &mut best);
    Ok(best.map(|(_, p)| PathResult::new("oracle", p, trusted)))
}

fn enumerate(trusted: &TrustedTopology, path: &mut Vec<DeviceId>, visited: &mut [bool], best: &mut Option<(f64, Vec<DeviceId>)>) {
    let cur = *path.last().unwrap();
    for &next in trusted.neighbors(cur) {
        if visited[next.index()] {
            continue;
        }
        path.push(next);
        if trusted.is_edge(next) {
            let avg = PathResult::new("", path.clone(), trusted).avg_trust;
            let better = match best {
                None => true,
                Some((b, bp)) => avg > *b || (avg == *b && path.as_slice() < bp.as_slice()),
            };
            if better {
                *best = Some((avg, path.clone()));
            }
        } else {
            visited[next.index()] = true;
            enumerate(trusted, path, visited, best);
            visited[next.index()] = false;
        }
        path.pop();
    }
}

/// Myopic walk: step to an adjacent edge device when there is one (highest
/// trust first), otherwise to the most trusted unvisited terminal. No
/// backtracking.
pub fn greedy_plan(trusted: &TrustedTopology, initiator: DeviceId) -> Option<PathResult> {
    if initiator != trusted.initiator() {
        return None;
    }
    let mut path = vec![initiator];
    let mut visited = vec![false; trusted.kinds.len()];
    visited[initiator.index()] = true;
    loop {
        let cur = *path.last().unwrap();
        let best_of = |edge: bool| {
            trusted
                .neighbors(cur)
                .iter()
                .copied()
                .filter(|&n| !visited[n.index()] && trusted.is_edge(n) == edge)
                .max_by(|&a, &b| trusted.trust_of(a).total_cmp(&trusted.trust_of(b)).then(b.cmp(&a)))
        };
        if let Some(ec) = best_of(true) {
            path.push(ec);
            return Some(PathResult::new("greedy", path, trusted));
        }
        let next = best_of(false)?;
        visited[next.index()] = true;
        path.push(next);
    }
}
