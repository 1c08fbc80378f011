//! Synthetic workload generator producing the historical interaction log.
//!
//! Each task is relayed from a random terminal to a random reachable edge
//! device along a loop-erased random walk. Every relay hop yields one
//! `Forward` record (sender → relay) and the executing edge device yields one
//! `Compute` record (initiator → edge). Every hop retransmits the full task,
//! so each forward record starts from `packets_per_task` packets.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::domain::{DeviceId, DeviceKind, Topology};
use crate::error::{Error, Result};
use crate::rng;

pub const RECORD_HEADER: &str = "task,trustor,trustee,kind,p_tot,p_lost,p_rec,p_tra,outcome";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionKind {
    Forward,
    Compute,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    #[serde(rename = "task")]
    pub task_index: u64,
    pub trustor: DeviceId,
    pub trustee: DeviceId,
    pub kind: InteractionKind,
    pub p_tot: u64,
    pub p_lost: u64,
    pub p_rec: u64,
    pub p_tra: u64,
    pub outcome: u8,
}

impl InteractionRecord {
    pub fn forward(task: u64, trustor: DeviceId, trustee: DeviceId, p_tot: u64, p_lost: u64, p_tra: u64) -> Self {
        InteractionRecord {
            task_index: task,
            trustor,
            trustee,
            kind: InteractionKind::Forward,
            p_tot,
            p_lost,
            p_rec: p_tot.saturating_sub(p_lost),
            p_tra,
            outcome: 0,
        }
    }

    pub fn compute(task: u64, trustor: DeviceId, trustee: DeviceId, success: bool) -> Self {
        InteractionRecord {
            task_index: task,
            trustor,
            trustee,
            kind: InteractionKind::Compute,
            p_tot: 0,
            p_lost: 0,
            p_rec: 0,
            p_tra: 0,
            outcome: u8::from(success),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.trustor == self.trustee {
            return Err("trustor equals trustee".into());
        }
        match self.kind {
            InteractionKind::Forward => {
                if self.p_lost > self.p_tot {
                    return Err(format!("p_lost {} > p_tot {}", self.p_lost, self.p_tot));
                }
                if self.p_rec != self.p_tot - self.p_lost {
                    return Err(format!(
                        "p_rec {} != p_tot - p_lost = {}",
                        self.p_rec,
                        self.p_tot - self.p_lost
                    ));
                }
                if self.p_tra > self.p_rec {
                    return Err(format!("p_tra {} > p_rec {}", self.p_tra, self.p_rec));
                }
            }
            InteractionKind::Compute => {
                if self.outcome > 1 {
                    return Err(format!("outcome {} not in {{0, 1}}", self.outcome));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub n_tasks: usize,
    pub packets_per_task: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            n_tasks: 5000,
            packets_per_task: 1000,
        }
    }
}

const MAX_WALK_STEPS: usize = 1_000_000;

/// Runs `n_tasks` synthetic tasks and returns their interaction records in
/// task order.
pub fn run_workload(
    topology: &Topology,
    n_tasks: usize,
    packets_per_task: u64,
    seed: u64,
) -> Result<Vec<InteractionRecord>> {
    if n_tasks == 0 {
        return Err(Error::invalid("n_tasks must be positive"));
    }
    if packets_per_task == 0 {
        return Err(Error::invalid("packets_per_task must be positive"));
    }
    let reach: Vec<(DeviceId, Vec<DeviceId>)> = topology
        .terminals()
        .map(|t| (t.id, reachable_edges(topology, t.id)))
        .collect();
    if reach.iter().all(|(_, r)| r.is_empty()) {
        return Err(Error::NoReachableEdge);
    }

    let mut rng = rng::stream(seed, "workload", 0);
    let mut records = Vec::new();
    for task in 0..n_tasks as u64 {
        // Resample the initiator until it can reach an edge device.
        let (initiator, targets) = loop {
            let (id, targets) = &reach[rng.random_range(0..reach.len())];
            if !targets.is_empty() {
                break (*id, targets);
            }
        };
        let target = targets[rng.random_range(0..targets.len())];
        let route = sample_route(topology, initiator, target, &mut rng);

        for hop in route.windows(2) {
            let (from, to) = (hop[0], hop[1]);
            if to == target {
                break;
            }
            let behavior = topology.device(to).behavior;
            let lost = binomial(&mut rng, packets_per_task, behavior.true_plr);
            let received = packets_per_task - lost;
            let forwarded = binomial(&mut rng, received, behavior.true_tfsr);
            records.push(InteractionRecord::forward(
                task,
                from,
                to,
                packets_per_task,
                lost,
                forwarded,
            ));
        }
        let success = rng.random::<f64>() < topology.device(target).behavior.exec_success;
        records.push(InteractionRecord::compute(task, initiator, target, success));
    }
    Ok(records)
}

fn binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p in (0, 1)").sample(rng)
}

/// Relays are terminals only; an edge device ends a route.
fn relay_ok(topology: &Topology, id: DeviceId, target: DeviceId) -> bool {
    id == target || topology.device(id).kind == DeviceKind::Terminal
}

fn reachable_edges(topology: &Topology, start: DeviceId) -> Vec<DeviceId> {
    let mut seen = vec![false; topology.len()];
    let mut queue = VecDeque::from([start]);
    seen[start.index()] = true;
    let mut edges = Vec::new();
    while let Some(u) = queue.pop_front() {
        for &v in topology.neighbors(u) {
            if seen[v.index()] {
                continue;
            }
            seen[v.index()] = true;
            if topology.device(v).is_edge() {
                edges.push(v);
            } else {
                queue.push_back(v);
            }
        }
    }
    edges.sort_unstable();
    edges
}

/// Loop-erased random walk from `start` to `target` through terminal relays.
fn sample_route<R: Rng>(topology: &Topology, start: DeviceId, target: DeviceId, rng: &mut R) -> Vec<DeviceId> {
    let mut path = vec![start];
    let mut position = vec![usize::MAX; topology.len()];
    position[start.index()] = 0;
    let mut steps = 0;
    while *path.last().unwrap() != target {
        let cur = *path.last().unwrap();
        let options: Vec<DeviceId> = topology
            .neighbors(cur)
            .iter()
            .copied()
            .filter(|&n| relay_ok(topology, n, target))
            .collect();
        let next = options[rng.random_range(0..options.len())];
        let pos = position[next.index()];
        if pos != usize::MAX {
            for dropped in path.drain(pos + 1..) {
                position[dropped.index()] = usize::MAX;
            }
        } else {
            position[next.index()] = path.len();
            path.push(next);
        }
        steps += 1;
        if steps > MAX_WALK_STEPS {
            return shortest_route(topology, start, target);
        }
    }
    path
}

fn shortest_route(topology: &Topology, start: DeviceId, target: DeviceId) -> Vec<DeviceId> {
    let mut parent = vec![None; topology.len()];
    let mut queue = VecDeque::from([start]);
    parent[start.index()] = Some(start);
    while let Some(u) = queue.pop_front() {
        if u == target {
            break;
        }
        if u != start && topology.device(u).is_edge() {
            continue;
        }
        for &v in topology.neighbors(u) {
            if parent[v.index()].is_none() && relay_ok(topology, v, target) {
                parent[v.index()] = Some(u);
                queue.push_back(v);
            }
        }
    }
    let mut path = vec![target];
    let mut cur = target;
    while cur != start {
        cur = parent[cur.index()].expect("target reachable");
        path.push(cur);
    }
    path.reverse();
    path
}

pub fn write_records<W: Write>(records: &[InteractionRecord], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(RECORD_HEADER.split(','))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R, path: &Path) -> Result<Vec<InteractionRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != RECORD_HEADER {
        return Err(Error::Row {
            path: path.to_owned(),
            row: 1,
            msg: format!("expected header `{RECORD_HEADER}`"),
        });
    }
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<InteractionRecord>().enumerate() {
        // Row numbers count the header as row 1.
        let row_no = i + 2;
        let rec = row.map_err(|e| Error::Row {
            path: path.to_owned(),
            row: row_no,
            msg: e.to_string(),
        })?;
        rec.validate().map_err(|msg| Error::Row {
            path: path.to_owned(),
            row: row_no,
            msg,
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn persist_records(records: &[InteractionRecord], path: &Path) -> Result<()> {
    write_records(records, File::create(path).map_err(|e| Error::file(path, e))?)
}

pub fn load_records(path: &Path) -> Result<Vec<InteractionRecord>> {
    read_records(File::open(path).map_err(|e| Error::file(path, e))?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_random_topology, TopologyConfig};

    fn two_node(plr: f64, exec: f64) -> Topology {
        let cfg = TopologyConfig {
            n_terminals: 1,
            n_edge: 1,
            radius: 5000.0,
            terminal_plr: crate::domain::Range::new(plr, plr),
            edge_plr: crate::domain::Range::new(plr, plr),
            edge_exec_success: crate::domain::Range::new(exec, exec),
            ..TopologyConfig::default()
        };
        build_random_topology(&cfg, 1).unwrap()
    }

    #[test]
    fn direct_hop_emits_only_compute() {
        let topo = two_node(0.0, 1.0);
        let recs = run_workload(&topo, 1, 1000, 3).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].kind, InteractionKind::Compute);
        assert_eq!(recs[0].outcome, 1);
        assert_eq!(recs[0].trustor, DeviceId(0));
        assert_eq!(recs[0].trustee, DeviceId(1));
    }

    #[test]
    fn total_loss_means_nothing_received() {
        let cfg = TopologyConfig {
            terminal_plr: crate::domain::Range::new(1.0, 1.0),
            ..TopologyConfig::default()
        };
        let topo = build_random_topology(&cfg, 5).unwrap();
        let recs = run_workload(&topo, 200, 100, 5).unwrap();
        let forwards: Vec<_> = recs.iter().filter(|r| r.kind == InteractionKind::Forward).collect();
        assert!(!forwards.is_empty());
        assert!(forwards.iter().all(|r| r.p_rec == 0 && r.p_tra == 0));
    }

    #[test]
    fn records_satisfy_invariants_and_are_deterministic() {
        let topo = build_random_topology(&TopologyConfig::default(), 2).unwrap();
        let a = run_workload(&topo, 300, 50, 11).unwrap();
        let b = run_workload(&topo, 300, 50, 11).unwrap();
        assert_eq!(a, b);
        for r in &a {
            r.validate().unwrap();
            match r.kind {
                InteractionKind::Forward => {
                    assert!(!topo.device(r.trustee).is_edge());
                    assert!(topo.has_link(r.trustor, r.trustee));
                }
                InteractionKind::Compute => assert!(topo.device(r.trustee).is_edge()),
            }
        }
        // One compute record per task.
        let computes = a.iter().filter(|r| r.kind == InteractionKind::Compute).count();
        assert_eq!(computes, 300);
    }

    #[test]
    fn empty_list_round_trips_to_header_only() {
        let mut buf = Vec::new();
        write_records(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), format!("{RECORD_HEADER}\n"));
        let back = read_records(buf.as_slice(), Path::new("mem")).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn invalid_row_is_named() {
        let text = format!(
            "{RECORD_HEADER}\n0,0,1,forward,10,2,8,8,0\n1,0,1,forward,10,11,0,0,0\n"
        );
        let err = read_records(text.as_bytes(), Path::new("bad.csv")).unwrap_err();
        match err {
            Error::Row { row, msg, .. } => {
                assert_eq!(row, 3);
                assert!(msg.contains("p_lost"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unparsable_row_is_named() {
        let text = format!("{RECORD_HEADER}\n0,0,1,teleport,10,2,8,8,0\n");
        let err = read_records(text.as_bytes(), Path::new("bad.csv")).unwrap_err();
        assert!(matches!(err, Error::Row { row: 2, .. }));
    }

    #[test]
    fn no_reachable_edge_is_an_error() {
        // Single terminal linked to nothing: place them far apart.
        let topo = two_node(0.0, 1.0);
        let mut devices = topo.devices().to_vec();
        devices[1].position.x += 1.0e6;
        let isolated = Topology::new(devices, vec![]).unwrap();
        assert!(matches!(
            run_workload(&isolated, 1, 10, 1),
            Err(Error::NoReachableEdge)
        ));
    }
}
