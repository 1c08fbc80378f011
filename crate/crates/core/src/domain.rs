//! Devices, tasks and the physical topology shared by every other stage.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Index of a device in its topology. Terminals come first, then edge devices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub u32);

impl DeviceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    /// Initiates tasks and relays them.
    Terminal,
    /// Executes offloaded tasks.
    Edge,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Ground-truth behavior the simulator samples observations from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    /// Per-packet loss probability on links into this device.
    pub true_plr: f64,
    /// Per-packet forwarding success probability.
    pub true_tfsr: f64,
    /// Task execution success probability (edge devices).
    pub exec_success: f64,
}

impl BehaviorProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("true_plr", self.true_plr),
            ("true_tfsr", self.true_tfsr),
            ("exec_success", self.exec_success),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: DeviceId,
    pub kind: DeviceKind,
    pub position: Point,
    /// GHz; zero for terminals.
    pub cpu_freq: f64,
    /// Joules.
    pub energy_avail: f64,
    /// Bits.
    pub storage_avail: f64,
    pub idle: bool,
    pub behavior: BehaviorProfile,
}

impl Device {
    pub fn is_edge(&self) -> bool {
        self.kind == DeviceKind::Edge
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.energy_avail >= 0.0) || !(self.storage_avail >= 0.0) {
            return Err(Error::invalid(format!(
                "device {}: negative energy or storage",
                self.id
            )));
        }
        if self.is_edge() && !(self.cpu_freq > 0.0) {
            return Err(Error::invalid(format!(
                "edge device {}: cpu_freq must be positive",
                self.id
            )));
        }
        self.behavior.validate()
    }
}

/// Bits in one megabyte (10^6 bytes).
pub const BITS_PER_MB: f64 = 8.0e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub initiator: DeviceId,
    /// Processing density, cycles per bit.
    pub c_des: f64,
    /// Task size in bits.
    pub c_size: f64,
    /// Minimum trust for forwarding devices.
    pub c_tf: f64,
    /// Minimum trust for the computing device.
    pub c_ec: f64,
}

impl Task {
    pub fn new(initiator: DeviceId, c_des: f64, c_size: f64, c_tf: f64, c_ec: f64) -> Result<Self> {
        if !(c_des > 0.0) || !(c_size > 0.0) {
            return Err(Error::invalid("c_des and c_size must be positive"));
        }
        if !(0.0..=1.0).contains(&c_tf) || !(0.0..=1.0).contains(&c_ec) {
            return Err(Error::invalid(format!(
                "trust thresholds must lie in [0, 1], got c_tf = {c_tf}, c_ec = {c_ec}"
            )));
        }
        Ok(Task {
            initiator,
            c_des,
            c_size,
            c_tf,
            c_ec,
        })
    }
}

/// Undirected communication graph over the devices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyDoc", into = "TopologyDoc")]
pub struct Topology {
    devices: Vec<Device>,
    links: Vec<(DeviceId, DeviceId)>,
    adjacency: Vec<Vec<DeviceId>>,
}

/// On-disk layout: `{"devices": [...], "links": [[a, b], ...]}`.
#[derive(Serialize, Deserialize)]
struct TopologyDoc {
    devices: Vec<Device>,
    links: Vec<(DeviceId, DeviceId)>,
}

impl TryFrom<TopologyDoc> for Topology {
    type Error = Error;

    fn try_from(doc: TopologyDoc) -> Result<Self> {
        Topology::new(doc.devices, doc.links)
    }
}

impl From<Topology> for TopologyDoc {
    fn from(t: Topology) -> Self {
        TopologyDoc {
            devices: t.devices,
            links: t.links,
        }
    }
}

impl Topology {
    /// Devices must be indexed by position (`devices[i].id == i`). Links are
    /// normalized to `(low, high)`, sorted and deduplicated.
    pub fn new(devices: Vec<Device>, links: Vec<(DeviceId, DeviceId)>) -> Result<Self> {
        for (i, d) in devices.iter().enumerate() {
            if d.id.index() != i {
                return Err(Error::invalid(format!(
                    "device at position {i} has id {}",
                    d.id
                )));
            }
            d.validate()?;
        }
        let n = devices.len();
        let mut norm = Vec::with_capacity(links.len());
        for (a, b) in links {
            if a == b {
                return Err(Error::invalid(format!("self-link on device {a}")));
            }
            for id in [a, b] {
                if id.index() >= n {
                    return Err(Error::UnknownDevice(id));
                }
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        norm.dedup();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &norm {
            adjacency[a.index()].push(b);
            adjacency[b.index()].push(a);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Ok(Topology {
            devices,
            links: norm,
            adjacency,
        })
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn device(&self, id: DeviceId) -> &Device {
        &self.devices[id.index()]
    }

    pub fn devices_mut(&mut self) -> &mut [Device] {
        &mut self.devices
    }

    pub fn links(&self) -> &[(DeviceId, DeviceId)] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    /// Neighbors sorted by id.
    pub fn neighbors(&self, id: DeviceId) -> &[DeviceId] {
        &self.adjacency[id.index()]
    }

    pub fn has_link(&self, a: DeviceId, b: DeviceId) -> bool {
        self.adjacency[a.index()].binary_search(&b).is_ok()
    }

    pub fn terminals(&self) -> impl Iterator<Item = &Device> {
        self.devices.iter().filter(|d| !d.is_edge())
    }

    pub fn edges(&self) -> impl Iterator<Item = &Device> {
        self.devices.iter().filter(|d| d.is_edge())
    }

    pub fn distance(&self, a: DeviceId, b: DeviceId) -> f64 {
        self.device(a).position.distance(&self.device(b).position)
    }

    /// Longest link attached to `id`, zero for an isolated device.
    pub fn max_link_distance(&self, id: DeviceId) -> f64 {
        self.neighbors(id)
            .iter()
            .map(|&n| self.distance(id, n))
            .fold(0.0, f64::max)
    }

    pub fn is_connected(&self) -> bool {
        if self.devices.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([DeviceId(0)]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if !seen[v.index()] {
                    seen[v.index()] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Closed interval sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi <= self.lo {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * rng.random::<f64>()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologyConfig {
    pub n_terminals: usize,
    pub n_edge: usize,
    /// Side lengths of the deployment rectangle, meters.
    pub width: f64,
    pub height: f64,
    /// Two devices are linked iff their distance is at most this.
    pub radius: f64,
    pub max_retries: usize,
    pub terminal_plr: Range,
    pub terminal_tfsr: Range,
    pub edge_plr: Range,
    pub edge_exec_success: Range,
    /// GHz.
    pub edge_cpu: Range,
    pub terminal_energy: Range,
    pub edge_energy: Range,
    pub terminal_storage: Range,
    pub edge_storage: Range,
    pub idle_prob: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            n_terminals: 50,
            n_edge: 10,
            width: 1000.0,
            height: 1000.0,
            radius: 220.0,
            max_retries: 1000,
            terminal_plr: Range::new(0.0, 0.1),
            terminal_tfsr: Range::new(0.6, 1.0),
            edge_plr: Range::new(0.0, 0.05),
            edge_exec_success: Range::new(0.4, 1.0),
            edge_cpu: Range::new(1.5, 3.5),
            terminal_energy: Range::new(1000.0, 6000.0),
            edge_energy: Range::new(40.0, 400.0),
            terminal_storage: Range::new(2.0e8, 2.0e9),
            edge_storage: Range::new(2.0e8, 8.0e9),
            idle_prob: 0.9,
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_terminals == 0 || self.n_edge == 0 {
            return Err(Error::invalid("need at least one terminal and one edge device"));
        }
        if !(self.width > 0.0 && self.height > 0.0 && self.radius > 0.0) {
            return Err(Error::invalid("area and radius must be positive"));
        }
        if self.max_retries == 0 {
            return Err(Error::invalid("max_retries must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.idle_prob) {
            return Err(Error::invalid("idle_prob outside [0, 1]"));
        }
        for (name, r) in [
            ("terminal_plr", self.terminal_plr),
            ("terminal_tfsr", self.terminal_tfsr),
            ("edge_plr", self.edge_plr),
            ("edge_exec_success", self.edge_exec_success),
        ] {
            if !(0.0..=1.0).contains(&r.lo) || !(0.0..=1.0).contains(&r.hi) {
                return Err(Error::invalid(format!("{name} outside [0, 1]")));
            }
        }
        if !(self.edge_cpu.lo > 0.0) {
            return Err(Error::invalid("edge_cpu must be positive"));
        }
        Ok(())
    }
}

/// Random geometric graph over uniformly placed devices. Placement is redrawn
/// until the graph is connected or `max_retries` attempts are used up.
pub fn build_random_topology(config: &TopologyConfig, seed: u64) -> Result<Topology> {
    config.validate()?;
    for attempt in 0..config.max_retries {
        let mut rng = rng::stream(seed, "topology", attempt as u64);
        let topo = sample_topology(config, &mut rng)?;
        if topo.is_connected() {
            return Ok(topo);
        }
    }
    Err(Error::Disconnected {
        retries: config.max_retries,
    })
}

fn sample_topology<R: Rng>(config: &TopologyConfig, rng: &mut R) -> Result<Topology> {
    let n = config.n_terminals + config.n_edge;
    let mut devices = Vec::with_capacity(n);
    for i in 0..n {
        let id = DeviceId(i as u32);
        let position = Point {
            x: config.width * rng.random::<f64>(),
            y: config.height * rng.random::<f64>(),
        };
        let idle = rng.random::<f64>() < config.idle_prob;
        let device = if i < config.n_terminals {
            Device {
                id,
                kind: DeviceKind::Terminal,
                position,
                cpu_freq: 0.0,
                energy_avail: config.terminal_energy.sample(rng),
                storage_avail: config.terminal_storage.sample(rng),
                idle,
                behavior: BehaviorProfile {
                    true_plr: config.terminal_plr.sample(rng),
                    true_tfsr: config.terminal_tfsr.sample(rng),
                    exec_success: 0.0,
                },
            }
        } else {
            Device {
                id,
                kind: DeviceKind::Edge,
                position,
                cpu_freq: config.edge_cpu.sample(rng),
                energy_avail: config.edge_energy.sample(rng),
                storage_avail: config.edge_storage.sample(rng),
                idle,
                behavior: BehaviorProfile {
                    true_plr: config.edge_plr.sample(rng),
                    true_tfsr: 0.0,
                    exec_success: config.edge_exec_success.sample(rng),
                },
            }
        };
        devices.push(device);
    }
    let mut links = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if devices[i].position.distance(&devices[j].position) <= config.radius {
                links.push((DeviceId(i as u32), DeviceId(j as u32)));
            }
        }
    }
    Topology::new(devices, links)
}
