//! End-to-end pipeline orchestration and the PLR/TFSR sweeps.
//!
//! Every stage takes the experiment seed and derives its own stream, so a
//! rerun with the same configuration reproduces every artifact byte for byte.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{build_random_topology, DeviceId, DeviceKind, Task, Topology, TopologyConfig, BITS_PER_MB};
use crate::embed::{init_embeddings, EmbeddingTable, WalkParams};
use crate::error::{Error, Result, StageExt};
use crate::gnnet::{self, GnnConfig, GnnModel, TrainReport, TrainedTrust, TrustReadout};
use crate::netsim::{self, InteractionRecord, WorkloadConfig};
use crate::planner::{self, PathResult, TrustedTopology};
use crate::restrust::{resource_trust_ec, resource_trust_tf, ResourceConfig};
use crate::rng;
use crate::trustgraph::{build_graph, InteractionGraph, TrustWeights};

pub const SUMMARY_HEADER: &str = "task,initiator,planner,status,path_len,avg_trust,success,path";

/// Parameters shared by every evaluation task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    /// Processing density, cycles/bit.
    pub c_des: f64,
    /// Task size, MB.
    pub c_size_mb: f64,
    pub c_tf: f64,
    pub c_ec: f64,
    pub n_eval: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            c_des: 2339.0,
            c_size_mb: 50.0,
            c_tf: 0.4,
            c_ec: 0.3,
            n_eval: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub plr_grid: Vec<f64>,
    pub tfsr_grid: Vec<f64>,
    /// Share of terminals whose behavior is overridden at each grid point.
    pub affected_fraction: f64,
    /// Largest trusted instance handed to the exhaustive planner; larger
    /// instances are truncated to the nodes closest to the initiator.
    pub oracle_cap: usize,
    /// Overrides the GNN readout during sweeps.
    pub readout: Option<TrustReadout>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            plr_grid: (0..=8).map(|i| f64::from(i) / 50.0).collect(),
            tfsr_grid: (10..=20).map(|i| f64::from(i) / 20.0).collect(),
            affected_fraction: 2.0 / 3.0,
            oracle_cap: planner::DEFAULT_ORACLE_CAP,
            readout: Some(TrustReadout::ExpectedBin),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub topology: TopologyConfig,
    pub workload: WorkloadConfig,
    pub trust: TrustWeights,
    pub embedding: WalkParams,
    pub gnn: GnnConfig,
    pub resources: ResourceConfig,
    pub tasks: TaskConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    /// Task thresholds are deliberately not checked here: an impossible
    /// threshold is reported per task rather than aborting the run.
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        if self.workload.n_tasks == 0 || self.workload.packets_per_task == 0 {
            return Err(Error::invalid("workload needs positive n_tasks and packets_per_task"));
        }
        self.trust.validate()?;
        self.embedding.validate()?;
        self.gnn.validate()?;
        if self.tasks.n_eval == 0 {
            return Err(Error::invalid("n_eval must be positive"));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.sweep.plr_grid.iter().chain(&self.sweep.tfsr_grid).all(|&v| unit(v)) {
            return Err(Error::invalid("sweep grid values must lie in [0, 1]"));
        }
        if !unit(self.sweep.affected_fraction) {
            return Err(Error::invalid("affected_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Artifacts of the learning half of the pipeline.
#[derive(Clone, Debug)]
pub struct TrainedPipeline {
    pub records: Vec<InteractionRecord>,
    pub graph: InteractionGraph,
    pub embeddings: EmbeddingTable,
    pub model: GnnModel,
    pub report: TrainReport,
    pub trust: TrainedTrust,
}

/// Runs workload simulation, graph construction, embedding and training.
pub fn train_pipeline(config: &ExperimentConfig, topology: &Topology) -> Result<TrainedPipeline> {
    let seed = config.seed;
    let records = netsim::run_workload(topology, config.workload.n_tasks, config.workload.packets_per_task, seed).stage("simulate")?;
    let kinds: Vec<DeviceKind> = topology.devices().iter().map(|d| d.kind).collect();
    let graph = build_graph(&records, kinds, config.trust).stage("build-graph")?;
    let embeddings = init_embeddings(&graph, &config.embedding, seed).stage("embed")?;
    let (model, trust, report) = gnnet::train(&graph, &embeddings, &config.gnn, seed).stage("train")?;
    Ok(TrainedPipeline {
        records,
        graph,
        embeddings,
        model,
        report,
        trust,
    })
}

/// Evaluation initiators, drawn uniformly from terminals.
pub fn evaluation_initiators(topology: &Topology, n: usize, seed: u64) -> Vec<DeviceId> {
    let terminals: Vec<DeviceId> = topology.terminals().map(|d| d.id).collect();
    let mut rng = rng::stream(seed, "eval-task", 0);
    (0..n).map(|_| terminals[rng.random_range(0..terminals.len())]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Ok,
    InvalidTask,
    NoTrustedEdge,
    NoPath,
}

impl TaskStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Ok => "ok",
            TaskStatus::InvalidTask => "invalid_task",
            TaskStatus::NoTrustedEdge => "no_trusted_edge",
            TaskStatus::NoPath => "no_path",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskOutcome {
    pub task: usize,
    pub initiator: DeviceId,
    pub planner: String,
    pub status: TaskStatus,
    pub path: Option<PathResult>,
}

impl TaskOutcome {
    /// Failed plans score zero.
    pub fn avg_trust(&self) -> f64 {
        self.path.as_ref().map_or(0.0, |p| p.avg_trust)
    }
}

/// Composite trust that `task.initiator` places in every other device.
pub fn composite_trust_map(topology: &Topology, trust: &TrainedTrust, task: &Task, resources: &ResourceConfig) -> BTreeMap<DeviceId, f64> {
    let t_his = trust.from_initiator(task.initiator);
    topology
        .devices()
        .iter()
        .filter(|d| d.id != task.initiator)
        .map(|d| {
            let t_res = if d.is_edge() {
                resource_trust_ec(d, task, resources.epsilon)
            } else {
                // The next hop is unknown before planning; budget for the farthest neighbor.
                resource_trust_tf(d, task, topology.max_link_distance(d.id), &resources.radio)
            };
            let his = t_his.get(&d.id).copied().unwrap_or(0.0);
            (d.id, planner::composite_trust(his, t_res))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Planner {
    Cste,
    Greedy,
    Oracle,
}

impl Planner {
    pub fn name(self) -> &'static str {
        match self {
            Planner::Cste => "cste",
            Planner::Greedy => "greedy",
            Planner::Oracle => "oracle",
        }
    }
}

/// Keeps the `cap` members closest to the initiator in breadth-first order.
pub fn truncate_trusted(trusted: &TrustedTopology, cap: usize) -> Result<TrustedTopology> {
    if trusted.member_count() <= cap {
        return Ok(trusted.clone());
    }
    let mut seen = vec![false; trusted.kinds().len()];
    let mut queue = VecDeque::from([trusted.initiator()]);
    seen[trusted.initiator().index()] = true;
    let mut kept = BTreeMap::new();
    let mut count = 1;
    while let Some(cur) = queue.pop_front() {
        for &next in trusted.neighbors(cur) {
            if count >= cap || seen[next.index()] {
                continue;
            }
            seen[next.index()] = true;
            count += 1;
            kept.insert(next, trusted.trust(next).unwrap_or(0.0));
            if !trusted.is_edge(next) {
                queue.push_back(next);
            }
        }
    }
    let kinds = trusted.kinds().to_vec();
    let mut links = Vec::new();
    for a in trusted.members() {
        for &b in trusted.neighbors(a) {
            if a < b {
                links.push((a, b));
            }
        }
    }
    TrustedTopology::new(kinds, &links, kept, trusted.initiator())
}

/// Plans one task with each requested planner.
pub fn plan_task(
    topology: &Topology,
    trust: &TrainedTrust,
    task_index: usize,
    initiator: DeviceId,
    config: &ExperimentConfig,
    planners: &[Planner],
) -> Result<Vec<TaskOutcome>> {
    let outcome = |planner: Planner, status, path| TaskOutcome {
        task: task_index,
        initiator,
        planner: planner.name().to_string(),
        status,
        path,
    };
    let t = &config.tasks;
    let task = match Task::new(initiator, t.c_des, t.c_size_mb * BITS_PER_MB, t.c_tf, t.c_ec) {
        Ok(task) => task,
        Err(_) => return Ok(planners.iter().map(|&p| outcome(p, TaskStatus::InvalidTask, None)).collect()),
    };
    let composite = composite_trust_map(topology, trust, &task, &config.resources);
    let trusted = match planner::filter_trusted(topology, &composite, &task) {
        Ok(trusted) => trusted,
        Err(Error::NoTrustedEdge) => {
            return Ok(planners.iter().map(|&p| outcome(p, TaskStatus::NoTrustedEdge, None)).collect());
        }
        Err(e) => return Err(e).stage("plan"),
    };
    let mut out = Vec::with_capacity(planners.len());
    for &p in planners {
        let path = match p {
            Planner::Cste => planner::astar_plan(&trusted, initiator),
            Planner::Greedy => planner::greedy_plan(&trusted, initiator),
            Planner::Oracle => {
                let reduced = truncate_trusted(&trusted, config.sweep.oracle_cap)?;
                planner::brute_force_best(&reduced, initiator, config.sweep.oracle_cap).stage("plan")?
            }
        };
        let status = if path.is_some() { TaskStatus::Ok } else { TaskStatus::NoPath };
        out.push(outcome(p, status, path));
    }
    Ok(out)
}

pub fn write_outcomes<W: Write>(outcomes: &[TaskOutcome], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER.split(','))?;
    for o in outcomes {
        let (len, avg, path) = match &o.path {
            Some(p) => (
                p.hops().to_string(),
                p.avg_trust.to_string(),
                p.path.iter().map(ToString::to_string).collect::<Vec<_>>().join("-"),
            ),
            None => ("0".into(), "0".into(), String::new()),
        };
        w.write_record([
            o.task.to_string(),
            o.initiator.to_string(),
            o.planner.clone(),
            o.status.as_str().to_string(),
            len,
            avg,
            u8::from(o.status == TaskStatus::Ok).to_string(),
            path,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PipelineSummary {
    pub cste: Vec<TaskOutcome>,
    pub greedy: Vec<TaskOutcome>,
    pub report: TrainReport,
}

impl PipelineSummary {
    pub fn success_count(&self) -> usize {
        self.cste.iter().filter(|o| o.status == TaskStatus::Ok).count()
    }

    pub fn mean_avg_trust(&self) -> f64 {
        self.cste.iter().map(TaskOutcome::avg_trust).sum::<f64>() / self.cste.len() as f64
    }
}

/// Opens `path` for reading; errors name the file.
pub fn open_file(path: &Path) -> Result<std::io::BufReader<File>> {
    File::open(path).map(std::io::BufReader::new).map_err(|e| Error::file(path, e))
}

/// Creates `path` for writing, along with missing parent directories.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::file(path, e))
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut w = create_file(path)?;
    w.write_all(contents.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::file(path, e))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    create_file(&dir.join(name))
}

/// Runs every stage and writes its artifacts under `out_dir`:
/// `config.toml`, `topology.json`, `records.csv`, `graph.csv`,
/// `embeddings.csv`, `model.json`, `metrics.csv`, `trust.csv`, `summary.csv`
/// (planned paths) and `baseline.csv` (greedy paths).
pub fn run_pipeline(config: &ExperimentConfig, out_dir: &Path) -> Result<PipelineSummary> {
    config.validate().stage("config")?;
    write_file(&out_dir.join("config.toml"), &config.to_toml()?).stage("output")?;

    let topology = build_random_topology(&config.topology, config.seed).stage("topology")?;
    write_file(&out_dir.join("topology.json"), &topology.to_json()?).stage("topology")?;

    let trained = train_pipeline(config, &topology)?;
    netsim::write_records(&trained.records, create(out_dir, "records.csv")?).stage("simulate")?;
    trained.graph.write_csv(create(out_dir, "graph.csv")?).stage("build-graph")?;
    trained.embeddings.write_csv(create(out_dir, "embeddings.csv")?).stage("embed")?;
    trained.model.save_json(&out_dir.join("model.json")).stage("train")?;
    trained.report.write_csv(create(out_dir, "metrics.csv")?).stage("train")?;
    trained.trust.write_csv(create(out_dir, "trust.csv")?).stage("train")?;

    let mut cste = Vec::new();
    let mut greedy = Vec::new();
    for (k, initiator) in evaluation_initiators(&topology, config.tasks.n_eval, config.seed).into_iter().enumerate() {
        let mut o = plan_task(&topology, &trained.trust, k, initiator, config, &[Planner::Cste, Planner::Greedy])?;
        greedy.push(o.pop().expect("two planners"));
        cste.push(o.pop().expect("two planners"));
    }
    write_outcomes(&cste, create(out_dir, "summary.csv")?).stage("plan")?;
    write_outcomes(&greedy, create(out_dir, "baseline.csv")?).stage("plan")?;
    Ok(PipelineSummary {
        cste,
        greedy,
        report: trained.report,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepVariable {
    Plr,
    Tfsr,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Plr => "plr",
            SweepVariable::Tfsr => "tfsr",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub planner: String,
    pub mean_avg_trust: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn mean(&self, value: f64, planner: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.value == value && r.planner == planner)
            .map(|r| r.mean_avg_trust)
    }

    pub fn series(&self, planner: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.planner == planner)
            .map(|r| (r.value, r.mean_avg_trust))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([self.variable.name(), "planner", "mean_avg_trust", "std"])?;
        for r in &self.rows {
            w.write_record([r.value.to_string(), r.planner.clone(), r.mean_avg_trust.to_string(), r.std.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Terminals whose behavior a sweep overrides; fixed across grid points.
pub fn affected_terminals(topology: &Topology, fraction: f64, seed: u64) -> Vec<DeviceId> {
    let mut terminals: Vec<DeviceId> = topology.terminals().map(|d| d.id).collect();
    let count = (terminals.len() as f64 * fraction).round() as usize;
    terminals.shuffle(&mut rng::stream(seed, "affected", 0));
    terminals.truncate(count);
    terminals.sort_unstable();
    terminals
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

const SWEEP_PLANNERS: [Planner; 3] = [Planner::Cste, Planner::Greedy, Planner::Oracle];

fn sweep_point(config: &ExperimentConfig, base: &Topology, affected: &[DeviceId], variable: SweepVariable, value: f64) -> Result<Vec<SweepRow>> {
    let mut topology = base.clone();
    for &id in affected {
        let b = &mut topology.devices_mut()[id.index()].behavior;
        match variable {
            SweepVariable::Plr => b.true_plr = value,
            SweepVariable::Tfsr => b.true_tfsr = value,
        }
    }
    let mut config = config.clone();
    if let Some(readout) = config.sweep.readout {
        config.gnn.readout = readout;
    }
    let trained = train_pipeline(&config, &topology)?;
    let mut scores = vec![Vec::new(); SWEEP_PLANNERS.len()];
    for (k, initiator) in evaluation_initiators(&topology, config.tasks.n_eval, config.seed).into_iter().enumerate() {
        for (j, o) in plan_task(&topology, &trained.trust, k, initiator, &config, &SWEEP_PLANNERS)?.iter().enumerate() {
            scores[j].push(o.avg_trust());
        }
    }
    Ok(SWEEP_PLANNERS
        .iter()
        .zip(scores)
        .map(|(p, s)| {
            let (mean, std) = mean_std(&s);
            SweepRow {
                value,
                planner: p.name().to_string(),
                mean_avg_trust: mean,
                std,
            }
        })
        .collect())
}

/// Reruns the learning pipeline at every grid point with the affected
/// terminals' true behavior overridden. All points share the topology,
/// seeds and evaluation initiators, so differences come from the override.
/// Points run on separate threads; results are collected in grid order.
pub fn run_sweep(config: &ExperimentConfig, variable: SweepVariable) -> Result<SweepResult> {
    config.validate().stage("config")?;
    let topology = build_random_topology(&config.topology, config.seed).stage("topology")?;
    let affected = affected_terminals(&topology, config.sweep.affected_fraction, config.seed);
    let grid = match variable {
        SweepVariable::Plr => &config.sweep.plr_grid,
        SweepVariable::Tfsr => &config.sweep.tfsr_grid,
    };
    let results: Vec<Result<Vec<SweepRow>>> = std::thread::scope(|s| {
        let handles: Vec<_> = grid
            .iter()
            .map(|&value| {
                let (topology, affected) = (&topology, &affected);
                s.spawn(move || sweep_point(config, topology, affected, variable, value))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(SweepResult { variable, rows })
}

pub fn sweep_plr(config: &ExperimentConfig) -> Result<SweepResult> {
    run_sweep(config, SweepVariable::Plr)
}

pub fn sweep_tfsr(config: &ExperimentConfig) -> Result<SweepResult> {
    run_sweep(config, SweepVariable::Tfsr)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            seed: 7,
            ..Default::default()
        };
        c.topology.n_terminals = 14;
        c.topology.n_edge = 3;
        c.topology.width = 400.0;
        c.topology.height = 400.0;
        c.topology.radius = 160.0;
        c.workload.n_tasks = 300;
        c.workload.packets_per_task = 100;
        c.embedding.dim = 8;
        c.embedding.walks_per_node = 4;
        c.embedding.epochs = 2;
        c.gnn.layer_dims = vec![6];
        c.gnn.head_hidden = vec![6];
        c.gnn.epochs = 3;
        c.tasks.n_eval = 5;
        c.sweep.plr_grid = vec![0.0, 0.16];
        c.sweep.tfsr_grid = vec![0.5, 1.0];
        c
    }

    #[test]
    fn default_config_toml_round_trips() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c = ExperimentConfig::from_toml("seed = 3\n[tasks]\nn_eval = 4\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.tasks.n_eval, 4);
        assert_eq!(c.tasks.c_tf, 0.4);
        assert_eq!(c.gnn, GnnConfig::default());
    }

    #[test]
    fn config_rejects_out_of_range_grid() {
        let mut c = ExperimentConfig::default();
        c.sweep.plr_grid.push(1.5);
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.sweep.affected_fraction = -0.1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_grids() {
        let s = SweepConfig::default();
        assert_eq!(s.plr_grid.len(), 9);
        assert_eq!(s.plr_grid[8], 0.16);
        assert_eq!(s.tfsr_grid.len(), 11);
        assert_eq!((s.tfsr_grid[0], s.tfsr_grid[10]), (0.5, 1.0));
    }

    #[test]
    fn affected_subset_is_two_thirds_of_terminals() {
        let c = small_config();
        let topo = build_random_topology(&c.topology, c.seed).unwrap();
        let a = affected_terminals(&topo, 2.0 / 3.0, 1);
        assert_eq!(a.len(), 9);
        assert!(a.iter().all(|&id| !topo.device(id).is_edge()));
        assert_eq!(a, affected_terminals(&topo, 2.0 / 3.0, 1));
    }

    #[test]
    fn impossible_threshold_fails_every_task() {
        let mut c = small_config();
        c.tasks.c_tf = 1.01;
        let dir = tempfile::tempdir().unwrap();
        let s = run_pipeline(&c, dir.path()).unwrap();
        assert_eq!(s.cste.len(), c.tasks.n_eval);
        assert!(s.cste.iter().all(|o| o.status == TaskStatus::InvalidTask && o.path.is_none()));
        assert_eq!(s.success_count(), 0);
    }

    #[test]
    fn pipeline_writes_one_summary_row_per_task() {
        let c = small_config();
        let dir = tempfile::tempdir().unwrap();
        let s = run_pipeline(&c, dir.path()).unwrap();
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), c.tasks.n_eval + 1);
        assert_eq!(summary.lines().next().unwrap(), SUMMARY_HEADER);
        for o in &s.cste {
            assert!((0.0..=1.0).contains(&o.avg_trust()));
        }
        for f in ["topology.json", "records.csv", "graph.csv", "embeddings.csv", "model.json", "metrics.csv", "trust.csv", "baseline.csv", "config.toml"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn sweep_has_grid_times_planner_rows() {
        let c = small_config();
        let r = sweep_plr(&c).unwrap();
        assert_eq!(r.rows.len(), 2 * SWEEP_PLANNERS.len());
        assert!(r.rows.iter().all(|row| (0.0..=1.0).contains(&row.mean_avg_trust)));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "plr,planner,mean_avg_trust,std");
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn truncation_keeps_nearest_nodes() {
        use DeviceKind::{Edge as E, Terminal as T};
        let kinds = vec![T, T, T, T, E];
        let links: Vec<_> = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)].iter().map(|&(a, b)| (DeviceId(a), DeviceId(b))).collect();
        let trust = (1..5).map(|i| (DeviceId(i), 0.5)).collect();
        let t = TrustedTopology::new(kinds, &links, trust, DeviceId(0)).unwrap();
        let r = truncate_trusted(&t, 3).unwrap();
        assert_eq!(r.members().collect::<Vec<_>>(), vec![DeviceId(0), DeviceId(1), DeviceId(4)]);
        assert_eq!(truncate_trusted(&t, 10).unwrap(), t);
    }
}
