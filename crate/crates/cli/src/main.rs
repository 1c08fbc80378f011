//! `cste`: runs the trust evaluation pipeline stage by stage or end to end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cste_core::domain::{build_random_topology, DeviceId, DeviceKind, Topology};
use cste_core::embed::{init_embeddings, EmbeddingTable};
use cste_core::error::StageExt;
use cste_core::experiment::{self, create_file, open_file, write_file, ExperimentConfig, Planner};
use cste_core::gnnet::{self, TrainedTrust};
use cste_core::netsim;
use cste_core::trustgraph::{build_graph, InteractionGraph};
use cste_core::Result;

#[derive(Parser, Debug)]
#[command(name = "cste", version, about = "Composite staged trust evaluation and multi-hop path planning")]
struct Cli {
    /// Experiment configuration (TOML). Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the effective configuration as TOML.
    Config,
    /// Generate a random connected topology.
    Topology {
        #[arg(long, default_value = "topology.json")]
        out: PathBuf,
    },
    /// Simulate the task workload and log interaction records.
    Simulate {
        #[arg(long, default_value = "topology.json")]
        topology: PathBuf,
        #[arg(long, default_value = "records.csv")]
        out: PathBuf,
    },
    /// Aggregate interaction records into the direct-trust graph.
    BuildGraph {
        #[arg(long, default_value = "topology.json")]
        topology: PathBuf,
        #[arg(long, default_value = "records.csv")]
        records: PathBuf,
        #[arg(long, default_value = "graph.csv")]
        out: PathBuf,
    },
    /// Compute initial device embeddings from random walks.
    Embed {
        #[arg(long, default_value = "topology.json")]
        topology: PathBuf,
        #[arg(long, default_value = "graph.csv")]
        graph: PathBuf,
        #[arg(long, default_value = "embeddings.csv")]
        out: PathBuf,
    },
    /// Train the trust GNN; writes model.json, metrics.csv and trust.csv.
    Train {
        #[arg(long, default_value = "topology.json")]
        topology: PathBuf,
        #[arg(long, default_value = "graph.csv")]
        graph: PathBuf,
        #[arg(long, default_value = "embeddings.csv")]
        embeddings: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Plan a path for one task and print it as JSON.
    Plan {
        #[arg(long, default_value = "topology.json")]
        topology: PathBuf,
        #[arg(long, default_value = "trust.csv")]
        trust: PathBuf,
        #[arg(long)]
        initiator: u32,
        #[arg(long, value_enum, default_value_t = PlannerArg::Cste)]
        planner: PlannerArg,
    },
    /// Sweep the injected packet loss rate.
    SweepPlr {
        #[arg(long, default_value = "sweep_plr.csv")]
        out: PathBuf,
    },
    /// Sweep the injected task forwarding success rate.
    SweepTfsr {
        #[arg(long, default_value = "sweep_tfsr.csv")]
        out: PathBuf,
    },
    /// Run every stage and plan the evaluation tasks.
    Pipeline {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PlannerArg {
    Cste,
    Greedy,
    Oracle,
}

impl From<PlannerArg> for Planner {
    fn from(p: PlannerArg) -> Self {
        match p {
            PlannerArg::Cste => Planner::Cste,
            PlannerArg::Greedy => Planner::Greedy,
            PlannerArg::Oracle => Planner::Oracle,
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn load_topology(path: &Path) -> Result<Topology> {
    let text = std::fs::read_to_string(path).map_err(|e| cste_core::Error::file(path, e))?;
    Topology::from_json(&text)
}

fn kinds(topology: &Topology) -> Vec<DeviceKind> {
    topology.devices().iter().map(|d| d.kind).collect()
}

fn load_graph(topology: &Path, graph: &Path) -> Result<(Topology, InteractionGraph)> {
    let topo = load_topology(topology)?;
    let graph = InteractionGraph::read_csv(open_file(graph)?, kinds(&topo), graph)?;
    Ok((topo, graph))
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli).stage("config")?;
    let seed = config.seed;
    match &cli.command {
        Command::Config => print!("{}", config.to_toml()?),
        Command::Topology { out } => {
            let topo = build_random_topology(&config.topology, seed).stage("topology")?;
            write_file(out, &topo.to_json()?).stage("topology")?;
            log::info!("wrote {} devices, {} links to {}", topo.len(), topo.links().len(), out.display());
        }
        Command::Simulate { topology, out } => {
            let result: Result<()> = (|| {
                let topo = load_topology(topology)?;
                let records = netsim::run_workload(&topo, config.workload.n_tasks, config.workload.packets_per_task, seed)?;
                netsim::write_records(&records, create_file(out)?)
            })();
            result.stage("simulate")?;
        }
        Command::BuildGraph { topology, records, out } => {
            let result: Result<()> = (|| {
                let topo = load_topology(topology)?;
                let records = netsim::load_records(records)?;
                let graph = build_graph(&records, kinds(&topo), config.trust)?;
                graph.write_csv(create_file(out)?)
            })();
            result.stage("build-graph")?;
        }
        Command::Embed { topology, graph, out } => {
            let result: Result<()> = (|| {
                let (_, graph) = load_graph(topology, graph)?;
                init_embeddings(&graph, &config.embedding, seed)?.write_csv(create_file(out)?)
            })();
            result.stage("embed")?;
        }
        Command::Train {
            topology,
            graph,
            embeddings,
            out_dir,
        } => {
            let result: Result<()> = (|| {
                let (_, graph) = load_graph(topology, graph)?;
                let emb = EmbeddingTable::read_csv(open_file(embeddings)?, embeddings)?;
                let (model, trust, report) = gnnet::train(&graph, &emb, &config.gnn, seed)?;
                std::fs::create_dir_all(out_dir).map_err(|e| cste_core::Error::file(out_dir, e))?;
                model.save_json(&out_dir.join("model.json"))?;
                report.write_csv(create_file(&out_dir.join("metrics.csv"))?)?;
                trust.write_csv(create_file(&out_dir.join("trust.csv"))?)?;
                let m = report.final_metrics();
                println!(
                    "epochs {}: test loss {:.4}, test accuracy {:.3} (majority baseline {:.3})",
                    m.epoch, m.test_loss, m.test_acc, report.majority_baseline
                );
                Ok(())
            })();
            result.stage("train")?;
        }
        Command::Plan {
            topology,
            trust,
            initiator,
            planner,
        } => {
            let result: Result<()> = (|| {
                let topo = load_topology(topology)?;
                let trust = TrainedTrust::read_csv(open_file(trust)?)?;
                let id = DeviceId(*initiator);
                if id.index() >= topo.len() {
                    return Err(cste_core::Error::UnknownDevice(id));
                }
                let outcome = experiment::plan_task(&topo, &trust, 0, id, &config, &[(*planner).into()])?
                    .pop()
                    .expect("one planner requested");
                match outcome.path {
                    Some(path) => println!("{}", path.to_json()?),
                    None => {
                        return Err(cste_core::Error::InvalidArgument(format!(
                            "no path for initiator {id}: {}",
                            outcome.status.as_str()
                        )))
                    }
                }
                Ok(())
            })();
            result.stage("plan")?;
        }
        Command::SweepPlr { out } => {
            let result = experiment::sweep_plr(&config)?;
            result.write_csv(create_file(out)?).stage("sweep")?;
        }
        Command::SweepTfsr { out } => {
            let result = experiment::sweep_tfsr(&config)?;
            result.write_csv(create_file(out)?).stage("sweep")?;
        }
        Command::Pipeline { out_dir } => {
            let summary = experiment::run_pipeline(&config, out_dir)?;
            println!(
                "{} of {} tasks planned, mean avg_trust {:.4}; artifacts in {}",
                summary.success_count(),
                summary.cste.len(),
                summary.mean_avg_trust(),
                out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
