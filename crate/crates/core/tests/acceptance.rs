//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 2 5`.
// A NaN error must count as a failure, hence the negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]


use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cste_core::domain::{build_random_topology, BehaviorProfile, Device, DeviceId, DeviceKind, Point, Task};
use cste_core::embed::EmbeddingTable;
use cste_core::experiment::{self, ExperimentConfig, SweepResult};
use cste_core::gnnet::{self, forward_all, gradients, loss, neighbor_weights, predict, GnnConfig, GnnModel, GraphView, Params};
use cste_core::netsim::InteractionRecord;
use cste_core::planner::{self, TrustedTopology};
use cste_core::restrust::{self, RadioModel};
use cste_core::trustgraph::{self, InteractionGraph, TrustEdge, TrustWeights};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// 1. Formula oracles

fn random_forward(r: &mut ChaCha8Rng, task: u64) -> InteractionRecord {
    let p_tot = r.random_range(1..=2000u64);
    let p_lost = r.random_range(0..=p_tot);
    let p_tra = r.random_range(0..=p_tot - p_lost);
    InteractionRecord::forward(task, DeviceId(0), DeviceId(1), p_tot, p_lost, p_tra)
}

fn device(r: &mut ChaCha8Rng, kind: DeviceKind) -> Device {
    Device {
        id: DeviceId(0),
        kind,
        position: Point { x: 0.0, y: 0.0 },
        cpu_freq: r.random_range(0.5..4.0),
        energy_avail: r.random_range(0.0..3000.0),
        storage_avail: r.random_range(0.0..1e9),
        idle: r.random_bool(0.8),
        behavior: BehaviorProfile {
            true_plr: 0.0,
            true_tfsr: 1.0,
            exec_success: 1.0,
        },
    }
}

fn formula_oracles() -> Outcome {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    let mut mismatches = Vec::new();
    let mut note = |name: &str, got: f64, want: f64| {
        let err = (got - want).abs();
        worst = worst.max(err);
        if !(err <= 1e-12) {
            mismatches.push(format!("{name}: {got} vs {want}"));
        }
    };
    for i in 0..1000u64 {
        let n = r.random_range(1..20);
        let recs: Vec<InteractionRecord> = (0..n).map(|k| random_forward(&mut r, k)).collect();
        let refs: Vec<&InteractionRecord> = recs.iter().collect();

        let mut plr = 0.0;
        for x in &recs {
            plr += (x.p_tot - x.p_lost) as f64 / x.p_tot as f64;
        }
        plr /= n as f64;
        note("plr_trust", trustgraph::plr_trust(&refs).unwrap(), plr);

        let eligible: Vec<&InteractionRecord> = recs.iter().filter(|x| x.p_tot != x.p_lost).collect();
        if !eligible.is_empty() {
            let tfsr = eligible.iter().map(|x| x.p_tra as f64 / (x.p_tot - x.p_lost) as f64).sum::<f64>() / eligible.len() as f64;
            note("tfsr_trust", trustgraph::tfsr_trust(&refs).unwrap(), tfsr);
        }

        let a1 = r.random_range(0.0..=1.0);
        let w = TrustWeights { alpha1: a1, alpha2: 1.0 - a1 };
        let (tp, tt) = (r.random::<f64>(), r.random::<f64>());
        note("direct_trust_tf", trustgraph::direct_trust_tf(tp, tt, w).unwrap(), a1 * tp + (1.0 - a1) * tt);

        let outcomes: Vec<bool> = (0..n).map(|_| r.random_bool(0.6)).collect();
        let ec: Vec<InteractionRecord> = outcomes
            .iter()
            .enumerate()
            .map(|(k, &s)| InteractionRecord::compute(k as u64, DeviceId(0), DeviceId(1), s))
            .collect();
        let ec_refs: Vec<&InteractionRecord> = ec.iter().collect();
        let succ = outcomes.iter().filter(|&&s| s).count() as f64 / n as f64;
        note("direct_trust_ec", trustgraph::direct_trust_ec(&ec_refs).unwrap(), succ);

        let t_his = r.random::<f64>();
        let gate = r.random_range(0..=1u8);
        note("composite_trust", planner::composite_trust(t_his, gate), if gate == 1 { t_his } else { 0.0 });

        let bins = r.random_range(2..=32usize);
        let t = if i % 10 == 0 { r.random_range(0..=bins) as f64 / bins as f64 } else { r.random::<f64>() };
        let mut class = 0;
        while class + 1 < bins && (class + 1) as f64 / bins as f64 <= t {
            class += 1;
        }
        let mut width = 0;
        while (1usize << width) < bins {
            width += 1;
        }
        let code: Vec<u8> = (0..width).map(|b| (class / (1 << b) % 2) as u8).collect();
        let got = trustgraph::discretize(t, bins).unwrap();
        note("discretize.class", got.class_index as f64, class as f64);
        let code_matches = got.code == code;
        note("discretize.code", f64::from(u8::from(code_matches)), 1.0);

        let radio = RadioModel::new(r.random_range(1e-9..1e-7), r.random_range(1e-12..1e-9)).unwrap();
        let task = Task::new(DeviceId(1), r.random_range(100.0..5000.0), r.random_range(1e6..1e9), 0.4, 0.3).unwrap();
        let dist = r.random_range(0.0..300.0);
        let relay = device(&mut r, DeviceKind::Terminal);
        let need = task.c_size * radio.e_elec + task.c_size * (radio.e_elec + radio.e_amp * dist * dist);
        let want_tf = relay.idle && relay.storage_avail >= task.c_size && relay.energy_avail >= need;
        note("resource_trust_tf", restrust::resource_trust_tf(&relay, &task, dist, &radio) as f64, want_tf as u8 as f64);
        let eps = r.random_range(1e-12..1e-10);
        let edge = device(&mut r, DeviceKind::Edge);
        let need = eps * edge.cpu_freq.powi(2) * task.c_des * task.c_size;
        let want_ec = edge.idle && edge.storage_avail >= task.c_size && edge.energy_avail >= need;
        note("resource_trust_ec", restrust::resource_trust_ec(&edge, &task, eps) as f64, want_ec as u8 as f64);
    }
    let detail = format!("7 formulas x 1000 inputs, max abs error {worst:e}");
    if mismatches.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {} mismatches, first: {}", mismatches.len(), mismatches[0]))
    }
}

// ---------------------------------------------------------------------------
// 2. Gradient check

fn tiny_graph() -> InteractionGraph {
    use DeviceKind::{Edge, Terminal};
    let e = |a: u32, b: u32, t: f64, n: u64| TrustEdge {
        trustor: DeviceId(a),
        trustee: DeviceId(b),
        direct_trust: t,
        n_interactions: n,
    };
    InteractionGraph::from_edges(
        vec![Terminal, Terminal, Terminal, Edge],
        vec![
            e(0, 1, 0.9, 3),
            e(1, 2, 0.3, 1),
            e(2, 0, 0.6, 2),
            e(2, 1, 0.1, 4),
            e(0, 3, 0.7, 2),
            e(1, 3, 0.45, 1),
            e(2, 3, 0.2, 5),
        ],
    )
    .unwrap()
}

fn batch_loss(params: &Params, view: &GraphView, emb: &EmbeddingTable, edges: &[gnnet::LabeledEdge], l2: f64, slope: f64) -> f64 {
    let h = forward_all(view, emb, params, slope).unwrap();
    let preds: Vec<Vec<f64>> = edges.iter().map(|e| predict(&h[e.trustor], &h[e.trustee], &params.head).unwrap()).collect();
    let labels: Vec<usize> = edges.iter().map(|e| e.class).collect();
    loss(&preds, &labels, params, l2).unwrap()
}

fn gradient_check() -> Outcome {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let graph = tiny_graph();
    let config = GnnConfig {
        layer_dims: vec![2],
        head_hidden: vec![2],
        bins: 4,
        l2: 1e-3,
        dropout: 0.0,
        ..GnnConfig::default()
    };
    let view = GraphView::new(&graph, config.bins).unwrap();
    let edges = gnnet::labeled_edges(&graph, config.bins).unwrap();
    let mut r = rng(2);
    let emb = EmbeddingTable::new(2, (0..4).map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect()).unwrap();
    let model = GnnModel::xavier(&config, 2, &mut r).unwrap();
    let slope = config.leaky_slope;

    let (_, analytic) = gradients::<ChaCha8Rng>(&model.params, &view, &emb, &edges, config.l2, slope, None).unwrap();
    let names = model.params.tensor_names();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (t, grad) in analytic.tensors().iter().enumerate() {
        for k in 0..grad.data.len() {
            let mut plus = model.params.clone();
            plus.tensors_mut()[t].data[k] += STEP;
            let mut minus = model.params.clone();
            minus.tensors_mut()[t].data[k] -= STEP;
            let numeric = (batch_loss(&plus, &view, &emb, &edges, config.l2, slope) - batch_loss(&minus, &view, &emb, &edges, config.l2, slope)) / (2.0 * STEP);
            let a = grad.data[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            if rel > worst.0 {
                worst = (rel, format!("{}[{k}]: analytic {a:e}, numeric {numeric:e}", names[t]));
            }
            checked += 1;
        }
    }
    check(worst.0 < 1e-4, format!("{checked} parameters, max relative error {:.2e} at {}", worst.0, worst.1))
}

// ---------------------------------------------------------------------------
// 3. Normalization

fn random_graph(r: &mut ChaCha8Rng) -> InteractionGraph {
    let n = r.random_range(3..9usize);
    let n_edge = r.random_range(1..=2usize);
    let kinds: Vec<DeviceKind> = (0..n).map(|i| if i + n_edge >= n { DeviceKind::Edge } else { DeviceKind::Terminal }).collect();
    let mut edges = Vec::new();
    for a in 0..n - n_edge {
        for b in 0..n {
            if a != b && r.random_bool(0.5) {
                edges.push(TrustEdge {
                    trustor: DeviceId(a as u32),
                    trustee: DeviceId(b as u32),
                    direct_trust: r.random(),
                    n_interactions: r.random_range(1..50),
                });
            }
        }
    }
    InteractionGraph::from_edges(kinds, edges).unwrap()
}

fn normalization() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    let (mut lists, mut dists) = (0usize, 0usize);
    for _ in 0..1000 {
        let graph = random_graph(&mut r);
        let n = graph.node_count();
        let dim = r.random_range(1..6usize);
        let config = GnnConfig {
            layer_dims: vec![r.random_range(1..6), r.random_range(1..6)],
            head_hidden: vec![r.random_range(1..6)],
            ..GnnConfig::default()
        };
        let view = GraphView::new(&graph, config.bins).unwrap();
        let emb = EmbeddingTable::new(dim, (0..n).map(|_| (0..dim).map(|_| r.random_range(-3.0..3.0)).collect()).collect()).unwrap();
        let model = GnnModel::xavier(&config, dim, &mut r).unwrap();
        let layer = &model.params.layers[0];
        for v in 0..n {
            for links in [&view.incoming[v], &view.outgoing[v]] {
                if links.is_empty() {
                    continue;
                }
                let hs: Vec<&[f64]> = links.iter().map(|l| emb.get(DeviceId(l.neighbor as u32))).collect();
                let counts: Vec<f64> = links.iter().map(|l| l.count).collect();
                let w = neighbor_weights(emb.get(DeviceId(v as u32)), &hs, &counts, layer, config.leaky_slope).unwrap();
                worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
                lists += 1;
            }
        }
        let h = forward_all(&view, &emb, &model.params, config.leaky_slope).unwrap();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let p = predict(&h[i], &h[j], &model.params.head).unwrap();
                    worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
                    dists += 1;
                }
            }
        }
    }
    check(worst <= 1e-9, format!("1000 forward passes, {lists} attention lists, {dists} predictions, max |sum - 1| {worst:e}"))
}

// ---------------------------------------------------------------------------
// 4. Training sanity

fn training() -> Outcome {
    let config = ExperimentConfig::default();
    let topology = build_random_topology(&config.topology, config.seed).map_err(|e| e.to_string())?;
    let trained = experiment::train_pipeline(&config, &topology).map_err(|e| e.to_string())?;
    let m = &trained.report.metrics;
    let acc = trained.report.final_metrics().test_acc;
    let base = trained.report.majority_baseline;
    let detail = format!(
        "{} devices, {} tasks: loss epoch 0 {:.4} -> epoch 10 {:.4}; test acc {:.3} vs majority {:.3} ({} held-out edges)",
        topology.len(),
        config.workload.n_tasks,
        m[0].train_loss,
        m[10].train_loss,
        acc,
        base,
        trained.report.test_edges
    );
    check(topology.len() == 60 && m[10].train_loss < m[0].train_loss && acc >= base + 0.05, detail)
}

// ---------------------------------------------------------------------------
// 5. Planner vs oracle

fn random_trusted(r: &mut ChaCha8Rng) -> TrustedTopology {
    let n = r.random_range(3..=12usize);
    let n_edge = r.random_range(1..=3usize).min(n - 1);
    let kinds: Vec<DeviceKind> = (0..n).map(|i| if i + n_edge >= n { DeviceKind::Edge } else { DeviceKind::Terminal }).collect();
    let p = r.random_range(0.2..0.6);
    let mut links = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if r.random_bool(p) {
                links.push((DeviceId(a as u32), DeviceId(b as u32)));
            }
        }
    }
    let (c_tf, c_ec) = (0.4, 0.3);
    let trust: BTreeMap<DeviceId, f64> = (1..n)
        .map(|i| (DeviceId(i as u32), r.random::<f64>()))
        .filter(|&(id, t)| t >= if kinds[id.index()] == DeviceKind::Edge { c_ec } else { c_tf })
        .collect();
    TrustedTopology::new(kinds, &links, trust, DeviceId(0)).unwrap()
}

fn planner_vs_oracle() -> Outcome {
    let mut r = rng(5);
    let (mut solvable, mut within, mut exact, mut invalid, mut missed) = (0, 0, 0, 0, 0);
    let mut worst_gap = 0.0f64;
    for _ in 0..200 {
        let t = random_trusted(&mut r);
        let oracle = planner::brute_force_best(&t, DeviceId(0), 12).unwrap();
        let plan = planner::astar_plan(&t, DeviceId(0));
        let Some(best) = oracle else {
            if plan.is_some() {
                invalid += 1;
            }
            continue;
        };
        solvable += 1;
        let Some(plan) = plan else {
            missed += 1;
            continue;
        };
        let thresholds_ok = plan.path[1..].iter().all(|&id| t.trust(id).is_some_and(|v| v >= if t.is_edge(id) { 0.3 } else { 0.4 }));
        if plan.validate(&t).is_err() || !thresholds_ok || plan.avg_trust > best.avg_trust + 1e-12 {
            invalid += 1;
            continue;
        }
        let gap = (best.avg_trust - plan.avg_trust) / best.avg_trust;
        worst_gap = worst_gap.max(gap);
        if gap <= 0.05 {
            within += 1;
        }
        if (best.avg_trust - plan.avg_trust).abs() <= 1e-12 {
            exact += 1;
        }
    }
    let rate = within as f64 / solvable as f64;
    let detail = format!(
        "{solvable}/200 solvable; within 5%: {within} ({:.1}%); exact agreement: {exact} ({:.1}%); worst gap {:.1}%; missed {missed}; invalid {invalid}",
        100.0 * rate,
        100.0 * exact as f64 / solvable as f64,
        100.0 * worst_gap
    );
    check(missed == 0 && invalid == 0 && rate >= 0.95, detail)
}

// ---------------------------------------------------------------------------
// 6, 7. Sweep trend gates

fn dominance(result: &SweepResult) -> Vec<String> {
    let greedy = result.series("greedy");
    result
        .series("cste")
        .iter()
        .zip(&greedy)
        .filter(|((_, c), (_, g))| c < g)
        .map(|((v, c), (_, g))| format!("{v}: cste {c:.4} < greedy {g:.4}"))
        .collect()
}

fn series_text(result: &SweepResult, planner: &str) -> String {
    result.series(planner).iter().map(|(_, m)| format!("{m:.3}")).collect::<Vec<_>>().join(" ")
}

fn plr_trend() -> Outcome {
    let result = experiment::sweep_plr(&ExperimentConfig::default()).map_err(|e| e.to_string())?;
    let (lo, hi) = (result.mean(0.0, "cste").unwrap(), result.mean(0.16, "cste").unwrap());
    let losses = dominance(&result);
    let detail = format!(
        "cste [{}], greedy [{}]; 0% {lo:.4} -> 16% {hi:.4}; greedy wins at {losses:?}",
        series_text(&result, "cste"),
        series_text(&result, "greedy")
    );
    check(losses.is_empty() && hi < lo, detail)
}

fn tfsr_trend() -> Outcome {
    let result = experiment::sweep_tfsr(&ExperimentConfig::default()).map_err(|e| e.to_string())?;
    let (lo, hi) = (result.mean(0.5, "cste").unwrap(), result.mean(1.0, "cste").unwrap());
    let losses = dominance(&result);
    let detail = format!(
        "cste [{}], greedy [{}]; 50% {lo:.4} -> 100% {hi:.4}; greedy wins at {losses:?}",
        series_text(&result, "cste"),
        series_text(&result, "greedy")
    );
    check(losses.is_empty() && hi > lo, detail)
}

// ---------------------------------------------------------------------------
// 8. Determinism

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let config = ExperimentConfig::default();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    experiment::run_pipeline(&config, a.path()).map_err(|e| e.to_string())?;
    experiment::run_pipeline(&config, b.path()).map_err(|e| e.to_string())?;
    let (fa, fb) = (read_dir_sorted(a.path()), read_dir_sorted(b.path()));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let bytes: usize = fa.iter().map(|(_, d)| d.len()).sum();
    check(
        fa.len() == fb.len() && differing.is_empty() && fa.len() >= 10,
        format!("{} files ({bytes} bytes) compared: {names:?}; differing: {differing:?}", fa.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("formula oracles", formula_oracles),
        ("gradient check", gradient_check),
        ("softmax normalization", normalization),
        ("training sanity", training),
        ("planner vs oracle", planner_vs_oracle),
        ("PLR sweep trend", plr_trend),
        ("TFSR sweep trend", tfsr_trend),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !selected.is_empty() && !selected.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {number}. {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {number}. {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
