//! Graph neural network for historical trust.
//!
//! Each propagation layer builds recommendation messages from neighbor
//! embeddings and binary trust codes, weights neighbors with count-scaled
//! attention, and fuses a device's trustee-side and trustor-side aggregates.
//! Edge devices only have a trustee side. An MLP head maps a (trustor,
//! trustee) pair of final embeddings to a distribution over trust classes.
//! Gradients are computed by a hand-written reverse pass.

mod backward;
mod forward;
mod model;
mod tensor;

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use backward::{gradients, loss};
pub use forward::{ec_layer_forward, forward_all, message, neighbor_weights, predict, tf_layer_forward, GraphView, Link};
pub use model::{Dense, GnnConfig, GnnModel, LayerParams, Params, TrustReadout};
pub use tensor::{softmax, Matrix};

use crate::domain::{DeviceId, DeviceKind};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::rng;
use crate::trustgraph::{discretize, InteractionGraph};

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// A supervised (trustor, trustee) pair with its trust class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabeledEdge {
    pub trustor: usize,
    pub trustee: usize,
    pub class: usize,
}

/// Labels every edge of `graph` with the class of its direct trust.
pub fn labeled_edges(graph: &InteractionGraph, bins: usize) -> Result<Vec<LabeledEdge>> {
    graph
        .edges()
        .iter()
        .map(|e| {
            Ok(LabeledEdge {
                trustor: e.trustor.index(),
                trustee: e.trustee.index(),
                class: discretize(e.direct_trust, bins)?.class_index,
            })
        })
        .collect()
}

/// Collapses a class distribution into one trust value.
pub fn readout(probs: &[f64], mode: TrustReadout) -> f64 {
    match mode {
        TrustReadout::MaxProb => probs.iter().copied().fold(0.0, f64::max),
        TrustReadout::ExpectedBin => {
            let b = probs.len() as f64;
            probs
                .iter()
                .enumerate()
                .map(|(k, p)| p * (k as f64 + 0.5) / b)
                .sum()
        }
    }
}

/// Predicted historical trust per (trustor, trustee) pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainedTrust {
    pub t_his: BTreeMap<(DeviceId, DeviceId), f64>,
}

impl TrainedTrust {
    pub fn get(&self, trustor: DeviceId, trustee: DeviceId) -> Option<f64> {
        self.t_his.get(&(trustor, trustee)).copied()
    }

    /// Trust that `initiator` places in every other device.
    pub fn from_initiator(&self, initiator: DeviceId) -> BTreeMap<DeviceId, f64> {
        self.t_his
            .range((initiator, DeviceId(0))..=(initiator, DeviceId(u32::MAX)))
            .map(|(&(_, j), &t)| (j, t))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["trustor", "trustee", "t_his"])?;
        for (&(i, j), t) in &self.t_his {
            w.write_record([i.to_string(), j.to_string(), t.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut t_his = BTreeMap::new();
        for row in r.deserialize::<(u32, u32, f64)>() {
            let (i, j, t) = row?;
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::invalid(format!("t_his {t} outside [0, 1]")));
            }
            t_his.insert((DeviceId(i), DeviceId(j)), t);
        }
        Ok(TrainedTrust { t_his })
    }
}

/// Evaluates every terminal's trust in every other device on `view`.
pub fn predict_all(model: &GnnModel, view: &GraphView, embeddings: &EmbeddingTable) -> Result<TrainedTrust> {
    let h = forward_all(view, embeddings, &model.params, model.config.leaky_slope)?;
    let mut t_his = BTreeMap::new();
    for i in 0..view.node_count() {
        if view.kinds[i] != DeviceKind::Terminal {
            continue;
        }
        for j in 0..view.node_count() {
            if i == j {
                continue;
            }
            let p = predict(&h[i], &h[j], &model.params.head)?;
            t_his.insert((DeviceId(i as u32), DeviceId(j as u32)), readout(&p, model.config.readout));
        }
    }
    Ok(TrainedTrust { t_his })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Epoch 0 is the untrained model.
    pub metrics: Vec<EpochMetrics>,
    pub train_edges: usize,
    pub test_edges: usize,
    /// Accuracy of always predicting the most frequent test class.
    pub majority_baseline: f64,
}

impl TrainReport {
    pub fn final_metrics(&self) -> &EpochMetrics {
        self.metrics.last().expect("epoch 0 is always recorded")
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for m in &self.metrics {
            w.serialize(m)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loss (without the L2 term) and accuracy over `edges`.
pub fn evaluate(params: &Params, view: &GraphView, embeddings: &EmbeddingTable, edges: &[LabeledEdge], slope: f64) -> Result<(f64, f64)> {
    let h = forward_all(view, embeddings, params, slope)?;
    let mut ce = 0.0;
    let mut correct = 0usize;
    for e in edges {
        let p = predict(&h[e.trustor], &h[e.trustee], &params.head)?;
        ce -= p[e.class].max(PROB_FLOOR).ln();
        let argmax = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a))).unwrap_or(0);
        correct += usize::from(argmax == e.class);
    }
    let n = edges.len().max(1) as f64;
    Ok((ce / n, correct as f64 / n))
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &Params, lr: f64) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut Params, grads: &Params) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = Self::BETA1 * m.data[i] + (1.0 - Self::BETA1) * gi;
                v.data[i] = Self::BETA2 * v.data[i] + (1.0 - Self::BETA2) * gi * gi;
                p.data[i] -= self.lr * (m.data[i] / c1) / ((v.data[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Trains on a seeded 80/20 edge split. Message passing during training and
/// evaluation uses only training edges, so held-out edges never leak their
/// own trust codes; final predictions use the full graph.
pub fn train(
    graph: &InteractionGraph,
    embeddings: &EmbeddingTable,
    config: &GnnConfig,
    seed: u64,
) -> Result<(GnnModel, TrainedTrust, TrainReport)> {
    config.validate()?;
    if embeddings.len() != graph.node_count() {
        return Err(Error::Dimension(format!(
            "{} embeddings for {} devices",
            embeddings.len(),
            graph.node_count()
        )));
    }
    let labeled = labeled_edges(graph, config.bins)?;
    if labeled.len() < config.bins {
        return Err(Error::invalid(format!(
            "{} labeled edges, need at least {}",
            labeled.len(),
            config.bins
        )));
    }

    let mut order: Vec<usize> = (0..labeled.len()).collect();
    order.shuffle(&mut rng::stream(seed, "split", 0));
    let n_train = ((labeled.len() as f64 * config.train_fraction).round() as usize).clamp(1, labeled.len() - 1);
    let mut is_train = vec![false; labeled.len()];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let train_set: Vec<LabeledEdge> = order[..n_train].iter().map(|&i| labeled[i]).collect();
    let test_set: Vec<LabeledEdge> = order[n_train..].iter().map(|&i| labeled[i]).collect();
    let train_view = GraphView::new(&graph.subgraph(|i| is_train[i]), config.bins)?;

    let mut class_counts = vec![0usize; config.bins];
    for e in &test_set {
        class_counts[e.class] += 1;
    }
    let majority_baseline = *class_counts.iter().max().unwrap_or(&0) as f64 / test_set.len() as f64;

    let mut model = GnnModel::xavier(config, embeddings.dim, &mut rng::stream(seed, "init", 0))?;
    let slope = config.leaky_slope;
    let l2 = config.l2;
    let record = |params: &Params, epoch: usize| -> Result<EpochMetrics> {
        let (train_ce, _) = evaluate(params, &train_view, embeddings, &train_set, slope)?;
        let (test_loss, test_acc) = evaluate(params, &train_view, embeddings, &test_set, slope)?;
        let train_loss = train_ce + l2 * params.squared_norm();
        if !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        Ok(EpochMetrics {
            epoch,
            train_loss,
            test_loss,
            test_acc,
        })
    };

    let mut metrics = vec![record(&model.params, 0)?];
    let mut adam = Adam::new(&model.params, config.learning_rate);
    let mut dropout_rng = rng::stream(seed, "dropout", 0);
    let mut batch_order = train_set.clone();
    for epoch in 1..=config.epochs {
        batch_order.shuffle(&mut rng::stream(seed, "epoch", epoch as u64));
        for (b, batch) in batch_order.chunks(config.batch_size).enumerate() {
            let (batch_loss, grads) = gradients(
                &model.params,
                &train_view,
                embeddings,
                batch,
                l2,
                slope,
                Some((config.dropout, &mut dropout_rng)),
            )?;
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(&mut model.params, &grads);
        }
        let m = record(&model.params, epoch)?;
        log::debug!(
            "epoch {epoch}: train {:.4} test {:.4} acc {:.3}",
            m.train_loss,
            m.test_loss,
            m.test_acc
        );
        metrics.push(m);
    }

    let full_view = GraphView::new(graph, config.bins)?;
    let trust = predict_all(&model, &full_view, embeddings)?;
    let report = TrainReport {
        metrics,
        train_edges: train_set.len(),
        test_edges: test_set.len(),
        majority_baseline,
    };
    Ok((model, trust, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trustgraph::TrustEdge;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_graph() -> InteractionGraph {
        let kinds = vec![
            DeviceKind::Terminal,
            DeviceKind::Terminal,
            DeviceKind::Terminal,
            DeviceKind::Edge,
        ];
        let e = |a: u32, b: u32, t: f64, n: u64| TrustEdge {
            trustor: DeviceId(a),
            trustee: DeviceId(b),
            direct_trust: t,
            n_interactions: n,
        };
        let edges = vec![
            e(0, 1, 0.9, 3),
            e(1, 0, 0.4, 1),
            e(1, 2, 0.7, 2),
            e(2, 0, 0.2, 4),
            e(0, 3, 0.6, 2),
            e(2, 3, 0.95, 1),
            e(1, 3, 0.1, 5),
        ];
        InteractionGraph::from_edges(kinds, edges).unwrap()
    }

    #[test]
    fn readout_modes() {
        let uniform = vec![0.1; 10];
        assert!((readout(&uniform, TrustReadout::MaxProb) - 0.1).abs() < 1e-15);
        assert!((readout(&uniform, TrustReadout::ExpectedBin) - 0.5).abs() < 1e-12);
        let mut one_hot = vec![0.0; 10];
        one_hot[2] = 1.0;
        assert_eq!(readout(&one_hot, TrustReadout::MaxProb), 1.0);
        assert!((readout(&one_hot, TrustReadout::ExpectedBin) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn loss_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = GnnModel::xavier(&GnnConfig::default(), 4, &mut rng).unwrap();
        let uniform = vec![vec![0.1; 10]; 3];
        let l = loss(&uniform, &[0, 4, 9], &model.params, 0.0).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        assert!((l - std::f64::consts::LN_10).abs() < 1e-6);

        let mut one_hot = vec![0.0; 10];
        one_hot[3] = 1.0;
        assert_eq!(loss(&[one_hot.clone()], &[3], &model.params, 0.0).unwrap(), 0.0);
        // Wrong class: probability clamped at the floor.
        let clamped = loss(&[one_hot], &[2], &model.params, 0.0).unwrap();
        assert!((clamped - (-PROB_FLOOR.ln())).abs() < 1e-9);

        // L2 term: set every parameter to 0.5 so ||theta||^2 = 0.25 * count.
        let mut params = model.params.clone();
        params.tensors_mut().into_iter().for_each(|t| t.data.fill(0.5));
        let count = params.parameter_count() as f64;
        let with = loss(&uniform, &[0, 0, 0], &params, 1e-5).unwrap();
        let without = loss(&uniform, &[0, 0, 0], &params, 0.0).unwrap();
        assert!((with - without - 1e-5 * 0.25 * count).abs() < 1e-12);

        assert!(loss(&uniform, &[10, 0, 0], &model.params, 0.0).is_err());
    }

    #[test]
    fn l2_gradient_is_exact() {
        // With zeroed head weights and biases the data term's gradient
        // w.r.t. layer parameters vanishes, leaving 2 * lambda * theta.
        let g = tiny_graph();
        let cfg = GnnConfig {
            layer_dims: vec![2],
            head_hidden: vec![],
            bins: 4,
            ..GnnConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = GnnModel::xavier(&cfg, 2, &mut rng).unwrap();
        for d in &mut model.params.head {
            d.weight.data.fill(0.0);
            d.bias.data.fill(0.0);
        }
        let view = GraphView::new(&g, 4).unwrap();
        let emb = crate::embed::gaussian_embeddings(4, 2, 1);
        let batch = labeled_edges(&g, 4).unwrap();
        let lambda = 0.3;
        let (_, grads) = gradients::<ChaCha8Rng>(&model.params, &view, &emb, &batch, lambda, 0.2, None).unwrap();
        for (gl, pl) in grads.layers.iter().zip(&model.params.layers) {
            for (gt, pt) in [(&gl.in_msg, &pl.in_msg), (&gl.attn, &pl.attn), (&gl.fuse_tf, &pl.fuse_tf)] {
                for (a, b) in gt.data.iter().zip(&pt.data) {
                    assert_eq!(*a, 2.0 * lambda * b);
                }
            }
        }
    }

    #[test]
    fn zero_loss_batch_has_tiny_gradients() {
        let g = tiny_graph();
        let cfg = GnnConfig {
            layer_dims: vec![2],
            head_hidden: vec![],
            bins: 4,
            l2: 0.0,
            ..GnnConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = GnnModel::xavier(&cfg, 2, &mut rng).unwrap();
        // Saturate the output so class 1 always wins by a huge margin.
        let head = &mut model.params.head[0];
        head.weight.data.fill(0.0);
        head.bias.data = vec![-40.0, 40.0, -40.0, -40.0];
        let view = GraphView::new(&g, 4).unwrap();
        let emb = crate::embed::gaussian_embeddings(4, 2, 1);
        let batch = [LabeledEdge {
            trustor: 0,
            trustee: 1,
            class: 1,
        }];
        let (l, grads) = gradients::<ChaCha8Rng>(&model.params, &view, &emb, &batch, 0.0, 0.2, None).unwrap();
        assert!(l < 1e-30);
        assert!(grads.tensors().iter().all(|t| t.data.iter().all(|x| x.abs() < 1e-30)));
    }

    #[test]
    fn trained_trust_csv_round_trip() {
        let mut t = TrainedTrust::default();
        t.t_his.insert((DeviceId(0), DeviceId(1)), 0.25);
        t.t_his.insert((DeviceId(0), DeviceId(3)), 0.875);
        t.t_his.insert((DeviceId(2), DeviceId(1)), 0.5);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(TrainedTrust::read_csv(buf.as_slice()).unwrap(), t);
        let from0 = t.from_initiator(DeviceId(0));
        assert_eq!(from0.len(), 2);
        assert_eq!(from0[&DeviceId(3)], 0.875);
    }

    #[test]
    fn training_is_deterministic_and_learns_tiny_graph() {
        let g = tiny_graph();
        let cfg = GnnConfig {
            layer_dims: vec![4],
            head_hidden: vec![8],
            bins: 4,
            epochs: 30,
            dropout: 0.0,
            learning_rate: 1e-2,
            ..GnnConfig::default()
        };
        let emb = crate::embed::gaussian_embeddings(4, 3, 2);
        let (m1, t1, r1) = train(&g, &emb, &cfg, 9).unwrap();
        let (m2, t2, r2) = train(&g, &emb, &cfg, 9).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(t1, t2);
        assert_eq!(r1, r2);
        assert!(r1.final_metrics().train_loss < r1.metrics[0].train_loss);
        // Three terminals, each paired with the three other devices.
        assert_eq!(t1.t_his.len(), 9);
        assert!(t1.t_his.values().all(|&t| (0.25..=1.0).contains(&t)));
    }

    #[test]
    fn too_few_edges_is_an_error() {
        let g = tiny_graph();
        let emb = crate::embed::gaussian_embeddings(4, 3, 2);
        assert!(train(&g, &emb, &GnnConfig::default(), 1).is_err());
    }
}
