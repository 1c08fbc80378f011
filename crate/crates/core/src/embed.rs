//! Initial device embeddings: node2vec-style second-order random walks over the
//! interaction graph (treated as undirected) followed by skip-gram training
//! with negative sampling.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::DeviceId;
use crate::error::{Error, Result};
use crate::rng;
use crate::trustgraph::InteractionGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkParams {
    pub dim: usize,
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        WalkParams {
            dim: 128,
            p: 1.0,
            q: 1.0,
            walk_length: 20,
            walks_per_node: 10,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
        }
    }
}

impl WalkParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.walk_length < 2 || self.walks_per_node == 0 || self.window == 0 {
            return Err(Error::invalid("walk parameters must be positive"));
        }
        if !(self.p > 0.0 && self.q > 0.0 && self.learning_rate > 0.0) {
            return Err(Error::invalid("p, q and learning_rate must be positive"));
        }
        Ok(())
    }
}

/// One vector per device, indexed by device id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, vectors: Vec<Vec<f64>>) -> Result<Self> {
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Dimension(format!(
                    "device {i}: vector length {} != {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("device {i}: non-finite entry")));
            }
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: DeviceId) -> &[f64] {
        &self.vectors[id.index()]
    }

    /// CSV with header `id,e0,e1,...`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim).map(|i| format!("e{i}")));
        w.write_record(&header)?;
        for (i, v) in self.vectors.iter().enumerate() {
            let mut row = vec![i.to_string()];
            row.extend(v.iter().map(|x| format!("{x:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let dim = r.headers()?.len().saturating_sub(1);
        let mut vectors = Vec::new();
        for (i, row) in r.records().enumerate() {
            let row_no = i + 2;
            let bad = |msg: String| Error::Row {
                path: path.to_owned(),
                row: row_no,
                msg,
            };
            let row = row?;
            let id: usize = row[0].parse().map_err(|e| bad(format!("id: {e}")))?;
            if id != i {
                return Err(bad(format!("expected id {i}, found {id}")));
            }
            let v = row
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(e.to_string()))?;
            vectors.push(v);
        }
        EmbeddingTable::new(dim, vectors)
    }
}

fn undirected_neighbors(graph: &InteractionGraph) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); graph.node_count()];
    for e in graph.edges() {
        adj[e.trustor.index()].push(e.trustee.index());
        adj[e.trustee.index()].push(e.trustor.index());
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

/// Second-order biased walks. Each (round, start node) pair has its own
/// derived RNG stream, so walks can be generated in any order.
pub fn generate_walks(graph: &InteractionGraph, params: &WalkParams, seed: u64) -> Vec<Vec<usize>> {
    let adj = undirected_neighbors(graph);
    let n = adj.len();
    let mut walks = Vec::with_capacity(n * params.walks_per_node);
    let mut order: Vec<usize> = (0..n).collect();
    for round in 0..params.walks_per_node {
        order.shuffle(&mut rng::stream(seed, "walk-order", round as u64));
        for &start in &order {
            if adj[start].is_empty() {
                continue;
            }
            let mut rng = rng::stream(seed, "walk", (round * n + start) as u64);
            walks.push(walk_from(&adj, start, params, &mut rng));
        }
    }
    walks
}

fn walk_from<R: Rng>(adj: &[Vec<usize>], start: usize, params: &WalkParams, rng: &mut R) -> Vec<usize> {
    let mut walk = vec![start];
    let first = &adj[start];
    walk.push(first[rng.random_range(0..first.len())]);
    let mut weights = Vec::new();
    while walk.len() < params.walk_length {
        let prev = walk[walk.len() - 2];
        let cur = walk[walk.len() - 1];
        let cands = &adj[cur];
        weights.clear();
        weights.extend(cands.iter().map(|&x| {
            if x == prev {
                1.0 / params.p
            } else if adj[prev].binary_search(&x).is_ok() {
                1.0
            } else {
                1.0 / params.q
            }
        }));
        let total: f64 = weights.iter().sum();
        let mut pick = rng.random::<f64>() * total;
        let mut next = cands[cands.len() - 1];
        for (&x, &w) in cands.iter().zip(&weights) {
            if pick < w {
                next = x;
                break;
            }
            pick -= w;
        }
        walk.push(next);
    }
    walk
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// node2vec embeddings for every node of `graph`.
pub fn init_embeddings(graph: &InteractionGraph, params: &WalkParams, seed: u64) -> Result<EmbeddingTable> {
    params.validate()?;
    let n = graph.node_count();
    if n == 0 {
        return Err(Error::invalid("cannot embed an empty graph"));
    }
    let d = params.dim;
    let walks = generate_walks(graph, params, seed);

    let mut rng = rng::stream(seed, "skipgram", 0);
    let mut input: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| (rng.random::<f64>() - 0.5) / d as f64).collect())
        .collect();
    let mut output = vec![vec![0.0; d]; n];

    // Negative sampling table over visit counts raised to 3/4.
    let mut counts = vec![0usize; n];
    for w in &walks {
        for &v in w {
            counts[v] += 1;
        }
    }
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &c in &counts {
        acc += (c as f64).powf(0.75);
        cumulative.push(acc);
    }

    let pairs_per_epoch: usize = walks
        .iter()
        .map(|w| {
            (0..w.len())
                .map(|i| (i + params.window).min(w.len() - 1) - i.saturating_sub(params.window))
                .sum::<usize>()
        })
        .sum();
    let total_pairs = (pairs_per_epoch * params.epochs).max(1) as f64;
    let mut seen = 0usize;
    let mut grad = vec![0.0; d];

    if acc > 0.0 {
        for _ in 0..params.epochs {
            for w in &walks {
                for (i, &center) in w.iter().enumerate() {
                    let lo = i.saturating_sub(params.window);
                    let hi = (i + params.window).min(w.len() - 1);
                    for (j, &ctx) in w.iter().enumerate().take(hi + 1).skip(lo) {
                        if j == i {
                            continue;
                        }
                        let lr = params.learning_rate * (1.0 - seen as f64 / total_pairs).max(1e-4);
                        seen += 1;
                        grad.iter_mut().for_each(|g| *g = 0.0);
                        for k in 0..=params.negatives {
                            let (target, label) = if k == 0 {
                                (ctx, 1.0)
                            } else {
                                let r = rng.random::<f64>() * acc;
                                let t = cumulative.partition_point(|&c| c <= r).min(n - 1);
                                if t == ctx {
                                    continue;
                                }
                                (t, 0.0)
                            };
                            let dot: f64 = input[center].iter().zip(&output[target]).map(|(a, b)| a * b).sum();
                            let g = lr * (label - sigmoid(dot));
                            for ((gr, o), x) in grad.iter_mut().zip(output[target].iter_mut()).zip(&input[center]) {
                                *gr += g * *o;
                                *o += g * x;
                            }
                        }
                        for (x, g) in input[center].iter_mut().zip(&grad) {
                            *x += g;
                        }
                    }
                }
            }
        }
    }

    let adj = undirected_neighbors(graph);
    for (v, neighbors) in adj.iter().enumerate() {
        if neighbors.is_empty() {
            log::warn!("device {v} has no interactions; using a random unit embedding");
            input[v] = random_unit(d, &mut rng::stream(seed, "isolated", v as u64));
        }
    }
    EmbeddingTable::new(d, input)
}

fn random_unit<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

/// Seeded Gaussian embeddings with standard deviation `1/sqrt(dim)`. Much
/// faster than walk training; useful when embedding quality is irrelevant.
pub fn gaussian_embeddings(n: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = rng::stream(seed, "gaussian-embed", 0);
    let scale = 1.0 / (dim as f64).sqrt();
    let vectors = (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z })
                .collect()
        })
        .collect();
    EmbeddingTable { dim, vectors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DeviceKind;
    use crate::trustgraph::TrustEdge;

    fn graph(n_term: usize, n_edge: usize, edges: &[(u32, u32)]) -> InteractionGraph {
        let mut kinds = vec![DeviceKind::Terminal; n_term];
        kinds.extend(vec![DeviceKind::Edge; n_edge]);
        let edges = edges
            .iter()
            .map(|&(a, b)| TrustEdge {
                trustor: DeviceId(a),
                trustee: DeviceId(b),
                direct_trust: 0.5,
                n_interactions: 1,
            })
            .collect();
        InteractionGraph::from_edges(kinds, edges).unwrap()
    }

    #[test]
    fn two_node_shape() {
        let g = graph(1, 1, &[(0, 1)]);
        let params = WalkParams {
            dim: 8,
            ..WalkParams::default()
        };
        let t = init_embeddings(&g, &params, 1).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.vectors.iter().all(|v| v.len() == 8 && v.iter().all(|x| x.is_finite())));
    }

    #[test]
    fn deterministic() {
        let g = graph(4, 1, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]);
        let params = WalkParams {
            dim: 16,
            ..WalkParams::default()
        };
        assert_eq!(init_embeddings(&g, &params, 5).unwrap(), init_embeddings(&g, &params, 5).unwrap());
    }

    #[test]
    fn isolated_node_gets_unit_vector() {
        let g = graph(3, 1, &[(0, 3)]);
        let params = WalkParams {
            dim: 8,
            ..WalkParams::default()
        };
        let t = init_embeddings(&g, &params, 2).unwrap();
        for v in [1, 2] {
            let norm: f64 = t.vectors[v].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn walks_stay_on_edges() {
        let g = graph(5, 1, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
        let params = WalkParams {
            p: 0.5,
            q: 2.0,
            ..WalkParams::default()
        };
        let adj = undirected_neighbors(&g);
        for w in generate_walks(&g, &params, 3) {
            assert_eq!(w.len(), params.walk_length);
            for pair in w.windows(2) {
                assert!(adj[pair[0]].contains(&pair[1]));
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let t = gaussian_embeddings(4, 3, 7);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = EmbeddingTable::read_csv(buf.as_slice(), Path::new("e")).unwrap();
        assert_eq!(t, back);
    }
}
