//! Forward pass: trust-coded messages, count-weighted attention, trustee and
//! trustor aggregation, fusion, and the prediction head.

use rand::Rng;

use super::model::{Dense, LayerParams, Params};
use super::tensor::{dot, softmax, Matrix};
use crate::domain::{DeviceId, DeviceKind};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::trustgraph::{discretize, InteractionGraph};

/// One directed trust edge seen from a center node.
#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub neighbor: usize,
    /// Binary class code of the edge's direct trust.
    pub code: Vec<f64>,
    pub count: f64,
}

/// Interaction graph preprocessed for message passing: neighbor lists sorted
/// by device id with trust codes attached.
#[derive(Clone, Debug)]
pub struct GraphView {
    pub kinds: Vec<DeviceKind>,
    pub incoming: Vec<Vec<Link>>,
    pub outgoing: Vec<Vec<Link>>,
}

impl GraphView {
    pub fn new(graph: &InteractionGraph, bins: usize) -> Result<Self> {
        let n = graph.node_count();
        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        for e in graph.edges() {
            let code: Vec<f64> = discretize(e.direct_trust, bins)?
                .code
                .iter()
                .map(|&b| f64::from(b))
                .collect();
            let count = e.n_interactions as f64;
            incoming[e.trustee.index()].push(Link {
                neighbor: e.trustor.index(),
                code: code.clone(),
                count,
            });
            outgoing[e.trustor.index()].push(Link {
                neighbor: e.trustee.index(),
                code,
                count,
            });
        }
        for list in incoming.iter_mut().chain(outgoing.iter_mut()) {
            list.sort_by_key(|l| l.neighbor);
        }
        Ok(GraphView {
            kinds: graph.kinds().to_vec(),
            incoming,
            outgoing,
        })
    }

    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }
}

#[inline]
pub(crate) fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub(crate) fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        slope
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Recommendation message from a neighbor: its embedding followed by the
/// transformed trust code.
pub fn message(h_src: &[f64], trust_code: &[f64], w_msg: &Matrix) -> Result<Vec<f64>> {
    if w_msg.rows != h_src.len() || w_msg.cols != trust_code.len() {
        return Err(Error::Dimension(format!(
            "message: W is {}x{}, h has {}, code has {}",
            w_msg.rows,
            w_msg.cols,
            h_src.len(),
            trust_code.len()
        )));
    }
    let mut mu = h_src.to_vec();
    mu.extend(w_msg.matvec(trust_code));
    Ok(mu)
}

/// Intermediate values of the neighbor weighting pipeline.
#[derive(Clone, Debug)]
pub(crate) struct Attention {
    /// Attention logits before LeakyReLU.
    pub raw: Vec<f64>,
    /// First softmax.
    pub first: Vec<f64>,
    /// Interaction-count fractions.
    pub frac: Vec<f64>,
    /// Final weights.
    pub psi: Vec<f64>,
}

pub(crate) fn attention(
    wh_center: &[f64],
    wh_neighbors: &[&[f64]],
    counts: &[f64],
    attn_vec: &Matrix,
    slope: f64,
) -> Attention {
    let d = wh_center.len();
    let (a_center, a_nbr) = attn_vec.data.split_at(d);
    let center_term = dot(a_center, wh_center);
    let raw: Vec<f64> = wh_neighbors
        .iter()
        .map(|wh| center_term + dot(a_nbr, wh))
        .collect();
    let scores: Vec<f64> = raw.iter().map(|&r| leaky(r, slope)).collect();
    let first = softmax(&scores);
    let total: f64 = counts.iter().sum();
    let frac: Vec<f64> = counts.iter().map(|c| c / total).collect();
    let scaled: Vec<f64> = first.iter().zip(&frac).map(|(s, f)| s * f).collect();
    let psi = softmax(&scaled);
    Attention {
        raw,
        first,
        frac,
        psi,
    }
}

/// Importance weights of a center node's neighbors: attention scores are
/// softmax-normalized, scaled by each neighbor's share of interactions, then
/// softmax-normalized again.
pub fn neighbor_weights(
    h_center: &[f64],
    neighbor_hs: &[&[f64]],
    counts: &[f64],
    layer: &LayerParams,
    slope: f64,
) -> Result<Vec<f64>> {
    if neighbor_hs.is_empty() {
        return Err(Error::invalid("neighbor_weights needs at least one neighbor"));
    }
    if neighbor_hs.len() != counts.len() {
        return Err(Error::Dimension("one count per neighbor required".into()));
    }
    if counts.iter().any(|&c| !(c >= 1.0)) {
        return Err(Error::invalid("interaction counts must be at least 1"));
    }
    let d = layer.d_in();
    if h_center.len() != d || neighbor_hs.iter().any(|h| h.len() != d) {
        return Err(Error::Dimension(format!("embeddings must have length {d}")));
    }
    let wh_center = layer.attn.matvec(h_center);
    let wh: Vec<Vec<f64>> = neighbor_hs.iter().map(|h| layer.attn.matvec(h)).collect();
    let refs: Vec<&[f64]> = wh.iter().map(Vec::as_slice).collect();
    Ok(attention(&wh_center, &refs, counts, &layer.attn_vec, slope).psi)
}

/// Aggregation over one role (trustee side or trustor side) of a node.
#[derive(Clone, Debug)]
pub(crate) struct RoleCache {
    pub neighbors: Vec<usize>,
    pub codes: Vec<Vec<f64>>,
    /// `W_msg * code` for each neighbor.
    pub tails: Vec<Vec<f64>>,
    pub attention: Attention,
    /// Weighted message sum, length `2 d_in`.
    pub agg: Vec<f64>,
}

fn aggregate(links: &[Link], center: usize, h: &[Vec<f64>], wh: &[Vec<f64>], w_msg: &Matrix, attn_vec: &Matrix, slope: f64) -> Option<RoleCache> {
    if links.is_empty() {
        return None;
    }
    let d = w_msg.rows;
    let neighbors: Vec<usize> = links.iter().map(|l| l.neighbor).collect();
    let codes: Vec<Vec<f64>> = links.iter().map(|l| l.code.clone()).collect();
    let counts: Vec<f64> = links.iter().map(|l| l.count).collect();
    let tails: Vec<Vec<f64>> = codes.iter().map(|c| w_msg.matvec(c)).collect();
    let wh_nbrs: Vec<&[f64]> = neighbors.iter().map(|&n| wh[n].as_slice()).collect();
    let attention = attention(&wh[center], &wh_nbrs, &counts, attn_vec, slope);
    let mut agg = vec![0.0; 2 * d];
    for (k, &n) in neighbors.iter().enumerate() {
        let w = attention.psi[k];
        let (head, tail) = agg.split_at_mut(d);
        for (a, x) in head.iter_mut().zip(&h[n]) {
            *a += w * x;
        }
        for (a, x) in tail.iter_mut().zip(&tails[k]) {
            *a += w * x;
        }
    }
    Some(RoleCache {
        neighbors,
        codes,
        tails,
        attention,
        agg,
    })
}

/// Per-node values of one layer needed by the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct NodeCache {
    /// Trustee-side aggregate (in-neighbors).
    pub te: Option<RoleCache>,
    /// Trustor-side aggregate (out-neighbors); always `None` for edge devices.
    pub tr: Option<RoleCache>,
    /// Input of the fusion layer.
    pub fused_in: Vec<f64>,
    /// Pre-activation output.
    pub pre: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct LayerCache {
    /// Attention transform of every node's input embedding.
    pub wh: Vec<Vec<f64>>,
    pub nodes: Vec<NodeCache>,
    pub out: Vec<Vec<f64>>,
}

fn node_forward(view: &GraphView, node: usize, h: &[Vec<f64>], wh: &[Vec<f64>], layer: &LayerParams, slope: f64) -> NodeCache {
    let d = layer.d_in();
    match view.kinds[node] {
        DeviceKind::Terminal => {
            let te = aggregate(&view.incoming[node], node, h, wh, &layer.in_msg, &layer.attn_vec, slope);
            let tr = aggregate(&view.outgoing[node], node, h, wh, &layer.out_msg, &layer.attn_vec, slope);
            let mut fused_in = vec![0.0; 4 * d];
            if let Some(te) = &te {
                fused_in[..2 * d].copy_from_slice(&te.agg);
            }
            if let Some(tr) = &tr {
                fused_in[2 * d..].copy_from_slice(&tr.agg);
            }
            let mut pre = layer.fuse_tf_bias.data.clone();
            layer.fuse_tf.matvec_add(&fused_in, &mut pre);
            NodeCache {
                te,
                tr,
                fused_in,
                pre,
            }
        }
        DeviceKind::Edge => {
            let te = aggregate(&view.incoming[node], node, h, wh, &layer.ec_msg, &layer.attn_vec, slope);
            let fused_in = te.as_ref().map_or_else(|| vec![0.0; 2 * d], |t| t.agg.clone());
            let mut pre = layer.fuse_ec_bias.data.clone();
            layer.fuse_ec.matvec_add(&fused_in, &mut pre);
            NodeCache {
                te,
                tr: None,
                fused_in,
                pre,
            }
        }
    }
}

pub(crate) fn layer_forward(view: &GraphView, layer: &LayerParams, h: &[Vec<f64>], slope: f64) -> LayerCache {
    let wh: Vec<Vec<f64>> = h.iter().map(|x| layer.attn.matvec(x)).collect();
    let nodes: Vec<NodeCache> = (0..view.node_count())
        .map(|v| node_forward(view, v, h, &wh, layer, slope))
        .collect();
    let out = nodes
        .iter()
        .map(|n| n.pre.iter().map(|&x| relu(x)).collect())
        .collect();
    LayerCache { wh, nodes, out }
}

fn check_layer_input(view: &GraphView, h: &[Vec<f64>], layer: &LayerParams) -> Result<()> {
    if h.len() != view.node_count() {
        return Err(Error::Dimension(format!(
            "{} embeddings for {} nodes",
            h.len(),
            view.node_count()
        )));
    }
    if h.iter().any(|x| x.len() != layer.d_in()) {
        return Err(Error::Dimension(format!("layer expects inputs of length {}", layer.d_in())));
    }
    Ok(())
}

/// Output of one layer for a terminal node: ReLU of the fused trustee and
/// trustor aggregates. Missing neighbor sets contribute zero vectors.
pub fn tf_layer_forward(node: DeviceId, view: &GraphView, h: &[Vec<f64>], layer: &LayerParams, slope: f64) -> Result<Vec<f64>> {
    check_layer_input(view, h, layer)?;
    if view.kinds[node.index()] != DeviceKind::Terminal {
        return Err(Error::invalid(format!("device {node} is not a terminal")));
    }
    let wh: Vec<Vec<f64>> = h.iter().map(|x| layer.attn.matvec(x)).collect();
    let cache = node_forward(view, node.index(), h, &wh, layer, slope);
    Ok(cache.pre.iter().map(|&x| relu(x)).collect())
}

/// Output of one layer for an edge device: ReLU of the projected trustee
/// aggregate.
pub fn ec_layer_forward(node: DeviceId, view: &GraphView, h: &[Vec<f64>], layer: &LayerParams, slope: f64) -> Result<Vec<f64>> {
    check_layer_input(view, h, layer)?;
    if view.kinds[node.index()] != DeviceKind::Edge {
        return Err(Error::invalid(format!("device {node} is not an edge device")));
    }
    let wh: Vec<Vec<f64>> = h.iter().map(|x| layer.attn.matvec(x)).collect();
    let cache = node_forward(view, node.index(), h, &wh, layer, slope);
    Ok(cache.pre.iter().map(|&x| relu(x)).collect())
}

/// Everything the backward pass needs from a full forward pass.
#[derive(Clone, Debug)]
pub(crate) struct ForwardCache {
    /// `inputs[l]` is the (post-dropout) input of layer `l`.
    pub inputs: Vec<Vec<Vec<f64>>>,
    pub layers: Vec<LayerCache>,
    /// Inverted-dropout multipliers applied to each layer's output.
    pub masks: Vec<Option<Vec<Vec<f64>>>>,
    /// Final node embeddings (after the last dropout, if any).
    pub output: Vec<Vec<f64>>,
}

pub(crate) fn forward_cached<R: Rng>(
    view: &GraphView,
    embeddings: &EmbeddingTable,
    params: &Params,
    slope: f64,
    mut dropout: Option<(f64, &mut R)>,
) -> Result<ForwardCache> {
    if embeddings.len() != view.node_count() {
        return Err(Error::Dimension(format!(
            "{} embeddings for {} nodes",
            embeddings.len(),
            view.node_count()
        )));
    }
    let mut h = embeddings.vectors.clone();
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut layers = Vec::with_capacity(params.layers.len());
    let mut masks = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        check_layer_input(view, &h, layer)?;
        let cache = layer_forward(view, layer, &h, slope);
        let mut out = cache.out.clone();
        let mask = match dropout.as_mut() {
            Some((rate, rng)) if *rate > 0.0 => {
                let keep = 1.0 - *rate;
                let mask: Vec<Vec<f64>> = out
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect()
                    })
                    .collect();
                for (row, m) in out.iter_mut().zip(&mask) {
                    for (x, k) in row.iter_mut().zip(m) {
                        *x *= k;
                    }
                }
                Some(mask)
            }
            _ => None,
        };
        inputs.push(std::mem::replace(&mut h, out));
        layers.push(cache);
        masks.push(mask);
    }
    Ok(ForwardCache {
        inputs,
        layers,
        masks,
        output: h,
    })
}

/// Final embeddings of every device, all layers updated synchronously.
pub fn forward_all(view: &GraphView, embeddings: &EmbeddingTable, params: &Params, slope: f64) -> Result<Vec<Vec<f64>>> {
    let cache = forward_cached::<rand_chacha::ChaCha8Rng>(view, embeddings, params, slope, None)?;
    Ok(cache.output)
}

#[derive(Clone, Debug)]
pub(crate) struct HeadCache {
    /// Input of each dense layer; `acts[0]` is the concatenated pair.
    pub acts: Vec<Vec<f64>>,
    /// Pre-activations of each dense layer.
    pub pres: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

pub(crate) fn head_forward(h_i: &[f64], h_j: &[f64], head: &[Dense]) -> HeadCache {
    let mut x = h_i.to_vec();
    x.extend_from_slice(h_j);
    let mut acts = Vec::with_capacity(head.len());
    let mut pres = Vec::with_capacity(head.len());
    for (k, layer) in head.iter().enumerate() {
        let mut z = layer.bias.data.clone();
        layer.weight.matvec_add(&x, &mut z);
        let next = if k + 1 == head.len() {
            softmax(&z)
        } else {
            z.iter().map(|&v| relu(v)).collect()
        };
        acts.push(std::mem::replace(&mut x, next));
        pres.push(z);
    }
    HeadCache {
        acts,
        pres,
        probs: x,
    }
}

/// Class distribution for the pair (trustor `h_i`, trustee `h_j`).
pub fn predict(h_i: &[f64], h_j: &[f64], head: &[Dense]) -> Result<Vec<f64>> {
    let want = head.first().map_or(0, |d| d.weight.cols);
    if h_i.len() + h_j.len() != want || h_i.len() != h_j.len() {
        return Err(Error::Dimension(format!(
            "head expects two vectors of length {}",
            want / 2
        )));
    }
    Ok(head_forward(h_i, h_j, head).probs)
}
