//! Reverse-mode gradients of the batch loss with respect to every parameter.

use rand::Rng;

use super::forward::{forward_cached, head_forward, leaky_grad, GraphView, LayerCache, RoleCache};
use super::model::{LayerParams, Params};
use super::tensor::{axpy, dot, softmax_backward, Matrix};
use super::{LabeledEdge, PROB_FLOOR};
use crate::domain::DeviceKind;
use crate::embed::EmbeddingTable;
use crate::error::Result;

/// Mean cross-entropy of the true classes plus `l2 * ||params||^2`.
/// Probabilities are clamped at `PROB_FLOOR` before the log.
pub fn loss(predictions: &[Vec<f64>], labels: &[usize], params: &Params, l2: f64) -> Result<f64> {
    use crate::error::Error;
    if predictions.len() != labels.len() {
        return Err(Error::Dimension("one label per prediction required".into()));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("loss over an empty batch"));
    }
    let mut ce = 0.0;
    for (p, &y) in predictions.iter().zip(labels) {
        if y >= p.len() {
            return Err(Error::invalid(format!("label {y} out of range for {} classes", p.len())));
        }
        ce -= p[y].max(PROB_FLOOR).ln();
    }
    Ok(ce / labels.len() as f64 + l2 * params.squared_norm())
}

/// Returns the batch loss and its gradient. With `dropout`, masks are drawn
/// from the given RNG exactly as in training.
pub fn gradients<R: Rng>(
    params: &Params,
    view: &GraphView,
    embeddings: &EmbeddingTable,
    batch: &[LabeledEdge],
    l2: f64,
    slope: f64,
    dropout: Option<(f64, &mut R)>,
) -> Result<(f64, Params)> {
    let cache = forward_cached(view, embeddings, params, slope, dropout)?;
    let mut grads = params.zeros_like();
    let n = view.node_count();
    let scale = 1.0 / batch.len().max(1) as f64;

    let mut d_out = vec![vec![0.0; cache.output.first().map_or(0, Vec::len)]; n];
    let mut ce = 0.0;
    for e in batch {
        let head = head_forward(&cache.output[e.trustor], &cache.output[e.trustee], &params.head);
        let p_true = head.probs[e.class];
        ce -= p_true.max(PROB_FLOOR).ln();

        // Softmax + cross-entropy; zero gradient once the probability is clamped.
        let mut dz: Vec<f64> = if p_true > PROB_FLOOR {
            head.probs.iter().map(|p| p * scale).collect()
        } else {
            vec![0.0; head.probs.len()]
        };
        if p_true > PROB_FLOOR {
            dz[e.class] -= scale;
        }
        for k in (0..params.head.len()).rev() {
            let layer = &params.head[k];
            let g = &mut grads.head[k];
            g.weight.add_outer(1.0, &dz, &head.acts[k]);
            axpy(1.0, &dz, &mut g.bias.data);
            let mut da = vec![0.0; layer.weight.cols];
            layer.weight.matvec_t_add(&dz, &mut da);
            if k > 0 {
                for (d, z) in da.iter_mut().zip(&head.pres[k - 1]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
                dz = da;
            } else {
                let half = da.len() / 2;
                axpy(1.0, &da[..half], &mut d_out[e.trustor]);
                axpy(1.0, &da[half..], &mut d_out[e.trustee]);
            }
        }
    }

    for l in (0..params.layers.len()).rev() {
        if let Some(mask) = &cache.masks[l] {
            for (d, m) in d_out.iter_mut().zip(mask) {
                for (x, k) in d.iter_mut().zip(m) {
                    *x *= k;
                }
            }
        }
        let d_in = layer_backward(
            view,
            &params.layers[l],
            &cache.layers[l],
            &cache.inputs[l],
            &d_out,
            &mut grads.layers[l],
            slope,
        );
        d_out = d_in;
    }

    let norm = params.squared_norm();
    for (g, p) in grads.tensors_mut().into_iter().zip(params.tensors()) {
        axpy(2.0 * l2, &p.data, &mut g.data);
    }
    Ok((ce * scale + l2 * norm, grads))
}

struct RoleGrads<'a> {
    msg: &'a mut Matrix,
    attn_vec: &'a mut Matrix,
    d_wh: &'a mut [Vec<f64>],
    d_h: &'a mut [Vec<f64>],
}

#[allow(clippy::too_many_arguments)]
fn role_backward(role: &RoleCache, center: usize, d_agg: &[f64], h: &[Vec<f64>], wh: &[Vec<f64>], attn_vec: &Matrix, slope: f64, g: &mut RoleGrads<'_>) {
    let d = h[center].len();
    let (d_head, d_tail) = d_agg.split_at(d);
    let att = &role.attention;
    let mut d_psi = Vec::with_capacity(role.neighbors.len());
    for (k, &nbr) in role.neighbors.iter().enumerate() {
        d_psi.push(dot(d_head, &h[nbr]) + dot(d_tail, &role.tails[k]));
        axpy(att.psi[k], d_head, &mut g.d_h[nbr]);
        g.msg.add_outer(att.psi[k], d_tail, &role.codes[k]);
    }
    let d_scaled = softmax_backward(&att.psi, &d_psi);
    let d_first: Vec<f64> = d_scaled.iter().zip(&att.frac).map(|(a, f)| a * f).collect();
    let d_scores = softmax_backward(&att.first, &d_first);
    let (a_center, a_nbr) = attn_vec.data.split_at(d);
    for (k, &nbr) in role.neighbors.iter().enumerate() {
        let d_raw = d_scores[k] * leaky_grad(att.raw[k], slope);
        if d_raw == 0.0 {
            continue;
        }
        let (ga_center, ga_nbr) = g.attn_vec.data.split_at_mut(d);
        axpy(d_raw, &wh[center], ga_center);
        axpy(d_raw, &wh[nbr], ga_nbr);
        axpy(d_raw, a_center, &mut g.d_wh[center]);
        axpy(d_raw, a_nbr, &mut g.d_wh[nbr]);
    }
}

fn layer_backward(
    view: &GraphView,
    layer: &LayerParams,
    cache: &LayerCache,
    h: &[Vec<f64>],
    d_out: &[Vec<f64>],
    grads: &mut LayerParams,
    slope: f64,
) -> Vec<Vec<f64>> {
    let n = view.node_count();
    let d = layer.d_in();
    let mut d_h = vec![vec![0.0; d]; n];
    let mut d_wh = vec![vec![0.0; d]; n];
    for (v, node) in cache.nodes.iter().enumerate() {
        let dz: Vec<f64> = d_out[v]
            .iter()
            .zip(&node.pre)
            .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
            .collect();
        if dz.iter().all(|&x| x == 0.0) {
            continue;
        }
        match view.kinds[v] {
            DeviceKind::Terminal => {
                grads.fuse_tf.add_outer(1.0, &dz, &node.fused_in);
                axpy(1.0, &dz, &mut grads.fuse_tf_bias.data);
                let mut d_fused = vec![0.0; 4 * d];
                layer.fuse_tf.matvec_t_add(&dz, &mut d_fused);
                let (d_te, d_tr) = d_fused.split_at(2 * d);
                if let Some(te) = &node.te {
                    let mut g = RoleGrads {
                        msg: &mut grads.in_msg,
                        attn_vec: &mut grads.attn_vec,
                        d_wh: &mut d_wh,
                        d_h: &mut d_h,
                    };
                    role_backward(te, v, d_te, h, &cache.wh, &layer.attn_vec, slope, &mut g);
                }
                if let Some(tr) = &node.tr {
                    let mut g = RoleGrads {
                        msg: &mut grads.out_msg,
                        attn_vec: &mut grads.attn_vec,
                        d_wh: &mut d_wh,
                        d_h: &mut d_h,
                    };
                    role_backward(tr, v, d_tr, h, &cache.wh, &layer.attn_vec, slope, &mut g);
                }
            }
            DeviceKind::Edge => {
                grads.fuse_ec.add_outer(1.0, &dz, &node.fused_in);
                axpy(1.0, &dz, &mut grads.fuse_ec_bias.data);
                if let Some(te) = &node.te {
                    let mut d_agg = vec![0.0; 2 * d];
                    layer.fuse_ec.matvec_t_add(&dz, &mut d_agg);
                    let mut g = RoleGrads {
                        msg: &mut grads.ec_msg,
                        attn_vec: &mut grads.attn_vec,
                        d_wh: &mut d_wh,
                        d_h: &mut d_h,
                    };
                    role_backward(te, v, &d_agg, h, &cache.wh, &layer.attn_vec, slope, &mut g);
                }
            }
        }
    }
    for u in 0..n {
        if d_wh[u].iter().all(|&x| x == 0.0) {
            continue;
        }
        grads.attn.add_outer(1.0, &d_wh[u], &h[u]);
        layer.attn.matvec_t_add(&d_wh[u], &mut d_h[u]);
    }
    d_h
}
