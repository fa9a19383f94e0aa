use alloc::vec::Vec;

use super::BlockWeights;
use crate::autodiff::{Graph, NodeId, ParamId};
use crate::error::Result;
use crate::Real;

pub struct AttentionOutput {
    pub out: NodeId,
    /// Row-softmax attention matrix of each head, `[n, n]`.
    pub probs: Vec<NodeId>,
}

pub(crate) fn linear<T: Real>(g: &mut Graph<'_, T>, x: NodeId, (w, b): (ParamId, ParamId)) -> Result<NodeId> {
    let (pw, pb) = (g.param(w), g.param(b));
    let y = g.matmul(x, pw)?;
    g.add(y, pb)
}

/// Multi-head self-attention over `x: [n, d]`: per head
/// `softmax(Q K^T / sqrt(d / heads)) V`, heads concatenated then projected.
pub fn multi_head_self_attention<T: Real>(
    g: &mut Graph<'_, T>,
    block: &BlockWeights,
    x: NodeId,
    heads: usize,
) -> Result<AttentionOutput> {
    let d = g.shape(x)[g.shape(x).len() - 1];
    let q = linear(g, x, block.q)?;
    let k = linear(g, x, block.k)?;
    let v = linear(g, x, block.v)?;
    let dh = d / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_lastdim(q, h * dh, dh)?;
        let kh = g.slice_lastdim(k, h * dh, dh)?;
        let vh = g.slice_lastdim(v, h * dh, dh)?;
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scalar_mul(scores, scale);
        let p = g.row_softmax(scores);
        probs.push(p);
        outs.push(g.matmul(p, vh)?);
    }
    let merged = if heads == 1 { outs[0] } else { g.concat_lastdim(&outs)? };
    let out = linear(g, merged, block.proj)?;
    Ok(AttentionOutput { out, probs })
}
