use alloc::vec::Vec;

use super::attention::{linear, multi_head_self_attention};
use super::{AdapterParams, Backbone, BlockWeights};
use crate::autodiff::{Graph, NodeId};
use crate::error::{bail, Result};
use crate::Real;

fn norm<T: Real>(g: &mut Graph<'_, T>, x: NodeId, (w, b): (crate::autodiff::ParamId, crate::autodiff::ParamId)) -> Result<NodeId> {
    let (pw, pb) = (g.param(w), g.param(b));
    g.layer_norm(x, pw, pb)
}

/// Attention sub-layer and the frozen MLP branch: returns `(x~, x~ + MLP(LN2(x~)))`.
fn frozen_path<T: Real>(g: &mut Graph<'_, T>, block: &BlockWeights, x: NodeId, heads: usize) -> Result<(NodeId, NodeId)> {
    let h = norm(g, x, block.norm1)?;
    let attn = multi_head_self_attention(g, block, h, heads)?;
    let mid = g.add(x, attn.out)?;
    let h = norm(g, mid, block.norm2)?;
    let h = linear(g, h, block.fc1)?;
    let h = g.gelu(h);
    let h = linear(g, h, block.fc2)?;
    let out = g.add(mid, h)?;
    Ok((mid, out))
}

/// Pre-norm transformer block: `x~ = x + MSA(LN1(x))`, `out = x~ + MLP(LN2(x~))`.
pub fn vanilla_block<T: Real>(g: &mut Graph<'_, T>, block: &BlockWeights, x: NodeId, heads: usize) -> Result<NodeId> {
    Ok(frozen_path(g, block, x, heads)?.1)
}

/// Block with the bottleneck adapter branch added in parallel to the MLP:
/// `out = x~ + MLP(LN2(x~)) + s * ReLU(LN_a(x~) W_enc) W_dec`.
pub fn pointformer_block<T: Real>(
    g: &mut Graph<'_, T>,
    block: &BlockWeights,
    adapter: &AdapterParams,
    scale: T,
    x: NodeId,
    heads: usize,
) -> Result<NodeId> {
    let (mid, out) = frozen_path(g, block, x, heads)?;
    let z = norm(g, mid, adapter.norm)?;
    let enc = g.param(adapter.enc);
    let z = g.matmul(z, enc)?;
    let z = g.relu(z);
    let dec = g.param(adapter.dec);
    let z = g.matmul(z, dec)?;
    let z = g.scalar_mul(z, scale);
    g.add(out, z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncodeOptions {
    /// Run adapter branches; when false (or no adapters exist) blocks are vanilla.
    pub adapters: bool,
    /// Record the output of every block.
    pub capture: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self { adapters: true, capture: false }
    }
}

pub struct Encoded {
    /// `[n + 1, d]`, row 0 is the class token.
    pub sequence: NodeId,
    /// Output of block `l` at index `l - 1`; empty unless capture was requested.
    pub per_block: Vec<NodeId>,
}

/// Prepends the class token, adds positional embeddings and runs every block.
/// `tokens` must already be in sequencing order.
pub fn encode<T: Real>(g: &mut Graph<'_, T>, backbone: &Backbone, tokens: NodeId, options: EncodeOptions) -> Result<Encoded> {
    let cfg = &backbone.config;
    let shape = g.shape(tokens);
    if shape.len() != 2 || shape[1] != cfg.width {
        bail!(Config, "token matrix {:?} does not match backbone width {}", shape, cfg.width);
    }
    let n = shape[0] + 1;
    if cfg.use_pos_embed && n > cfg.max_tokens {
        bail!(Config, "{} tokens exceed the positional table of {}", n, cfg.max_tokens);
    }
    let cls = g.param(backbone.weights.cls_token);
    let mut x = g.concat_rows(&[cls, tokens])?;
    if cfg.use_pos_embed {
        let table = g.param(backbone.weights.pos_embed);
        let idx: Vec<usize> = (0..n).collect();
        let pos = g.embedding_lookup(table, &idx)?;
        x = g.add(x, pos)?;
    }
    let use_adapters = options.adapters && !backbone.adapters.is_empty();
    let scale = T::of_f32(cfg.adapter_scale);
    let mut per_block = Vec::new();
    for (l, block) in backbone.weights.blocks.iter().enumerate() {
        x = if use_adapters {
            pointformer_block(g, block, &backbone.adapters[l], scale, x, cfg.heads)?
        } else {
            vanilla_block(g, block, x, cfg.heads)?
        };
        if options.capture {
            per_block.push(x);
        }
    }
    Ok(Encoded { sequence: x, per_block })
}
