//! Frozen ViT-style encoder with trainable bottleneck adapters.
//!
//! Weight matrices are stored `[in, out]`, so a projection is `x * W + b`.

mod attention;
mod block;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use attention::{multi_head_self_attention, AttentionOutput};
pub use block::{encode, pointformer_block, vanilla_block, EncodeOptions, Encoded};

use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::embed::expect_param;
use crate::error::{bail, Result};
use crate::rng::{kaiming_uniform, rng_for, trunc_normal, SeededRng, Stream};
use crate::Real;

/// Standard deviation of synthesized projection weights and embeddings.
pub const INIT_STD: f32 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Adapter bottleneck width.
    pub adapter_width: usize,
    /// Adapter branch scale `s`.
    pub adapter_scale: f32,
    pub use_pos_embed: bool,
    /// Rows of the positional-embedding table (class token included).
    pub max_tokens: usize,
}

impl BackboneConfig {
    /// Small geometry for tests and desk-scale runs.
    pub fn tiny() -> Self {
        Self {
            layers: 4,
            width: 64,
            heads: 4,
            mlp_ratio: 4,
            adapter_width: 8,
            adapter_scale: 0.1,
            use_pos_embed: true,
            max_tokens: 197,
        }
    }

    /// ViT-Base/16 geometry (197 positions at 224px).
    pub fn vit_b() -> Self {
        Self {
            layers: 12,
            width: 768,
            heads: 12,
            mlp_ratio: 4,
            adapter_width: 64,
            adapter_scale: 0.1,
            use_pos_embed: true,
            max_tokens: 197,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            bail!(Config, "backbone needs at least one block");
        }
        if self.heads == 0 || self.width == 0 || self.width % self.heads != 0 {
            bail!(Config, "width {} is not divisible by {} heads", self.width, self.heads);
        }
        if self.adapter_width == 0 || self.adapter_width >= self.width {
            bail!(Config, "adapter width {} must be in 1..{}", self.adapter_width, self.width);
        }
        if self.mlp_ratio == 0 {
            bail!(Config, "mlp ratio must be positive");
        }
        if !self.adapter_scale.is_finite() {
            bail!(Config, "adapter scale must be finite");
        }
        if self.max_tokens < 2 {
            bail!(Config, "max_tokens must admit the class token and one point token");
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        self.width * self.mlp_ratio
    }

    /// Frozen parameters of the encoder: blocks, class token and positional table.
    pub fn frozen_param_count(&self) -> usize {
        let (d, h) = (self.width, self.mlp_hidden());
        let attn = 4 * (d * d + d);
        let norms = 2 * 2 * d;
        let mlp = d * h + h + h * d + d;
        self.layers * (attn + norms + mlp) + d + self.max_tokens * d
    }

    /// `L * 2 * d * d_hat`: down- and up-projection matrices of every adapter.
    pub fn adapter_matrix_count(&self) -> usize {
        self.layers * 2 * self.width * self.adapter_width
    }

    /// Gain and bias of every adapter's own layer norm.
    pub fn adapter_norm_count(&self) -> usize {
        self.layers * 2 * self.width
    }
}

/// Frozen tensors of one transformer block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockWeights {
    pub norm1: (ParamId, ParamId),
    pub q: (ParamId, ParamId),
    pub k: (ParamId, ParamId),
    pub v: (ParamId, ParamId),
    pub proj: (ParamId, ParamId),
    pub norm2: (ParamId, ParamId),
    pub fc1: (ParamId, ParamId),
    pub fc2: (ParamId, ParamId),
}

impl BlockWeights {
    pub fn params(&self) -> [ParamId; 16] {
        let p = [self.norm1, self.q, self.k, self.v, self.proj, self.norm2, self.fc1, self.fc2];
        let mut out = [p[0].0; 16];
        for (i, (a, b)) in p.into_iter().enumerate() {
            out[2 * i] = a;
            out[2 * i + 1] = b;
        }
        out
    }
}

/// Trainable adapter of one block: own layer norm, `W_enc: d x d_hat`, `W_dec: d_hat x d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdapterParams {
    pub norm: (ParamId, ParamId),
    pub enc: ParamId,
    pub dec: ParamId,
}

impl AdapterParams {
    /// Kaiming-uniform `W_enc`, zero `W_dec`, unit-gain norm; all trainable.
    pub fn init(store: &mut ParamStore<f32>, config: &BackboneConfig, layer: usize, rng: &mut SeededRng) -> Result<Self> {
        let (d, r) = (config.width, config.adapter_width);
        let p = |s: &str| format!("adapters.{layer}.{s}");
        let norm = (
            store.insert(&p("norm.weight"), Tensor::new(vec![d], vec![1.0; d], true)?)?,
            store.insert(&p("norm.bias"), Tensor::zeros(vec![d], true))?,
        );
        let enc = store.insert(&p("enc.weight"), Tensor::new(vec![d, r], kaiming_uniform(rng, d, d * r), true)?)?;
        let dec = store.insert(&p("dec.weight"), Tensor::zeros(vec![r, d], true))?;
        Ok(Self { norm, enc, dec })
    }

    pub fn bind<T: Real>(store: &ParamStore<T>, config: &BackboneConfig, layer: usize) -> Result<Self> {
        let (d, r) = (config.width, config.adapter_width);
        let p = |s: &str| format!("adapters.{layer}.{s}");
        let a = Self {
            norm: (expect_param(store, &p("norm.weight"), &[d])?, expect_param(store, &p("norm.bias"), &[d])?),
            enc: expect_param(store, &p("enc.weight"), &[d, r])?,
            dec: expect_param(store, &p("dec.weight"), &[r, d])?,
        };
        if a.params().iter().any(|&id| !store.get(id).requires_grad()) {
            bail!(Config, "adapter {layer} has frozen tensors");
        }
        Ok(a)
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.norm.0, self.norm.1, self.enc, self.dec]
    }
}

/// Handles to the frozen encoder tensors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneWeights {
    pub cls_token: ParamId,
    pub pos_embed: ParamId,
    pub blocks: Vec<BlockWeights>,
}

fn block_name(layer: usize, s: &str) -> alloc::string::String {
    format!("backbone.blocks.{layer}.{s}")
}

/// Names and shapes of every frozen encoder tensor, in canonical order.
pub fn backbone_layout(config: &BackboneConfig) -> Vec<(alloc::string::String, Vec<usize>)> {
    let (d, h) = (config.width, config.mlp_hidden());
    let mut out = vec![("backbone.cls_token".into(), vec![1, d]), ("backbone.pos_embed".into(), vec![config.max_tokens, d])];
    for l in 0..config.layers {
        let mut push = |s: &str, shape: Vec<usize>| out.push((block_name(l, s), shape));
        push("norm1.weight", vec![d]);
        push("norm1.bias", vec![d]);
        for p in ["attn.q", "attn.k", "attn.v", "attn.proj"] {
            push(&format!("{p}.weight"), vec![d, d]);
            push(&format!("{p}.bias"), vec![d]);
        }
        push("norm2.weight", vec![d]);
        push("norm2.bias", vec![d]);
        push("mlp.fc1.weight", vec![d, h]);
        push("mlp.fc1.bias", vec![h]);
        push("mlp.fc2.weight", vec![h, d]);
        push("mlp.fc2.bias", vec![d]);
    }
    out
}

impl BackboneWeights {
    /// Resolves every encoder tensor by name, checking shapes and that all are frozen.
    pub fn bind<T: Real>(store: &ParamStore<T>, config: &BackboneConfig) -> Result<Self> {
        let mut ids = Vec::new();
        for (name, shape) in backbone_layout(config) {
            let id = expect_param(store, &name, &shape)?;
            if store.get(id).requires_grad() {
                bail!(Config, "backbone tensor {name} must be frozen");
            }
            ids.push(id);
        }
        let blocks = ids[2..]
            .chunks_exact(16)
            .map(|c| BlockWeights {
                norm1: (c[0], c[1]),
                q: (c[2], c[3]),
                k: (c[4], c[5]),
                v: (c[6], c[7]),
                proj: (c[8], c[9]),
                norm2: (c[10], c[11]),
                fc1: (c[12], c[13]),
                fc2: (c[14], c[15]),
            })
            .collect();
        Ok(Self { cls_token: ids[0], pos_embed: ids[1], blocks })
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        [self.cls_token, self.pos_embed].into_iter().chain(self.blocks.iter().flat_map(|b| b.params()))
    }
}

/// Deterministic stand-in for pretrained weights: truncated-normal (std 0.02)
/// projections, class token and positions; zero biases; unit-gain norms. All frozen.
pub fn synth_pretrained(seed: u64, config: &BackboneConfig) -> Result<ParamStore<f32>> {
    config.validate()?;
    let mut rng = rng_for(seed, Stream::Backbone, 0);
    let mut store = ParamStore::new();
    for (name, shape) in backbone_layout(config) {
        let n = shape.iter().product();
        let data = if name.ends_with("norm1.weight") || name.ends_with("norm2.weight") {
            vec![1.0; n]
        } else if name.ends_with(".bias") {
            vec![0.0; n]
        } else {
            trunc_normal(&mut rng, INIT_STD, n)
        };
        store.insert(&name, Tensor::new(shape, data, false)?)?;
    }
    Ok(store)
}

/// Encoder handles plus per-block adapters (empty when adapters are disabled).
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub weights: BackboneWeights,
    pub adapters: Vec<AdapterParams>,
}

impl Backbone {
    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.weights.params().chain(self.adapters.iter().flat_map(|a| a.params()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_counts() {
        let vitb = BackboneConfig::vit_b();
        assert_eq!(vitb.adapter_matrix_count(), 1_179_648);
        let tiny = BackboneConfig::tiny();
        assert_eq!(tiny.adapter_matrix_count(), 4096);
        let store = synth_pretrained(1, &tiny).unwrap();
        assert_eq!(store.num_params(false), tiny.frozen_param_count());
        assert_eq!(store.num_params(true), 0);
    }

    #[test]
    fn synth_is_seeded() {
        let cfg = BackboneConfig::tiny();
        assert_eq!(synth_pretrained(3, &cfg).unwrap(), synth_pretrained(3, &cfg).unwrap());
        assert_ne!(synth_pretrained(3, &cfg).unwrap(), synth_pretrained(4, &cfg).unwrap());
    }

    #[test]
    fn synth_norms_and_scales() {
        let cfg = BackboneConfig::tiny();
        let store = synth_pretrained(3, &cfg).unwrap();
        for (_, name, t) in store.iter() {
            if name.contains("norm") && name.ends_with("weight") {
                assert!(t.data().iter().all(|&v| v == 1.0), "{name}");
            } else if name.ends_with("bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            } else {
                assert!(t.data().iter().all(|&v| v.abs() <= 2.0 * INIT_STD), "{name}");
                let var = t.data().iter().map(|v| v * v).sum::<f32>() / t.numel() as f32;
                assert!(var > 0.0002 && var < 0.0004, "{name}: {var}");
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut c = BackboneConfig::tiny();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = BackboneConfig::tiny();
        c.adapter_width = 64;
        assert!(c.validate().is_err());
        let mut c = BackboneConfig::tiny();
        c.layers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn bind_rejects_trainable_backbone() {
        let cfg = BackboneConfig::tiny();
        let mut store = synth_pretrained(3, &cfg).unwrap();
        assert!(BackboneWeights::bind(&store, &cfg).is_ok());
        let id = store.id("backbone.cls_token").unwrap();
        store.set_requires_grad(id, true);
        assert!(BackboneWeights::bind(&store, &cfg).is_err());
    }

    #[test]
    fn adapter_starts_with_zero_decoder() {
        let cfg = BackboneConfig::tiny();
        let mut store = ParamStore::new();
        let mut rng = rng_for(0, Stream::Init, 1);
        let a = AdapterParams::init(&mut store, &cfg, 0, &mut rng).unwrap();
        assert!(store.get(a.dec).data().iter().all(|&v| v == 0.0));
        assert!(store.get(a.enc).data().iter().any(|&v| v != 0.0));
        assert!(a.params().iter().all(|&id| store.get(id).requires_grad()));
        assert_eq!(AdapterParams::bind(&store, &cfg, 0).unwrap(), a);
    }
}
