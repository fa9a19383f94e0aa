use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::autodiff::ParamStore;
use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied to matrices only.
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 5e-2 }
    }
}

/// First and second moments per parameter tensor, indexed by `ParamId`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One AdamW update of a single tensor at step `t >= 1`:
/// `p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)`.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(p: &mut [f32], g: &[f32], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, decay: f64, hp: &AdamW) -> Result<()> {
    if g.len() != p.len() || m.len() != p.len() || v.len() != p.len() {
        bail!(Internal, "optimizer state of length {}/{}/{} for a tensor of {}", g.len(), m.len(), v.len(), p.len());
    }
    if t == 0 {
        bail!(InvalidArgument, "optimizer steps start at 1");
    }
    let c1 = 1.0 - libm::pow(hp.beta1, t as f64);
    let c2 = 1.0 - libm::pow(hp.beta2, t as f64);
    for i in 0..p.len() {
        let gi = g[i] as f64;
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * gi;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * gi * gi;
        let (mh, vh) = (m[i] / c1, v[i] / c2);
        let old = p[i] as f64;
        p[i] = (old - lr * decay * old - lr * mh / (Float::sqrt(vh) + hp.eps)) as f32;
    }
    Ok(())
}

/// Applies one AdamW step to every trainable tensor that holds a gradient.
/// Frozen tensors are never touched.
pub fn adamw_step(store: &mut ParamStore<f32>, state: &mut AdamState, lr: f64, hp: &AdamW) -> Result<()> {
    state.t += 1;
    let ids: Vec<_> = store.trainable().collect();
    for id in ids {
        let i = id.index();
        if state.m.len() <= i {
            state.m.resize(i + 1, Vec::new());
            state.v.resize(i + 1, Vec::new());
        }
        let tensor = store.get_mut(id);
        let decay = if tensor.shape().len() >= 2 { hp.weight_decay } else { 0.0 };
        let n = tensor.numel();
        if state.m[i].is_empty() {
            state.m[i] = vec![0.0; n];
            state.v[i] = vec![0.0; n];
        }
        let (data, grad) = tensor.data_and_grad_mut();
        let Some(grad) = grad else { continue };
        adamw_update(data, grad, &mut state.m[i], &mut state.v[i], state.t, lr, decay, hp)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn first_step_by_hand() {
        let hp = AdamW { weight_decay: 0.0, ..AdamW::default() };
        let (mut p, mut m, mut v) = ([1.0f32], [0.0], [0.0]);
        adamw_update(&mut p, &[1.0], &mut m, &mut v, 1, 0.1, 0.0, &hp).unwrap();
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p[0] as f64 - expected).abs() < 1e-7);
    }

    #[test]
    fn zero_grad_zero_decay_is_fixed_point() {
        let hp = AdamW { weight_decay: 0.0, ..AdamW::default() };
        let (mut p, mut m, mut v) = ([0.25f32, -3.0], [0.0; 2], [0.0; 2]);
        for t in 1..=5 {
            adamw_update(&mut p, &[0.0, 0.0], &mut m, &mut v, t, 0.1, 0.0, &hp).unwrap();
        }
        assert_eq!(p, [0.25, -3.0]);
    }

    #[test]
    fn decay_is_decoupled_from_moments() {
        // scalar script: t=2 after one g=1 step, then g=0 with wd=0.05
        let hp = AdamW::default();
        let (mut p, mut m, mut v) = ([1.0f32], [0.0], [0.0]);
        adamw_update(&mut p, &[1.0], &mut m, &mut v, 1, 0.1, 0.0, &hp).unwrap();
        let before = p[0] as f64;
        adamw_update(&mut p, &[0.0], &mut m, &mut v, 2, 0.1, 0.05, &hp).unwrap();
        let (m2, v2) = (0.9 * 0.1, 0.999 * 0.001);
        let mh = m2 / (1.0 - 0.9f64.powi(2));
        let vh = v2 / (1.0 - 0.999f64.powi(2));
        let expected = before - 0.1 * 0.05 * before - 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((p[0] as f64 - expected).abs() < 1e-6);
        assert!(((before - p[0] as f64) - 0.1 * mh / (vh.sqrt() + 1e-8)).abs() > 1e-3);
    }

    #[test]
    fn state_mismatch_is_internal() {
        let hp = AdamW::default();
        let err = adamw_update(&mut [1.0], &[1.0], &mut [0.0, 0.0], &mut [0.0], 1, 0.1, 0.0, &hp).unwrap_err();
        assert!(matches!(err, crate::Error::Internal(_)));
    }

    #[test]
    fn frozen_tensors_untouched() {
        let mut store = ParamStore::new();
        let a = store.insert("a", Tensor::new(vec![2, 2], vec![1.0; 4], true).unwrap()).unwrap();
        let b = store.insert("b", Tensor::new(vec![2], vec![1.0; 2], false).unwrap()).unwrap();
        let grads = crate::autodiff::Gradients { per_param: vec![Some(vec![1.0; 4]), None] };
        store.accumulate(&grads);
        let mut state = AdamState::new();
        adamw_step(&mut store, &mut state, 0.1, &AdamW::default()).unwrap();
        assert_eq!(store.get(b).data(), &[1.0, 1.0]);
        assert!(store.get(a).data().iter().all(|&x| x < 1.0));
    }
}
