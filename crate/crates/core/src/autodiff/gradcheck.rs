//! Central finite-difference audit of autodiff gradients, in `f64`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::graph::{Graph, NodeId};
use super::tensor::ParamStore;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Perturbation `h` in `(f(p + h) - f(p - h)) / 2h`.
    pub step: f64,
    /// Maximum admissible relative error.
    pub tolerance: f64,
    /// Denominator floor: `|fd - ad| / max(|fd|, |ad|, floor)`.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-4, tolerance: 1e-4, floor: 1e-6 }
    }
}

/// Result for one trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Probes whose `p +/- h` evaluations switched a ReLU or max-pool branch.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }

    pub fn skipped(&self) -> usize {
        self.tensors.iter().map(|t| t.skipped).sum()
    }

    pub fn passed(&self) -> bool {
        self.checked() > 0 && self.max_rel_error() < self.tolerance
    }
}

fn evaluate<F>(store: &ParamStore<f64>, build: &F) -> Result<(f64, u64)>
where
    F: for<'g> Fn(&mut Graph<'g, f64>) -> Result<NodeId>,
{
    let mut g = Graph::inference(store);
    let loss = build(&mut g)?;
    Ok((g.scalar(loss), g.kink_signature()))
}

/// Compares the autodiff gradient of every trainable scalar against a central
/// difference. Frozen tensors are not probed and do not appear in the report.
///
/// A probe whose perturbed evaluations cross a non-differentiable point
/// (different ReLU mask or max-pool winner than the base point) is counted
/// as skipped instead of compared.
pub fn finite_diff_check<F>(store: &mut ParamStore<f64>, build: F, config: GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&mut Graph<'g, f64>) -> Result<NodeId>,
{
    let (grads, base_sig) = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        (g.backward(loss)?, g.kink_signature())
    };
    let h = config.step;
    let ids: Vec<_> = store.trainable().collect();
    let mut tensors = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).numel();
        let analytic: Vec<f64> = match grads.get(id) {
            Some(g) => g.to_vec(),
            None => alloc::vec![0.0; n],
        };
        let mut check = TensorCheck {
            name: store.name(id).to_string(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for j in 0..n {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + h;
            let plus = evaluate(store, &build);
            store.get_mut(id).data_mut()[j] = orig - h;
            let minus = evaluate(store, &build);
            store.get_mut(id).data_mut()[j] = orig;
            let ((fp, sp), (fm, sm)) = (plus?, minus?);
            if sp != base_sig || sm != base_sig {
                check.skipped += 1;
                continue;
            }
            let fd = (fp - fm) / (2.0 * h);
            let ad = analytic[j];
            let abs = (fd - ad).abs();
            let rel = abs / fd.abs().max(ad.abs()).max(config.floor);
            check.checked += 1;
            check.max_rel_error = check.max_rel_error.max(rel);
            check.max_abs_error = check.max_abs_error.max(abs);
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tensors, tolerance: config.tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn quadratic() {
        let mut store = ParamStore::<f64>::new();
        let w = store.insert("w", Tensor::new(vec![1], vec![3.0], true).unwrap()).unwrap();
        let build = move |g: &mut Graph<'_, f64>| {
            let p = g.param(w);
            g.mul(p, p)
        };
        let report = finite_diff_check(&mut store, build, GradCheckConfig::default()).unwrap();
        assert_eq!(report.tensors.len(), 1);
        assert!(report.tensors[0].max_rel_error < 1e-9);
        assert!(report.passed());
    }

    #[test]
    fn frozen_tensors_are_excluded() {
        let mut store = ParamStore::<f64>::new();
        let w = store.insert("w", Tensor::new(vec![2], vec![1.0, 2.0], true).unwrap()).unwrap();
        let c = store.insert("c", Tensor::new(vec![2], vec![0.5, -1.0], false).unwrap()).unwrap();
        let build = move |g: &mut Graph<'_, f64>| {
            let (p, q) = (g.param(w), g.param(c));
            let m = g.mul(p, q)?;
            let m = g.mul(m, p)?;
            Ok(g.sum(m))
        };
        let report = finite_diff_check(&mut store, build, GradCheckConfig::default()).unwrap();
        assert_eq!(report.tensors.len(), 1);
        assert_eq!(report.tensors[0].name, "w");
        assert!(report.passed());
    }
}
