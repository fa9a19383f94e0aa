use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

pub fn is_permutation(order: &[usize], n: usize) -> bool {
    if order.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || core::mem::replace(&mut seen[i], true) {
            return false;
        }
    }
    true
}

/// Gather: `out[i] = seq[order[i]]`.
pub fn apply_order<V: Clone>(seq: &[V], order: &[usize]) -> Result<Vec<V>> {
    if !is_permutation(order, seq.len()) {
        bail!(InvalidArgument, "order of length {} is not a permutation for {} items", order.len(), seq.len());
    }
    Ok(order.iter().map(|&i| seq[i].clone()).collect())
}

pub fn inverse_permutation(order: &[usize]) -> Result<Vec<usize>> {
    if !is_permutation(order, order.len()) {
        bail!(InvalidArgument, "not a permutation");
    }
    let mut inv = vec![0; order.len()];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    Ok(inv)
}

/// Scatter: undoes [`apply_order`] with the same `order`.
pub fn apply_inverse_order<V: Clone>(seq: &[V], order: &[usize]) -> Result<Vec<V>> {
    apply_order(seq, &inverse_permutation(order)?)
}
