//! Reverse pass: topological replay of the recorded graph.

use std::collections::HashMap;

use crate::error::{CwError, Result};

use super::tensor::Tensor;

/// Adjoints produced by [`backward`], keyed by tensor identity. Only leaves
/// that require gradients are retained.
pub struct Gradients {
    map: HashMap<u64, Vec<f64>>,
}

impl Gradients {
    /// Adjoint of `t`, if `t` is a gradient leaf reached by the loss.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.map.get(&t.id()).map(|v| v.as_slice())
    }

    /// Adjoint of `t`, zero-filled when the loss does not depend on it.
    pub fn get_or_zero(&self, t: &Tensor) -> Vec<f64> {
        match self.map.get(&t.id()) {
            Some(v) => v.clone(),
            None => vec![0.0; t.numel()],
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Accumulate adjoints for every gradient leaf under a scalar loss.
///
/// The graph recorded while computing `loss` is walked once in reverse
/// topological order; each node contributes its vector-Jacobian product to
/// its parents. Nothing outlives the call: the graph itself is freed when the
/// caller drops the loss tensor.
pub fn backward(loss: &Tensor) -> Result<Gradients> {
    if loss.numel() != 1 {
        return Err(CwError::Contract(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }

    // Iterative post-order DFS: children complete before their dependents.
    let mut order: Vec<Tensor> = Vec::new();
    let mut visited: HashMap<u64, ()> = HashMap::new();
    let mut stack: Vec<(Tensor, usize)> = vec![(loss.clone(), 0)];
    visited.insert(loss.id(), ());
    while let Some((node, child)) = stack.pop() {
        if child < node.inner.parents.len() {
            stack.push((node.clone(), child + 1));
            let parent = node.inner.parents[child].clone();
            if parent.requires_grad() && !visited.contains_key(&parent.id()) {
                visited.insert(parent.id(), ());
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }

    let mut adjoints: HashMap<u64, Vec<f64>> = HashMap::new();
    adjoints.insert(loss.id(), vec![1.0]);

    let mut leaves: HashMap<u64, Vec<f64>> = HashMap::new();
    for node in order.iter().rev() {
        let adj = match adjoints.remove(&node.id()) {
            Some(a) => a,
            None => continue, // unreachable from the loss; adjoint is zero
        };
        match &node.inner.backward {
            Some(rule) => {
                let parent_grads = rule(&adj);
                debug_assert_eq!(parent_grads.len(), node.inner.parents.len());
                for (parent, grad) in node.inner.parents.iter().zip(parent_grads) {
                    if !parent.requires_grad() {
                        continue;
                    }
                    match adjoints.get_mut(&parent.id()) {
                        Some(acc) => {
                            for (a, g) in acc.iter_mut().zip(&grad) {
                                *a += g;
                            }
                        }
                        None => {
                            adjoints.insert(parent.id(), grad);
                        }
                    }
                }
            }
            None => {
                if node.requires_grad() {
                    leaves.insert(node.id(), adj);
                }
            }
        }
    }

    Ok(Gradients { map: leaves })
}
