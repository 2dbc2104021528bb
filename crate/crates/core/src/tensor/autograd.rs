use std::collections::{HashMap, HashSet};

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Recorded computation graph reachable from a scalar loss, in topological
/// order (every node after all of its inputs).
pub struct GradTape<T: Element> {
    loss: Tensor<T>,
    order: Vec<Tensor<T>>,
}

impl<T: Element> GradTape<T> {
    pub fn record(loss: &Tensor<T>) -> Result<Self> {
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        // Iterative post-order DFS; the bool marks "inputs already pushed".
        let mut stack = vec![(loss.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !t.requires_grad() || !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.node() {
                for input in node.inputs.iter().rev() {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        Ok(Self {
            loss: loss.clone(),
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Tensors in topological order, leaves included.
    pub fn nodes(&self) -> &[Tensor<T>] {
        &self.order
    }

    /// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a
    /// gradient. Repeated calls accumulate.
    pub fn backward(&self) -> Result<()> {
        if !self.loss.requires_grad() {
            return Ok(());
        }
        let mut grads: HashMap<u64, Vec<T>> = HashMap::new();
        grads.insert(self.loss.id(), vec![T::one()]);
        for t in self.order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            let Some(node) = t.node() else {
                t.accumulate_grad(&g);
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(|i| i.requires_grad()).collect();
            let input_grads = (node.backward)(&g, t.data(), &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op);
            for ((input, gi), need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                let Some(gi) = gi else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(gi.len(), input.numel(), "{}", node.op);
                if gi.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { op: node.op });
                }
                match grads.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a += b),
                    None => {
                        grads.insert(input.id(), gi);
                    }
                }
            }
        }
        Ok(())
    }
}
