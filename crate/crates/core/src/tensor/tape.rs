use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Result, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Computes input gradients for one recorded op.
///
/// Arguments are the gradient flowing into the op's output, the output
/// value, the input values, and which inputs need a gradient. The result
/// holds one entry per input; `None` for inputs that need none.
pub type BackwardFn =
    Box<dyn Fn(&Tensor, &Tensor, &[&Tensor], &[bool]) -> Vec<Option<Tensor>>>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    is_leaf: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Define-by-run record of a differentiable program. Creation order is a
/// topological order, so the tape is acyclic by construction.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable value.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, true, true, Vec::new(), None)
    }

    /// Registers a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, false, true, Vec::new(), None)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        assert_eq!(var.tape, self.id, "Var used with a foreign tape");
        &self.nodes[var.index].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[self.index_of(var).expect("foreign Var")].requires_grad
    }

    fn index_of(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(TensorError::Detached);
        }
        Ok(var.index)
    }

    fn push_node(
        &mut self,
        value: Tensor,
        requires_grad: bool,
        is_leaf: bool,
        parents: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            requires_grad,
            is_leaf,
            parents,
            backward: if requires_grad { backward } else { None },
        });
        Var {
            tape: self.id,
            index,
        }
    }

    /// Records the result of an op on `inputs`. Every built-in op goes
    /// through here; fused ops in other modules use it directly.
    pub fn record(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        value: Tensor,
        backward: BackwardFn,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let mut parents = Vec::with_capacity(inputs.len());
        for v in inputs {
            parents.push(self.index_of(*v)?);
        }
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        Ok(self.push_node(value, requires_grad, false, parents, Some(backward)))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape; the next step
    /// records a fresh one.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let root = self.index_of(loss)?;
        let root_node = &self.nodes[root];
        let (rows, cols) = root_node.value.shape();
        if (rows, cols) != (1, 1) {
            return Err(TensorError::NotScalar { rows, cols });
        }
        if !root_node.requires_grad {
            return Err(TensorError::Detached);
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::scalar(1.0));
        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.is_leaf {
                grads[idx] = Some(g);
                continue;
            }
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| self.nodes[p].requires_grad)
                .collect();
            let input_grads = backward(&g, &node.value, &inputs, &needs);
            debug_assert_eq!(input_grads.len(), node.parents.len());
            for ((&p, ig), need) in node.parents.iter().zip(input_grads).zip(needs) {
                let Some(ig) = ig else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(ig.shape(), self.nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
        }

        let mut out = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.is_leaf && node.requires_grad {
                let g = grads[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()));
                if !g.is_finite() {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
                out.insert(idx, g);
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }
}

/// Accumulated gradients for every trainable leaf of a finished tape.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(&var.index)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.remove(&var.index)
    }
}
