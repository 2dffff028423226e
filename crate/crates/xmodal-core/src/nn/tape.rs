//! Wengert-list tape for reverse-mode differentiation.

use ndarray::ArrayD;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

pub(crate) struct BackwardArgs<'a> {
    pub upstream: &'a ArrayD<f64>,
    pub parents: &'a [&'a ArrayD<f64>],
    pub output: &'a ArrayD<f64>,
}

type BackwardFn = Box<dyn Fn(&BackwardArgs) -> Vec<ArrayD<f64>>>;

struct Node {
    value: ArrayD<f64>,
    parents: Vec<TensorId>,
    backward: Option<BackwardFn>,
    needs_grad: bool,
}

/// Records forward operations; nodes are created in topological order, so a
/// single reverse sweep computes all gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input tensor. Gradients are tracked only when
    /// `requires_grad` is set (or the tensor feeds an op that needs them).
    pub fn leaf(&mut self, value: ArrayD<f64>, requires_grad: bool) -> TensorId {
        self.push(value, Vec::new(), None, requires_grad)
    }

    /// Record a constant; identical to a non-grad leaf.
    pub fn constant(&mut self, value: ArrayD<f64>) -> TensorId {
        self.leaf(value, false)
    }

    pub(crate) fn push(
        &mut self,
        value: ArrayD<f64>,
        parents: Vec<TensorId>,
        backward: Option<BackwardFn>,
        requires_grad: bool,
    ) -> TensorId {
        let needs_grad =
            requires_grad || parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { value, parents, backward, needs_grad });
        id
    }

    pub fn value(&self, id: TensorId) -> &ArrayD<f64> {
        &self.nodes[id.0].value
    }

    /// Extract a single-element tensor as a scalar.
    pub fn scalar(&self, id: TensorId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "scalar() on tensor of {} elements", v.len());
        *v.iter().next().unwrap()
    }

    /// Reverse sweep from `root` (must be a single-element tensor).
    pub fn backward(&self, root: TensorId) -> Gradients {
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = ArrayD::ones(self.nodes[root.0].value.raw_dim());
        assert_eq!(seed.len(), 1, "backward root must be scalar");
        grads[root.0] = Some(seed);

        for i in (0..=root.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let node = &self.nodes[i];
            let Some(back) = node.backward.as_ref() else { continue };
            let parent_grads = {
                let parent_vals: Vec<&ArrayD<f64>> =
                    node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let args = BackwardArgs {
                    upstream: grads[i].as_ref().unwrap(),
                    parents: &parent_vals,
                    output: &node.value,
                };
                back(&args)
            };
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, g) in node.parents.iter().zip(parent_grads) {
                if !self.nodes[p.0].needs_grad {
                    continue;
                }
                debug_assert_eq!(
                    g.raw_dim(),
                    self.nodes[p.0].value.raw_dim(),
                    "gradient shape mismatch for node {}",
                    p.0
                );
                match &mut grads[p.0] {
                    Some(acc) => *acc += &g,
                    slot => *slot = Some(g),
                }
            }
        }
        Gradients { grads }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`TensorId`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: TensorId) -> Option<&ArrayD<f64>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn leaf_roundtrip() {
        let mut tape = Tape::new();
        let x = tape.leaf(arr1(&[1.0, 2.0]).into_dyn(), true);
        assert_eq!(tape.value(x).len(), 2);
    }

    #[test]
    #[should_panic(expected = "backward root must be scalar")]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(arr1(&[1.0, 2.0]).into_dyn(), true);
        tape.backward(x);
    }
}
