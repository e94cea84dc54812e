use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Read access handed to backward closures.
pub(crate) struct BackwardCtx<'a, T> {
    graph: &'a Graph<T>,
    node: usize,
}

impl<T: Scalar> BackwardCtx<'_, T> {
    pub fn input(&self, i: usize) -> &Tensor<T> {
        &self.graph.nodes[self.graph.nodes[self.node].inputs[i].0].value
    }

    pub fn output(&self) -> &Tensor<T> {
        &self.graph.nodes[self.node].value
    }

    /// Whether input `i` needs a gradient at all.
    pub fn needs(&self, i: usize) -> bool {
        self.graph.nodes[self.graph.nodes[self.node].inputs[i].0].needs_grad
    }
}

/// Computes input gradients from the output gradient. Returns one buffer per
/// input; an empty buffer means "no contribution".
pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>, &[T]) -> Vec<Vec<T>> + Send>;

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    needs_grad: bool,
    name: &'static str,
}

/// Append-only record of executed operations. Node order is a topological
/// order by construction.
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf. Gradients are tracked iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad;
        let mut value = tensor.clone();
        value.grad = None;
        self.push_node(value, Vec::new(), None, needs_grad, "leaf")
    }

    /// Registers a leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        let mut value = tensor;
        value.requires_grad = false;
        value.grad = None;
        self.push_node(value, Vec::new(), None, false, "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].name
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub(crate) fn push(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        inputs: Vec<Var>,
        backward: BackwardFn<T>,
    ) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let backward = needs_grad.then_some(backward);
        self.push_node(value, inputs, backward, needs_grad, name)
    }

    fn push_node(
        &mut self,
        mut value: Tensor<T>,
        inputs: Vec<Var>,
        backward: Option<BackwardFn<T>>,
        needs_grad: bool,
        name: &'static str,
    ) -> Var {
        value.requires_grad = needs_grad;
        self.nodes.push(Node {
            value,
            inputs,
            backward,
            needs_grad,
            name,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse-mode sweep from a scalar `loss`. Every node is visited at most
    /// once, in reverse insertion order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                graph: self,
                node: idx,
            };
            let gin = backward(&ctx, &gout);
            debug_assert_eq!(gin.len(), node.inputs.len(), "backward of {}", node.name);
            for (input, g) in node.inputs.iter().zip(gin) {
                if g.is_empty() || !self.nodes[input.0].needs_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), self.nodes[input.0].value.len());
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
            // keep the output gradient around for inspection
            grads[idx] = Some(gout);
        }

        // leaves that require grad but sit on no path get zeros
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.needs_grad && node.backward.is_none() && grads[idx].is_none() {
                grads[idx] = Some(vec![T::zero(); node.value.len()]);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` when `v` got none.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); len])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(&Tensor::zeros(&[2]).with_grad());
        assert!(matches!(g.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn sum_gives_ones_and_squares_give_two_x() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap().with_grad());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap().with_grad());
        let s = g.sum_squares(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn unreached_parameters_get_zero_grad() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(&Tensor::full(&[3], 1.0).with_grad());
        let unused = g.leaf(&Tensor::full(&[2], 1.0).with_grad());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn shared_leaf_accumulates_from_both_uses() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::new(&[2], vec![3.0, -1.0]).unwrap().with_grad());
        let a = g.sum(x);
        let b = g.sum_squares(x);
        let both = g.concat_batch(&[a, b]).unwrap();
        let s = g.sum(both);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[7.0, -1.0]);
    }

    #[test]
    fn constants_do_not_track() {
        let mut g = Graph::<f32>::new();
        let c = g.constant(Tensor::full(&[2], 2.0));
        let s = g.sum(c);
        assert!(!g.needs_grad(s));
    }
}
