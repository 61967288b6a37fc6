//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse creation order,
//! which is a valid topological order because a node can only depend on
//! nodes created before it.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::Scalar;

/// Inputs handed to a backward closure.
pub struct BackwardArgs<'a, T> {
    pub inputs: &'a [Rc<Tensor<T>>],
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    /// Which inputs need a gradient; closures may skip the rest.
    pub needs: &'a [bool],
}

pub type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<(usize, usize), usize>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Scalar> {
    pub(crate) id: usize,
    pub(crate) graph: &'g Graph<T>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            id: nodes.len() - 1,
            graph: self,
        }
    }

    /// Value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
        })
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
        })
    }

    /// Leaf bound to a parameter slot of `store`; repeated calls return the
    /// same node.
    pub fn param(&self, store: &ParamStore<T>, id: usize) -> Var<'_, T> {
        let key = (store_key(store), id);
        if let Some(&node) = self.params.borrow().get(&key) {
            return Var { id: node, graph: self };
        }
        let v = self.leaf(store.get(id).clone());
        self.params.borrow_mut().insert(key, v.id);
        v
    }

    /// Records an operation. The backward closure is dropped when no parent
    /// requires a gradient.
    pub fn op(&self, value: Tensor<T>, parents: &[Var<'_, T>], backward: BackwardFn<T>) -> Var<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        self.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
        })
    }

    pub fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires one.
    pub fn backward(&self, loss: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.id].value.len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), T::one()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<Rc<Tensor<T>>> =
                node.parents.iter().map(|&p| Rc::clone(&nodes[p].value)).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let out = backward(&BackwardArgs {
                inputs: &inputs,
                output: &node.value,
                grad: &grad,
                needs: &needs,
            });
            debug_assert_eq!(out.len(), node.parents.len());
            for ((&p, g), &need) in node.parents.iter().zip(out).zip(&needs) {
                if !need {
                    continue;
                }
                if let Some(g) = g {
                    debug_assert_eq!(g.shape(), nodes[p].value.shape());
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
        }
        let params = self.params.borrow().iter().map(|(&k, &v)| (k, v)).collect();
        Gradients { grads, params }
    }
}

fn store_key<T>(store: &ParamStore<T>) -> usize {
    store as *const ParamStore<T> as usize
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<((usize, usize), usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf (interior gradients are released during the sweep).
    pub fn of(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads[v.id].as_ref()
    }

    /// Gradients of the parameters of `store`, indexed by slot (`None` when
    /// unused). Moves them out of `self`.
    pub fn params(&mut self, store: &ParamStore<T>) -> Vec<Option<Tensor<T>>> {
        let key = store_key(store);
        let mut out: Vec<Option<Tensor<T>>> = (0..store.len()).map(|_| None).collect();
        for &((s, param), node) in &self.params {
            if s == key && param < out.len() {
                out[param] = self.grads[node].take();
            }
        }
        out
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }
}
