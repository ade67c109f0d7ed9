//! Reverse-mode automatic differentiation on a recorded tape.
//!
//! Every operation appends a node holding its forward value and, when any
//! input requires a gradient, a closure mapping the output gradient to input
//! gradients. `Tape::inference` records values only.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::array::Array;
use crate::float::Float;
use crate::params::ParamId;

/// Maps the output gradient to one optional gradient per parent. The flags
/// say which parents actually need one.
pub type BackwardFn<T> = Box<dyn Fn(&Array<T>, &[bool]) -> Vec<Option<Array<T>>>>;

struct Node<T> {
    value: Rc<Array<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
    param_leaves: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<T> Copy for Var<'_, T> {}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    /// A tape that records gradients.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            param_leaves: RefCell::default(),
        }
    }

    /// A tape that never records backward closures.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements held by non-parameter nodes; an upper bound on the activation
    /// memory of the recorded pass.
    pub fn activation_elements(&self) -> usize {
        self.nodes
            .borrow()
            .iter()
            .filter(|n| n.param.is_none())
            .map(|n| n.value.len())
            .sum()
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Array<T>) -> Var<'_, T> {
        self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
            param: None,
        })
    }

    /// A free leaf that receives a gradient (useful for tests and inputs).
    pub fn leaf(&self, value: Array<T>) -> Var<'_, T> {
        self.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: self.grad_enabled,
            param: None,
        })
    }

    /// Leaf bound to a parameter. Repeated requests for the same id share a node.
    pub fn param(&self, id: ParamId, value: &Rc<Array<T>>, trainable: bool) -> Var<'_, T> {
        if let Some(&node) = self.param_leaves.borrow().get(&id) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let v = self.push(Node {
            value: Rc::clone(value),
            parents: Vec::new(),
            backward: None,
            requires_grad: self.grad_enabled && trainable,
            param: Some(id),
        });
        self.param_leaves.borrow_mut().insert(id, v.id);
        v
    }

    /// Records an operation. `backward` is dropped when no parent needs a gradient.
    pub fn op<'t, F>(&'t self, value: Array<T>, parents: &[Var<'t, T>], backward: F) -> Var<'t, T>
    where
        F: Fn(&Array<T>, &[bool]) -> Vec<Option<Array<T>>> + 'static,
    {
        let requires_grad = self.grad_enabled && parents.iter().any(|p| p.requires_grad());
        self.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
            param: None,
        })
    }

    /// Gradients of the scalar `root` with respect to every node that requires one.
    pub fn backward(&self, root: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let root_val = &nodes[root.id].value;
        assert_eq!(
            root_val.len(),
            1,
            "backward root must be a scalar, got {:?}",
            root_val.shape()
        );
        let mut grads: Vec<Option<Array<T>>> = (0..=root.id).map(|_| None).collect();
        grads[root.id] = Some(Array::full(root_val.shape(), T::one()));
        let mut params = HashMap::new();
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(pid) = node.param {
                params.insert(pid, g);
                continue;
            }
            let Some(bw) = &node.backward else {
                grads[id] = Some(g);
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = bw(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(
                    pg.shape(),
                    nodes[p].value.shape(),
                    "gradient shape for node {p}"
                );
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients {
            leaves: grads,
            params,
        }
    }
}

impl<'t, T: Float> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Array<T>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].value.item()
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    leaves: Vec<Option<Array<T>>>,
    params: HashMap<ParamId, Array<T>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of a free leaf created by [`Tape::leaf`].
    pub fn wrt(&self, v: Var<'_, T>) -> Option<&Array<T>> {
        self.leaves.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Array<T>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Array<T>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }
}
