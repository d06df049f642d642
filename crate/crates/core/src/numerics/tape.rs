//! Define-by-run reverse-mode differentiation over [`Array`] values.
//!
//! A [`Tape`] owns every intermediate value of one forward evaluation. Nodes are
//! appended in evaluation order, so node indices are already a topological
//! order; [`Tape::backward`] walks them once in reverse and sums adjoints
//! arriving over shared subexpressions.

use std::cell::RefCell;
use std::fmt;

use super::{Array, NumericsError};
use crate::scalar::Real;

/// Inputs handed to a backward closure.
pub struct BackwardCtx<'a, T> {
    /// Adjoint of the node's output, same length as `output`.
    pub grad: &'a [T],
    pub inputs: &'a [&'a Array<T>],
    pub output: &'a Array<T>,
    needs: &'a [bool],
}

impl<T> BackwardCtx<'_, T> {
    /// Whether input `i` is connected to a leaf that requires a gradient.
    pub fn needs(&self, i: usize) -> bool {
        self.needs[i]
    }
}

/// Vector-Jacobian product: one optional adjoint contribution per input.
pub type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    op: &'static str,
    value: Array<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Tape`].
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

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).finish()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, value: Array<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: if requires_grad { "leaf" } else { "constant" },
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf whose adjoint is reported by [`Tape::backward`].
    pub fn var(&self, value: Array<T>) -> Var<'_, T> {
        self.push_leaf(value, true)
    }

    pub fn constant(&self, value: Array<T>) -> Var<'_, T> {
        self.push_leaf(value, false)
    }

    /// Records a new node computed from `inputs`.
    ///
    /// The output is checked for finiteness; a non-finite value is an error
    /// naming `op`. The backward closure is dropped when no input requires a
    /// gradient.
    pub fn record<'t>(
        &'t self,
        op: &'static str,
        inputs: &[Var<'t, T>],
        forward: impl FnOnce(&[&Array<T>]) -> Result<Array<T>, NumericsError>,
        backward: BackwardFn<T>,
    ) -> Result<Var<'t, T>, NumericsError> {
        for v in inputs {
            assert!(std::ptr::eq(v.tape, self), "variable belongs to another tape");
        }
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let values: Vec<&Array<T>> = inputs.iter().map(|v| &nodes[v.id].value).collect();
            let value = forward(&values).map_err(|e| match e {
                NumericsError::NonFinite { index, .. } => NumericsError::NonFinite { op, index },
                other => other,
            })?;
            let requires_grad = inputs.iter().any(|v| nodes[v.id].requires_grad);
            (value, requires_grad)
        };
        if let Some(index) = value.data().iter().position(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite {
                op,
                index: Some(index),
            });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            parents: inputs.iter().map(|v| v.id).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var<'_, T>) -> Result<Gradients<T>, NumericsError> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.len() != 1 {
            return Err(NumericsError::NotScalar {
                shape: out.value.shape().to_vec(),
            });
        }
        let mut adjoints: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        adjoints[output.id] = Some(vec![T::one()]);

        for id in (0..=output.id).rev() {
            let Some(grad) = adjoints[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if let Some(backward) = &node.backward {
                let inputs: Vec<&Array<T>> =
                    node.parents.iter().map(|&p| &nodes[p].value).collect();
                let needs: Vec<bool> = node
                    .parents
                    .iter()
                    .map(|&p| nodes[p].requires_grad)
                    .collect();
                let ctx = BackwardCtx {
                    grad: &grad,
                    inputs: &inputs,
                    output: &node.value,
                    needs: &needs,
                };
                let contributions = backward(&ctx);
                debug_assert_eq!(contributions.len(), node.parents.len());
                for ((&parent, contribution), &need) in
                    node.parents.iter().zip(contributions).zip(&needs)
                {
                    let Some(contribution) = contribution else {
                        continue;
                    };
                    if !need {
                        continue;
                    }
                    debug_assert_eq!(contribution.len(), nodes[parent].value.len());
                    match &mut adjoints[parent] {
                        Some(acc) => acc
                            .iter_mut()
                            .zip(&contribution)
                            .for_each(|(a, &c)| *a += c),
                        slot @ None => *slot = Some(contribution),
                    }
                }
            }
            // Leaves keep their adjoint; interior adjoints were consumed above.
            if node.parents.is_empty() && node.requires_grad {
                if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
                    return Err(NumericsError::NonFinite {
                        op: "backward",
                        index: Some(index),
                    });
                }
                adjoints[id] = Some(grad);
            }
        }

        let grads = nodes
            .iter()
            .zip(adjoints)
            .map(|(node, adj)| {
                if node.parents.is_empty() && node.requires_grad {
                    adj.map(|g| Array::from_parts(node.value.shape().to_vec(), g))
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    pub(crate) fn value_of(&self, id: usize) -> Array<T> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    pub(crate) fn op_of(&self, id: usize) -> &'static str {
        self.nodes.borrow()[id].op
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Copy of the node's value, detached from the tape.
    pub fn value(&self) -> Array<T> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn op(&self) -> &'static str {
        self.tape.op_of(self.id)
    }

    /// Whether any gradient flows from a leaf into this node.
    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Value of a single-element node.
    pub fn item(&self) -> Result<T, NumericsError> {
        let v = self.value();
        v.item().ok_or(NumericsError::NotScalar {
            shape: v.shape().to_vec(),
        })
    }
}

/// Adjoints of the leaves that requested them.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `var`; `None` for constants and leaves the output does not reach.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Array<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient for `var`, or zeros when the output does not depend on it.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Array<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Array::zeros(&var.shape()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaves_get_adjoints_constants_do_not() {
        let tape = Tape::<f64>::new();
        let x = tape.var(Array::from_vec(vec![1.0, 2.0]).unwrap());
        let c = tape.constant(Array::from_vec(vec![3.0, 4.0]).unwrap());
        let y = x.mul(c).unwrap().sum().unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f(x) = sum(x*x); g = f + f, so dg/dx = 4x.
        let tape = Tape::<f64>::new();
        let x = tape.var(Array::from_vec(vec![0.5, -1.5]).unwrap());
        let f = x.mul(x).unwrap().sum().unwrap();
        let g = f.add(f).unwrap();
        let grads = tape.backward(g).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -6.0]);
    }

    #[test]
    fn backward_requires_scalar_output() {
        let tape = Tape::<f64>::new();
        let x = tape.var(Array::from_vec(vec![1.0, 2.0]).unwrap());
        assert!(matches!(
            tape.backward(x),
            Err(NumericsError::NotScalar { .. })
        ));
    }

    #[test]
    fn unreached_leaf_has_no_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.var(Array::scalar(1.0));
        let y = tape.var(Array::scalar(2.0));
        let z = y.scale(3.0).unwrap();
        let g = tape.backward(z).unwrap();
        assert!(g.get(x).is_none());
        assert_eq!(g.get_or_zeros(x).data(), &[0.0]);
        assert_eq!(g.get(y).unwrap().data(), &[3.0]);
    }
}
