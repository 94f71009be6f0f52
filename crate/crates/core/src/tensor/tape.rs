use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::Tensor;
use crate::error::{Error, Result};

/// Maps the output gradient to one optional gradient per input.
///
/// The mask says which inputs need a gradient; entries for the others may
/// be `None`.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    op: &'static str,
    value: Rc<Tensor>,
    inputs: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Tensor>>>,
}

/// Ordered record of executed ops.
///
/// Nodes are appended in execution order, so the record is already a
/// topological order and the backward pass is a single reverse sweep.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
    value: Rc<Tensor>,
}

thread_local! {
    static FAULTY_OP: Cell<Option<&'static str>> = const { Cell::new(None) };
}

/// Corrupts the backward rule of `op` on the current thread (gradients are
/// scaled by 1.5). Used to prove that the gradient checker notices.
#[doc(hidden)]
pub fn inject_backward_fault(op: Option<&'static str>) {
    FAULTY_OP.with(|f| f.set(op));
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.record("leaf", value, Vec::new(), true, None)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var {
        self.record("constant", value, Vec::new(), false, None)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Op names in execution order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.inner.borrow().nodes.iter().map(|n| n.op).collect()
    }

    /// Records the result of an op. Rejects non-finite outputs.
    pub(crate) fn push(
        &self,
        op: &'static str,
        value: Tensor,
        inputs: &[&Var],
        backward: BackwardFn,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        for v in inputs {
            debug_assert!(Rc::ptr_eq(&v.tape.inner, &self.inner), "mixed tapes in {op}");
        }
        let requires_grad = inputs.iter().any(|v| v.requires_grad());
        let ids = inputs.iter().map(|v| v.id).collect();
        Ok(self.record(op, value, ids, requires_grad, Some(backward)))
    }

    fn record(
        &self,
        op: &'static str,
        value: Tensor,
        inputs: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Var {
        let value = Rc::new(value);
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            value: Rc::clone(&value),
            inputs,
            requires_grad,
            backward,
        });
        Var {
            tape: self.clone(),
            id,
            value,
        }
    }

    /// Propagates gradients from a scalar loss to every node.
    ///
    /// Afterwards every gradient-requiring leaf has a gradient; leaves the
    /// loss does not depend on get zeros.
    pub fn backward(&self, loss: &Var) -> Result<()> {
        if loss.value.len() != 1 {
            return Err(Error::NonScalarLoss(loss.value.shape().to_vec()));
        }
        self.backward_seeded(loss, Tensor::full(loss.value.shape().to_vec(), 1.0))
    }

    /// Vector-Jacobian product: backward from `output` with `seed` as its
    /// incoming gradient.
    pub fn backward_seeded(&self, output: &Var, seed: Tensor) -> Result<()> {
        if seed.shape() != output.value.shape() {
            return Err(Error::shape(
                "backward",
                format!("seed {:?} vs output {:?}", seed.shape(), output.value.shape()),
            ));
        }
        let loss = output;
        let mut inner = self.inner.borrow_mut();
        if inner.grads.is_some() {
            return Err(Error::BackwardTwice);
        }
        let fault = FAULTY_OP.with(|f| f.get());
        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(seed);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad_out) = grads[id].take() else {
                continue;
            };
            let mask: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let input_grads = backward(&grad_out, &mask);
            grads[id] = Some(grad_out);
            for ((&input, g), needed) in node.inputs.iter().zip(input_grads).zip(mask) {
                let (Some(mut g), true) = (g, needed) else {
                    continue;
                };
                if fault == Some(node.op) {
                    g.data_mut().iter_mut().for_each(|v| *v *= 1.5);
                }
                debug_assert_eq!(g.shape(), nodes[input].value.shape(), "grad shape from {}", node.op);
                match &mut grads[input] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
        }

        for (node, grad) in nodes.iter().zip(grads.iter_mut()) {
            if node.requires_grad && node.inputs.is_empty() && grad.is_none() {
                *grad = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        inner.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `var`.
    pub fn grad(&self, var: &Var) -> Option<Tensor> {
        self.inner
            .borrow()
            .grads
            .as_ref()
            .and_then(|g| g[var.id].clone())
    }

    /// Clears gradients so that backward may run again.
    pub fn reset_grads(&self) {
        self.inner.borrow_mut().grads = None;
    }
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(self)
    }

    pub(crate) fn value_rc(&self) -> Rc<Tensor> {
        Rc::clone(&self.value)
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value.shape())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 5.0]).unwrap());
        let loss = x.sum().unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gives_twice_x() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 5.0]).unwrap());
        let loss = x.mul(&x).unwrap().sum().unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2.0, -4.0, 10.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_grad() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(vec![2]));
        let unused = tape.leaf(Tensor::ones(vec![4]));
        let loss = x.sum().unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(unused.grad().unwrap(), Tensor::zeros(vec![4]));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(vec![2]));
        let loss = x.sum().unwrap();
        tape.backward(&loss).unwrap();
        assert!(matches!(tape.backward(&loss), Err(Error::BackwardTwice)));
        tape.reset_grads();
        tape.backward(&loss).unwrap();
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(vec![2]));
        assert!(matches!(tape.backward(&x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_get_no_grad() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(vec![2]));
        let c = tape.constant(Tensor::full(vec![2], 3.0));
        let loss = x.mul(&c).unwrap().sum().unwrap();
        tape.backward(&loss).unwrap();
        assert!(c.grad().is_none());
        assert_eq!(x.grad().unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = x.add(&x).unwrap().add(&x).unwrap();
        tape.backward(&y).unwrap();
        assert_eq!(x.grad().unwrap().item(), 3.0);
    }
}
