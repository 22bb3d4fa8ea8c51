//! Tape-based reverse-mode differentiation.
//!
//! Every differentiable kernel records one node holding its adjoint closure.
//! [`Tape::backward`] replays the nodes in reverse recording order, exactly
//! once, accumulating gradients into per-node buffers. The network is a
//! static feed-forward graph, so a linear tape is all that is needed.
//!
//! A tape built with [`Tape::no_grad`] records nothing; values flow through
//! the same kernels and intermediate buffers are freed as soon as their
//! `Var`s drop.

use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Adjoint of a recorded kernel: receives the output gradient and a mask of
/// which inputs need gradients, returns one optional gradient per input.
pub type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<Option<usize>>,
    shape: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    enabled: bool,
    consumed: Cell<bool>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            enabled: true,
            consumed: Cell::new(false),
        }
    }

    /// A tape that records nothing, for inference.
    pub fn no_grad() -> Self {
        Tape {
            enabled: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a leaf whose gradient will be reported by `backward`.
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        if !self.enabled {
            return self.constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: Vec::new(),
            shape: value.shape().to_vec(),
            backward: None,
        });
        Var {
            tape: self,
            id: Some(nodes.len() - 1),
            value,
        }
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var {
            tape: self,
            id: None,
            value,
        }
    }

    /// Records a kernel output. The adjoint is only stored when at least one
    /// input is tracked.
    pub(crate) fn record<'t>(
        &'t self,
        value: Tensor<T>,
        inputs: &[&Var<'t, T>],
        backward: impl FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<'t, T> {
        #[cfg(debug_assertions)]
        if inputs.iter().all(|v| v.value.all_finite()) {
            assert!(value.all_finite(), "kernel produced non-finite output from finite inputs");
        }
        let parents: Vec<Option<usize>> = inputs.iter().map(|v| v.id).collect();
        if !self.enabled || parents.iter().all(Option::is_none) {
            return self.constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents,
            shape: value.shape().to_vec(),
            backward: Some(Box::new(backward)),
        });
        Var {
            tape: self,
            id: Some(nodes.len() - 1),
            value,
        }
    }

    /// Reverse sweep from a scalar loss. Consumes the recorded adjoints, so a
    /// tape supports a single backward pass.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.value.shape()
            )));
        }
        if self.consumed.replace(true) {
            return Err(Error::Autodiff("tape has already been differentiated".into()));
        }
        let mut nodes = self.nodes.borrow_mut();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        let Some(root) = loss.id else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(Tensor::ones(loss.value.shape())?);

        for i in (0..=root).rev() {
            let Some(backward) = nodes[i].backward.take() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let parents = std::mem::take(&mut nodes[i].parents);
            let needs: Vec<bool> = parents.iter().map(Option::is_some).collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), parents.len());
            for (parent, pg) in parents.iter().zip(parent_grads) {
                let (Some(p), Some(pg)) = (parent, pg) else {
                    continue;
                };
                debug_assert_eq!(pg.shape(), nodes[*p].shape.as_slice());
                grads[*p] = Some(match grads[*p].take() {
                    None => pg,
                    Some(acc) => acc.zip_map(&pg, |a, b| a + b)?,
                });
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by one backward sweep, indexed by the tracked `Var`.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf (or any retained node). `None` when the loss does
    /// not depend on it.
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        var.id.and_then(|id| self.grads.get(id)?.as_ref())
    }

    /// Gradient with zeros substituted for unreached leaves.
    pub fn get_or_zeros(&self, var: &Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()).expect("valid shape"))
    }
}

/// A value flowing through the tape.
#[derive(Clone)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: Option<usize>,
    value: Tensor<T>,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn into_value(self) -> Tensor<T> {
        self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn sum_gives_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.var(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.0).unwrap());
        let loss = ops::sum(&x);
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_sum_gives_twice_x() {
        let tape = Tape::<f64>::new();
        let xt = Tensor::from_fn(&[5], |i| i as f64 * 0.7 - 1.0).unwrap();
        let x = tape.var(xt.clone());
        let loss = ops::sum(&ops::mul(&x, &x).unwrap());
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&x).unwrap(), &xt.map(|v| 2.0 * v));
    }

    #[test]
    fn backward_rejects_non_scalar_and_second_pass() {
        let tape = Tape::<f64>::new();
        let x = tape.var(Tensor::ones(&[3]).unwrap());
        let y = ops::scale(&x, 2.0);
        assert!(tape.backward(&y).is_err());
        let l = ops::sum(&y);
        assert!(tape.backward(&l).is_ok());
        assert!(tape.backward(&l).is_err());
    }

    #[test]
    fn shared_input_accumulates() {
        let tape = Tape::<f64>::new();
        let x = tape.var(Tensor::full(&[2], 3.0).unwrap());
        let y = ops::add(&ops::scale(&x, 2.0), &ops::scale(&x, 5.0)).unwrap();
        let g = tape.backward(&ops::sum(&y)).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[7.0, 7.0]);
    }

    #[test]
    fn no_grad_records_nothing() {
        let tape = Tape::<f32>::no_grad();
        let x = tape.var(Tensor::ones(&[4]).unwrap());
        let y = ops::sigmoid(&x);
        assert!(!y.is_tracked());
        assert!(tape.is_empty());
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.var(Tensor::ones(&[2]).unwrap());
        let c = tape.constant(Tensor::full(&[2], 4.0).unwrap());
        let g = tape.backward(&ops::sum(&ops::mul(&x, &c).unwrap())).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[4.0, 4.0]);
        assert!(g.get(&c).is_none());
    }
}
