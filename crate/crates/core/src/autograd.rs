//! Reverse-mode automatic differentiation over a per-forward-pass tape.
//!
//! A [`Tape`] records every operation of one forward pass as an append-only
//! list of nodes; a node's inputs always precede it, so insertion order is a
//! topological order. [`Tape::backward`] walks the list once in reverse and
//! accumulates gradients into every node that feeds more than one consumer.
//!
//! Values are stored on the tape; a [`Var`] is a cheap copyable handle into
//! it. Each op's backward closure receives the input and output values from
//! the tape and captures only the extra state it needs (argmax indices,
//! normalization statistics and the like).

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Everything an op's backward sees.
pub struct BackwardCtx<'a, F: Real> {
    /// Gradient of the loss with respect to this op's output.
    pub grad: &'a Tensor<F>,
    pub inputs: &'a [&'a Tensor<F>],
    pub output: &'a Tensor<F>,
    /// Whether each input needs a gradient; ops may skip the rest.
    pub needs: &'a [bool],
}

/// Returns one gradient per input (`None` when not needed).
pub type BackwardFn<F> = Box<dyn Fn(&BackwardCtx<'_, F>) -> Vec<Option<Tensor<F>>>>;

struct Node<F: Real> {
    op: &'static str,
    value: Rc<Tensor<F>>,
    inputs: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<F>>,
}

/// Append-only record of one forward pass.
pub struct Tape<F: Real = f32> {
    nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, F: Real = f32> {
    tape: &'t Tape<F>,
    id: usize,
}

impl<F: Real> Clone for Var<'_, F> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<F: Real> Copy for Var<'_, F> {}

impl<F: Real> std::fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<F: Real> Tape<F> {
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

    fn push(&self, node: Node<F>) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records a leaf that receives a gradient (a parameter or probed input).
    pub fn param(&self, value: Tensor<F>) -> Var<'_, F> {
        self.leaf(value, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<F>, requires_grad: bool) -> Var<'_, F> {
        self.push(Node {
            op: "leaf",
            value: Rc::new(value),
            inputs: Vec::new(),
            requires_grad,
            backward: None,
        })
    }

    /// Records a differentiable op computed outside the tape.
    ///
    /// `value` is the already-computed output; `backward` maps the output
    /// gradient to input gradients. The result requires a gradient iff any
    /// input does.
    pub fn op<'t>(
        &'t self,
        name: &'static str,
        inputs: &[Var<'t, F>],
        value: Tensor<F>,
        backward: BackwardFn<F>,
    ) -> Result<Var<'t, F>> {
        for v in inputs {
            self.check_owner(v)?;
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        Ok(self.push(Node {
            op: name,
            value: Rc::new(value),
            inputs: inputs.iter().map(|v| v.id).collect(),
            requires_grad,
            backward: requires_grad.then_some(backward),
        }))
    }

    fn check_owner(&self, v: &Var<'_, F>) -> Result<()> {
        if std::ptr::eq(v.tape, self) {
            Ok(())
        } else {
            Err(Error::DetachedTensor)
        }
    }

    /// Back-propagates from a scalar `loss`.
    ///
    /// Every `requires_grad` leaf reachable from `loss` gets a gradient of its
    /// own shape; contributions from multiple consumers are summed.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<Gradients<F>> {
        self.check_owner(&loss)?;
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..=loss.id).map(|_| None).collect();
        let mut leaves = HashMap::new();
        if !root.requires_grad {
            return Ok(Gradients { grads: leaves });
        }
        grads[loss.id] = Some(Tensor::full(root.value.shape().to_vec(), F::one()));

        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                if node.requires_grad {
                    leaves.insert(id, grad);
                }
                continue;
            };
            let inputs: Vec<&Tensor<F>> =
                node.inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| nodes[i].requires_grad)
                .collect();
            let ctx = BackwardCtx {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            };
            let input_grads = backward(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
            for ((&input, g), &need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                let (Some(g), true) = (g, need) else {
                    continue;
                };
                debug_assert_eq!(
                    g.shape(),
                    nodes[input].value.shape(),
                    "gradient shape from op {}",
                    node.op
                );
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients<F: Real> {
    grads: HashMap<usize, Tensor<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var<'_, F>) -> Option<&Tensor<F>> {
        self.grads.get(&v.id)
    }

    pub fn take(&mut self, v: Var<'_, F>) -> Option<Tensor<F>> {
        self.grads.remove(&v.id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<'t, F: Real> Var<'t, F> {
    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<F>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn binary(
        self,
        other: Var<'t, F>,
        name: &'static str,
        f: impl Fn(F, F) -> F,
        backward: BackwardFn<F>,
    ) -> Result<Var<'t, F>> {
        let a = self.value();
        let b = other.value();
        let value = if a.shape() == b.shape() {
            a.zip_map(&b, f)?
        } else if b.numel() == 1 {
            let s = b.data()[0];
            a.map(|x| f(x, s))
        } else {
            return Err(Error::ShapeMismatch(format!(
                "{name}: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        };
        self.tape.op(name, &[self, other], value, backward)
    }

    pub fn add(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(
            other,
            "add",
            |x, y| x + y,
            Box::new(|ctx| {
                vec![
                    Some(ctx.grad.clone()),
                    Some(reduce_to(ctx.grad.clone(), ctx.inputs[1])),
                ]
            }),
        )
    }

    pub fn sub(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(
            other,
            "sub",
            |x, y| x - y,
            Box::new(|ctx| {
                vec![
                    Some(ctx.grad.clone()),
                    Some(reduce_to(ctx.grad.map(|g| -g), ctx.inputs[1])),
                ]
            }),
        )
    }

    pub fn mul(self, other: Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(
            other,
            "mul",
            |x, y| x * y,
            Box::new(|ctx| {
                let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
                let ga = ctx.needs[0].then(|| {
                    if b.shape() == g.shape() {
                        g.zip_map(b, |g, y| g * y).expect("same shape")
                    } else {
                        let s = b.data()[0];
                        g.map(|g| g * s)
                    }
                });
                let gb = ctx.needs[1].then(|| {
                    reduce_to(g.zip_map(a, |g, x| g * x).expect("same shape"), b)
                });
                vec![ga, gb]
            }),
        )
    }

    pub fn neg(self) -> Result<Var<'t, F>> {
        let value = self.value().map(|x| -x);
        self.tape.op(
            "neg",
            &[self],
            value,
            Box::new(|ctx| vec![Some(ctx.grad.map(|g| -g))]),
        )
    }

    /// Multiplies by a constant.
    pub fn scale(self, k: F) -> Result<Var<'t, F>> {
        let value = self.value().map(|x| x * k);
        self.tape.op(
            "scale",
            &[self],
            value,
            Box::new(move |ctx| vec![Some(ctx.grad.map(|g| g * k))]),
        )
    }

    /// Elementwise natural logarithm; every element must be positive.
    pub fn ln(self) -> Result<Var<'t, F>> {
        let v = self.value();
        if let Some(&bad) = v.data().iter().find(|&&x| !(x > F::zero()) || !x.is_finite()) {
            return Err(Error::Domain {
                op: "ln",
                value: bad.as_f64(),
            });
        }
        let value = v.map(|x| x.ln());
        self.tape.op(
            "ln",
            &[self],
            value,
            Box::new(|ctx| {
                vec![Some(
                    ctx.grad
                        .zip_map(ctx.inputs[0], |g, x| g / x)
                        .expect("same shape"),
                )]
            }),
        )
    }

    pub fn sum(self) -> Result<Var<'t, F>> {
        let v = self.value();
        if v.numel() == 0 {
            return Err(Error::EmptyTensor);
        }
        let value = Tensor::scalar(v.sum());
        self.tape.op(
            "sum",
            &[self],
            value,
            Box::new(|ctx| {
                let g = ctx.grad.data()[0];
                vec![Some(Tensor::full(ctx.inputs[0].shape().to_vec(), g))]
            }),
        )
    }

    pub fn mean(self) -> Result<Var<'t, F>> {
        let v = self.value();
        if v.numel() == 0 {
            return Err(Error::EmptyTensor);
        }
        let n = F::of(v.numel() as f64);
        let value = Tensor::scalar(v.sum() / n);
        self.tape.op(
            "mean",
            &[self],
            value,
            Box::new(move |ctx| {
                let g = ctx.grad.data()[0] / n;
                vec![Some(Tensor::full(ctx.inputs[0].shape().to_vec(), g))]
            }),
        )
    }
}

/// Sums a broadcast gradient back down to the scalar operand's shape.
fn reduce_to<F: Real>(grad: Tensor<F>, target: &Tensor<F>) -> Tensor<F> {
    if grad.shape() == target.shape() {
        grad
    } else {
        Tensor::full(target.shape().to_vec(), grad.sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64([v.len()], v).unwrap()
    }

    #[test]
    fn add_matches_definition() {
        let tape = Tape::new();
        let a = tape.constant(t(&[1.0, 2.0]));
        let b = tape.constant(t(&[3.0, 4.0]));
        assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
    }

    #[test]
    fn mismatched_shapes_error() {
        let tape = Tape::new();
        let a = tape.constant(t(&[1.0, 2.0]));
        let b = tape.constant(t(&[3.0, 4.0, 5.0]));
        assert!(matches!(a.add(b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let tape = Tape::new();
        let a = tape.param(t(&[1.0, 2.0, 3.0]));
        let s = tape.param(Tensor::scalar(2.0));
        let loss = a.mul(s).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.get(s).unwrap().data(), &[6.0]);
    }

    #[test]
    fn mul_by_zero_annihilates() {
        let tape = Tape::new();
        let x = tape.param(t(&[1.5, -2.0]));
        let z = tape.constant(Tensor::scalar(0.0));
        let y = x.mul(z).unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.0]);
        let g = tape.backward(y.sum().unwrap()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn sum_and_mean_gradients() {
        let tape = Tape::new();
        let x = tape.param(t(&[1.0, 2.0, 3.0]));
        let s = x.sum().unwrap();
        assert_eq!(s.value().data(), &[6.0]);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let tape = Tape::new();
        let x = tape.param(Tensor::full([4], 7.0));
        let m = x.mean().unwrap();
        assert_eq!(m.value().data(), &[7.0]);
        let g = tape.backward(m).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn accumulates_across_consumers() {
        for k in 2..=3 {
            let tape = Tape::new();
            let x = tape.param(t(&[1.0, -1.0, 0.5]));
            let mut loss = x.sum().unwrap();
            for _ in 1..k {
                loss = loss.add(x.sum().unwrap()).unwrap();
            }
            let g = tape.backward(loss).unwrap();
            assert_eq!(g.get(x).unwrap().data(), &[k as f64; 3]);
        }
        // x used as both factors: d(sum x*x)/dx = 2x
        let tape = Tape::new();
        let x = tape.param(t(&[3.0, -2.0]));
        let g = tape.backward(x.mul(x).unwrap().sum().unwrap()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0, -4.0]);
    }

    #[test]
    fn unreachable_and_constant_leaves_get_nothing() {
        let tape = Tape::new();
        let x = tape.param(t(&[1.0]));
        let unused = tape.param(t(&[2.0]));
        let c = tape.constant(t(&[5.0]));
        let g = tape.backward(x.mul(c).unwrap().sum().unwrap()).unwrap();
        assert!(g.get(x).is_some());
        assert!(g.get(unused).is_none());
        assert!(g.get(c).is_none());
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::new();
        let x = tape.param(t(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
        let other = Tape::new();
        let y = other.param(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(y), Err(Error::DetachedTensor)));
        assert!(matches!(
            tape.param(Tensor::zeros([0])).sum(),
            Err(Error::EmptyTensor)
        ));
    }

    #[test]
    fn ln_validates_domain() {
        let tape = Tape::new();
        let x = tape.param(t(&[1.0, 0.0]));
        assert!(matches!(x.ln(), Err(Error::Domain { .. })));
    }
}
