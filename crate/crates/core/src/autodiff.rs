//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records each differentiable op as it executes. Values are
//! computed eagerly; [`Tape::backward`] walks the record in reverse and
//! accumulates vector-Jacobian products into a [`Gradients`] table.
//!
//! The op set is closed: conv2d, masked merge, relu, sigmoid, add,
//! elementwise mul, scaling, nearest-neighbour resize, sum/mean reductions
//! and the binary focal loss.
//!
//! ```
//! use inod::autodiff::Tape;
//! use inod::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.grad(&tape, x).data(), &[2.0, -4.0, 1.0]);
//! ```

use crate::error::{Error, Result};
use crate::grid::BinaryGrid;
use crate::ops::{self, ConvGeometry, FocalParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
    },
    MaskedMerge {
        a: Var,
        b: Var,
        mask: BinaryGrid,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Resize(Var),
    Sum(Var),
    Mean(Var),
    Focal {
        logits: Var,
        target: BinaryGrid,
        params: FocalParams,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Single-writer record of executed ops. Use one tape per forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let geometry = ConvGeometry::resolve(x, w, b, stride, padding)?;
        let out = ops::conv2d(x, w, b, stride, padding)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
            },
            rg,
        ))
    }

    /// `a` where `mask` is set, `b` elsewhere.
    pub fn masked_merge(&mut self, a: Var, b: Var, mask: &BinaryGrid) -> Result<Var> {
        let out = ops::masked_merge(self.value(a), self.value(b), mask)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            out,
            Op::MaskedMerge {
                a,
                b,
                mask: mask.clone(),
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(ops::sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= bv;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let f = T::from_f64_lossy(factor);
        let out = self.value(x).map(|v| v * f);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, factor), rg)
    }

    /// Nearest-neighbour resize of a CxHxW value (center sampling).
    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = ops::resize_nearest(self.value(x), out_h, out_w)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Resize(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(x);
        self.push(out, Op::Mean(x), rg)
    }

    /// Mean binary focal loss of `logits` against `target` (one logit per cell).
    pub fn focal_loss(&mut self, logits: Var, target: &BinaryGrid, params: FocalParams) -> Result<Var> {
        let (loss, _) = ops::focal_loss(self.value(logits), target, params)?;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Focal {
                logits,
                target: target.clone(),
                params,
            },
            rg,
        ))
    }

    /// Sign pattern of every relu input recorded so far.
    ///
    /// Finite-difference checks compare patterns before and after a
    /// perturbation to detect kink crossings.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(self.value(x).data().iter().map(|&v| v > T::zero())),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::arg("loss", "variable does not belong to this tape"));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::arg(
                "loss",
                format!("must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geometry,
                } => {
                    let (gi, gw, gb) = ops::conv2d_backward(
                        self.value(*input),
                        self.value(*weight),
                        &g,
                        geometry,
                        self.rg(*input),
                    );
                    if let Some(gi) = gi {
                        self.accumulate(&mut grads, *input, gi);
                    }
                    self.accumulate(&mut grads, *weight, gw);
                    self.accumulate(&mut grads, *bias, gb);
                }
                Op::MaskedMerge { a, b, mask } => {
                    let (ga, gb) = ops::masked_merge_backward(&g, mask);
                    self.accumulate(&mut grads, *a, ga);
                    self.accumulate(&mut grads, *b, gb);
                }
                Op::Relu(x) => {
                    let mut gx = g;
                    for (d, &v) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let mut gx = g;
                    for (d, &s) in gx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= s * (T::one() - s);
                    }
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let mut ga = g.clone();
                    for (d, &bv) in ga.data_mut().iter_mut().zip(self.value(*b).data()) {
                        *d *= bv;
                    }
                    let mut gb = g;
                    for (d, &av) in gb.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *d *= av;
                    }
                    self.accumulate(&mut grads, *a, ga);
                    self.accumulate(&mut grads, *b, gb);
                }
                Op::Scale(x, f) => {
                    let f = T::from_f64_lossy(*f);
                    self.accumulate(&mut grads, *x, g.map(|v| v * f));
                }
                Op::Resize(x) => {
                    let gx = ops::resize_nearest_backward(&g, self.value(*x).shape());
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let gx = Tensor::full(self.value(*x).shape(), g.data()[0]);
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::Mean(x) => {
                    let n = T::from_usize(self.value(*x).len()).expect("length fits");
                    let gx = Tensor::full(self.value(*x).shape(), g.data()[0] / n);
                    self.accumulate(&mut grads, *x, gx);
                }
                Op::Focal {
                    logits,
                    target,
                    params,
                } => {
                    let (_, dl) = ops::focal_loss(self.value(*logits), target, *params)
                        .expect("shapes validated on record");
                    let upstream = g.data()[0];
                    self.accumulate(&mut grads, *logits, dl.map(|v| v * upstream));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }
}

/// Gradients of one backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient reached by the sweep, if any.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`; zeros when `v` did not contribute to the loss.
    pub fn grad(&self, tape: &Tape<T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}
