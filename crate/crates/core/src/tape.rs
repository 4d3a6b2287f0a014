//! Wengert-list reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and, when any input
//! requires a gradient, the information its backward rule needs. Backward
//! walks the list once in reverse from the loss node.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::conv::ConvGeom;
use crate::ops::resample::ResizeGeom;
use crate::ops::scan::ScanDims;
use crate::scalar::Scalar;
use crate::ssm::DiscreteSsm;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Silu,
    Softplus,
    Exp,
    Sigmoid,
    Ln,
    Neg,
    Square,
}

/// Backward rule supplied by the caller for [`Tape::custom_unary`]:
/// `(input, output, upstream gradient) -> input gradient`.
pub type CustomBackward<T> = Box<dyn Fn(&Tensor<T>, &Tensor<T>, &[T]) -> Vec<T>>;

pub(crate) enum Op<T: Scalar> {
    Matmul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Unary {
        kind: UnaryKind,
        x: Var,
    },
    Scale {
        x: Var,
        s: T,
    },
    Identity {
        x: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax {
        x: Var,
    },
    SumAll {
        x: Var,
    },
    SumLeading {
        x: Var,
    },
    Gather {
        x: Var,
        index: Vec<u32>,
    },
    Concat {
        a: Var,
        b: Var,
        ca: usize,
        cb: usize,
    },
    Stack {
        parts: Vec<Var>,
        inner: usize,
    },
    ScanMerge {
        x: Var,
        b: usize,
        h: usize,
        w: usize,
        c: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Resize {
        x: Var,
        geom: ResizeGeom,
    },
    SelectiveScan {
        u: Var,
        delta: Var,
        a: Var,
        bm: Var,
        cm: Var,
        d: Var,
        dims: ScanDims,
        states: Vec<T>,
    },
    FixedScan {
        x: Var,
        ssm: DiscreteSsm<T>,
    },
    Custom {
        x: Var,
        backward: CustomBackward<T>,
    },
}

impl<T: Scalar> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Matmul { a, b, .. } | Binary { a, b, .. } | Concat { a, b, .. } => vec![*a, *b],
            Unary { x, .. }
            | Scale { x, .. }
            | Identity { x }
            | Softmax { x }
            | SumAll { x }
            | SumLeading { x }
            | Gather { x, .. }
            | ScanMerge { x, .. }
            | Resize { x, .. }
            | FixedScan { x, .. }
            | Custom { x, .. } => vec![*x],
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Stack { parts, .. } => parts.clone(),
            Conv2d { x, w, bias, .. } => {
                let mut v = vec![*x, *w];
                v.extend(bias.iter().copied());
                v
            }
            SelectiveScan {
                u, delta, a, bm, cm, d, ..
            } => vec![*u, *delta, *a, *bm, *cm, *d],
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
    op: Option<Op<T>>,
}

/// Recording of one forward computation.
///
/// A tape is single-threaded; parallel evaluation uses one tape per worker and
/// reduces gradients in a fixed order.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
    /// First node whose finite inputs produced a non-finite value (debug builds).
    non_finite: Option<usize>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
            non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` call with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    /// Index of the first op that turned finite inputs into NaN/Inf. Only
    /// tracked in debug builds.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.non_finite
    }

    /// Clear all gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        #[cfg(debug_assertions)]
        if self.non_finite.is_none()
            && !value.is_finite()
            && op.inputs().iter().all(|v| self.nodes[v.0].value.is_finite())
        {
            self.non_finite = Some(self.nodes.len());
        }
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op: if requires_grad { Some(op) } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    /// Populate `grad` on every trainable leaf reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        if !loss_node.requires_grad {
            return Err(Error::EmptyTape);
        }
        if let Some(i) = self.non_finite {
            return Err(Error::Domain(alloc::format!(
                "node {i} produced a non-finite value from finite inputs"
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let Some(op) = node.op.as_ref() else {
                if node.requires_grad {
                    let shape = node.value.shape().to_vec();
                    self.nodes[i].grad = Some(Tensor::new(&shape, g)?);
                }
                continue;
            };
            let needs = |v: Var| self.nodes[v.0].requires_grad;
            let contributions = self.backward_op(op, &node.value, &g, &needs);
            for (v, gv) in contributions {
                if !needs(v) {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&gv) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(gv),
                }
            }
        }
        Ok(())
    }

    fn backward_op(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], needs: &dyn Fn(Var) -> bool) -> Vec<(Var, Vec<T>)> {
        use crate::ops::*;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut res = Vec::new();
        match op {
            Op::Matmul { a, b, m, k, n } => {
                if needs(*a) {
                    res.push((*a, linalg::matmul_grad_a(g, val(*b).data(), *m, *k, *n)));
                }
                if needs(*b) {
                    res.push((*b, linalg::matmul_grad_b(val(*a).data(), g, *m, *k, *n)));
                }
            }
            Op::Binary { kind, a, b } => {
                let (ga, gb) = elementwise::binary_grad(*kind, val(*a).data(), val(*b).data(), g, needs(*a), needs(*b));
                if let Some(ga) = ga {
                    res.push((*a, ga));
                }
                if let Some(gb) = gb {
                    res.push((*b, gb));
                }
            }
            Op::Unary { kind, x } => {
                res.push((*x, elementwise::unary_grad(*kind, val(*x).data(), out.data(), g)));
            }
            Op::Scale { x, s } => res.push((*x, g.iter().map(|&v| v * *s).collect())),
            Op::Identity { x } => res.push((*x, g.to_vec())),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (gx, gg, gb) = norm::layer_norm_grad(g, xhat, rstd, val(*gamma).data());
                if needs(*x) {
                    res.push((*x, gx));
                }
                res.push((*gamma, gg));
                res.push((*beta, gb));
            }
            Op::Softmax { x } => res.push((*x, norm::softmax_grad(out.data(), g, out.last_dim()))),
            Op::SumAll { x } => res.push((*x, vec![g[0]; val(*x).len()])),
            Op::SumLeading { x } => {
                let n = val(*x).len();
                let inner = g.len();
                res.push((*x, (0..n).map(|i| g[i % inner]).collect()));
            }
            Op::Gather { x, index } => {
                let mut gx = vec![T::zero(); val(*x).len()];
                for (o, &i) in index.iter().enumerate() {
                    gx[i as usize] += g[o];
                }
                res.push((*x, gx));
            }
            Op::Concat { a, b, ca, cb } => {
                let (ga, gb) = index::concat_grad(g, *ca, *cb);
                res.push((*a, ga));
                res.push((*b, gb));
            }
            Op::Stack { parts, inner } => {
                let p = parts.len();
                let outer = g.len() / (p * inner);
                for (k, v) in parts.iter().enumerate() {
                    if !needs(*v) {
                        continue;
                    }
                    let mut gv = Vec::with_capacity(outer * inner);
                    for o in 0..outer {
                        let s = (o * p + k) * inner;
                        gv.extend_from_slice(&g[s..s + inner]);
                    }
                    res.push((*v, gv));
                }
            }
            Op::ScanMerge { x, b, h, w, c } => {
                res.push((*x, scan::merge_grad(g, *b, *h, *w, *c)));
            }
            Op::Conv2d { x, w, bias, geom } => {
                let (gx, gw, gb) = conv::conv2d_grad(
                    geom,
                    val(*x).data(),
                    val(*w).data(),
                    g,
                    needs(*x),
                    needs(*w),
                    bias.is_some(),
                );
                if let Some(gx) = gx {
                    res.push((*x, gx));
                }
                if let Some(gw) = gw {
                    res.push((*w, gw));
                }
                if let (Some(bv), Some(gb)) = (bias, gb) {
                    res.push((*bv, gb));
                }
            }
            Op::Resize { x, geom } => res.push((*x, resample::resize_grad(geom, g))),
            Op::SelectiveScan {
                u,
                delta,
                a,
                bm,
                cm,
                d,
                dims,
                states,
            } => {
                let grads = scan::selective_scan_grad(
                    dims,
                    val(*u).data(),
                    val(*delta).data(),
                    val(*a).data(),
                    val(*bm).data(),
                    val(*cm).data(),
                    val(*d).data(),
                    states,
                    g,
                );
                for (v, gv) in [*u, *delta, *a, *bm, *cm, *d].into_iter().zip(grads) {
                    res.push((v, gv));
                }
            }
            Op::FixedScan { x, ssm } => res.push((*x, scan::fixed_scan_grad(ssm, g))),
            Op::Custom { x, backward } => res.push((*x, backward(val(*x), out, g))),
        }
        res
    }

    /// Unary op with a caller-supplied forward and backward rule.
    pub fn custom_unary(&mut self, x: Var, forward: impl Fn(T) -> T, backward: CustomBackward<T>) -> Var {
        let out = self.value(x).map(forward);
        self.push(out, Op::Custom { x, backward })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let y = t.mul(x, x).unwrap();
        assert!(matches!(t.backward(y), Err(Error::Contract(_))));
        let c = t.constant(Tensor::scalar(3.0));
        let c2 = t.scale(c, 2.0);
        assert_eq!(t.backward(c2), Err(Error::EmptyTape));
    }

    #[test]
    fn double_backward_is_an_error() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.backward(s), Err(Error::BackwardTwice));
        t.reset_grads();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn gradients_accumulate_over_reuse() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::from_f64(&[1], &[3.0]).unwrap());
        let y = t.add(x, x).unwrap();
        let z = t.mul(y, x).unwrap();
        let s = t.sum(z);
        t.backward(s).unwrap();
        // z = 2x^2
        assert_eq!(t.grad(x).unwrap().data(), &[12.0]);
    }

    #[test]
    fn linear_loss_gradient_is_input() {
        let mut t = Tape::<f64>::new();
        let w = t.param(Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap());
        let x = t.constant(Tensor::from_f64(&[3], &[4.0, 5.0, 6.0]).unwrap());
        let wx = t.mul(w, x).unwrap();
        let s = t.sum(wx);
        t.backward(s).unwrap();
        assert_eq!(t.grad(w).unwrap().data(), &[4.0, 5.0, 6.0]);
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn disjoint_graph_grads_stay_absent() {
        let mut t = Tape::<f64>::new();
        let a = t.param(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
        let b = t.param(Tensor::from_f64(&[2], &[3.0, 4.0]).unwrap());
        let la = t.sum(a);
        let bb = t.mul(b, b).unwrap();
        let _lb = t.sum(bb);
        t.backward(la).unwrap();
        assert!(t.grad(a).is_some());
        assert!(t.grad(b).is_none());
    }
}
