use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::scalar::{self, Scalar};
use crate::tape::{BinaryKind, Op, Tape, UnaryKind, Var};
use crate::tensor::Tensor;

/// Trailing-axis broadcast: the smaller shape must be a suffix of the larger.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let (big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if big.ends_with(small) || small.iter().product::<usize>() == 1 {
        Some(big.to_vec())
    } else {
        None
    }
}

#[inline]
fn apply<T: Scalar>(kind: BinaryKind, x: T, y: T) -> T {
    match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
        BinaryKind::Div => x / y,
    }
}

pub(crate) fn binary_grad<T: Scalar>(
    kind: BinaryKind,
    a: &[T],
    b: &[T],
    g: &[T],
    need_a: bool,
    need_b: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (la, lb) = (a.len(), b.len());
    let mut ga = need_a.then(|| vec![T::zero(); la]);
    let mut gb = need_b.then(|| vec![T::zero(); lb]);
    for (i, &gi) in g.iter().enumerate() {
        let (x, y) = (a[i % la], b[i % lb]);
        let (dx, dy) = match kind {
            BinaryKind::Add => (gi, gi),
            BinaryKind::Sub => (gi, -gi),
            BinaryKind::Mul => (gi * y, gi * x),
            BinaryKind::Div => (gi / y, -gi * x / (y * y)),
        };
        if let Some(ga) = ga.as_mut() {
            ga[i % la] += dx;
        }
        if let Some(gb) = gb.as_mut() {
            gb[i % lb] += dy;
        }
    }
    (ga, gb)
}

#[inline]
fn unary<T: Scalar>(kind: UnaryKind, x: T) -> T {
    match kind {
        UnaryKind::Silu => scalar::silu(x),
        UnaryKind::Softplus => scalar::softplus(x),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Sigmoid => scalar::sigmoid(x),
        UnaryKind::Ln => x.ln(),
        UnaryKind::Neg => -x,
        UnaryKind::Square => x * x,
    }
}

pub(crate) fn unary_grad<T: Scalar>(kind: UnaryKind, x: &[T], out: &[T], g: &[T]) -> Vec<T> {
    let one = T::one();
    x.iter()
        .zip(out)
        .zip(g)
        .map(|((&x, &y), &g)| {
            let d = match kind {
                UnaryKind::Silu => {
                    let s = scalar::sigmoid(x);
                    s * (one + x * (one - s))
                }
                UnaryKind::Softplus => scalar::sigmoid(x),
                UnaryKind::Exp => y,
                UnaryKind::Sigmoid => y * (one - y),
                UnaryKind::Ln => one / x,
                UnaryKind::Neg => -one,
                UnaryKind::Square => x + x,
            };
            g * d
        })
        .collect()
}

impl<T: Scalar> Tape<T> {
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let Some(shape) = broadcast_shape(sa, sb) else {
            return shape_err("elementwise", sa, sb);
        };
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| apply(kind, da[i % da.len()], db[i % db.len()]))
            .collect();
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Binary { kind, a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let out = self.value(x).map(|v| unary(kind, v));
        self.push(out, Op::Unary { kind, x })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Silu, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Softplus, x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Ln, x)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Neg, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Square, x)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale { x, s })
    }

    /// `x + s` for a constant scalar `s`.
    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v + s);
        self.push(out, Op::Identity { x })
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::SumAll { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum(x);
        self.scale(s, T::one() / T::of_f64(n as f64))
    }

    /// Reduce over every axis except the trailing `keep` axes.
    pub fn sum_leading(&mut self, x: Var, keep: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if keep == 0 || keep > shape.len() {
            return Err(crate::Error::Dimension(alloc::format!(
                "sum_leading keep={keep} on shape {shape:?}"
            )));
        }
        let out_shape = &shape[shape.len() - keep..];
        let inner: usize = out_shape.iter().product();
        let mut acc = vec![T::zero(); inner];
        for (i, &v) in self.value(x).data().iter().enumerate() {
            acc[i % inner] += v;
        }
        let out = Tensor::new(out_shape, acc)?;
        Ok(self.push(out, Op::SumLeading { x }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Identity { x }))
    }
}
