use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// `out[m,n] = a[m,k] · b[k,n]`, all row-major.
pub fn matmul_kernel<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `g · bᵀ`
pub fn matmul_grad_a<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut ga = vec![T::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc += gv * bv;
            }
            ga[i * k + p] = acc;
        }
    }
    ga
}

/// `aᵀ · g`
pub fn matmul_grad_b<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let row = &mut gb[p * n..(p + 1) * n];
            for (o, &gv) in row.iter_mut().zip(grow) {
                *o += aip * gv;
            }
        }
    }
    gb
}

impl<T: Scalar> Tape<T> {
    /// Matrix product over the last axis of `a` and the first axis of a
    /// rank-2 `b`. Leading axes of `a` are treated as rows, so `[.., k]·[k, n]`
    /// yields `[.., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return shape_err("matmul", &sa, &sb);
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.value(a).len() / k;
        let out = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, Op::Matmul { a, b, m, k, n }))
    }

    /// `x · w (+ bias)` with `w: [in, out]`, `bias: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }
}
