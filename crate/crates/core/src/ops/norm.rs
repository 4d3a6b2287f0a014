use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Returns `(y, xhat, rstd)` for normalization over the trailing axis.
pub fn layer_norm_kernel<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], eps: T) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let rows = x.len() / c;
    let inv_c = T::one() / T::of_f64(c as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * c..(r + 1) * c];
        let mean = row.iter().copied().sum::<T>() * inv_c;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..c {
            let h = (row[j] - mean) * rs;
            xhat[r * c + j] = h;
            y[r * c + j] = h * gamma[j] + beta[j];
        }
    }
    (y, xhat, rstd)
}

pub(crate) fn layer_norm_grad<T: Scalar>(g: &[T], xhat: &[T], rstd: &[T], gamma: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let inv_c = T::one() / T::of_f64(c as f64);
    let mut gx = vec![T::zero(); g.len()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for (r, &rs) in rstd.iter().enumerate() {
        let gr = &g[r * c..(r + 1) * c];
        let hr = &xhat[r * c..(r + 1) * c];
        let mut mean_gh = T::zero();
        let mut mean_ghh = T::zero();
        for j in 0..c {
            gg[j] += gr[j] * hr[j];
            gb[j] += gr[j];
            let gh = gr[j] * gamma[j];
            mean_gh += gh;
            mean_ghh += gh * hr[j];
        }
        mean_gh *= inv_c;
        mean_ghh *= inv_c;
        for j in 0..c {
            gx[r * c + j] = rs * (gr[j] * gamma[j] - mean_gh - hr[j] * mean_ghh);
        }
    }
    (gx, gg, gb)
}

pub(crate) fn softmax_grad<T: Scalar>(y: &[T], g: &[T], k: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); y.len()];
    for r in 0..y.len() / k {
        let yr = &y[r * k..(r + 1) * k];
        let gr = &g[r * k..(r + 1) * k];
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for j in 0..k {
            gx[r * k + j] = yr[j] * (gr[j] - dot);
        }
    }
    gx
}

impl<T: Scalar> Tape<T> {
    /// Layer normalization over the trailing axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let c = self.value(x).last_dim();
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return shape_err("layer_norm", self.shape(x), self.shape(gamma));
        }
        if !(eps > T::zero()) {
            return Err(Error::Domain(alloc::format!(
                "layer_norm eps must be positive, got {eps}"
            )));
        }
        let (y, xhat, rstd) = layer_norm_kernel(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let out = Tensor::new(self.shape(x), y)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let k = v.last_dim();
        let mut out = v.clone();
        for row in out.data_mut().chunks_mut(k) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                s += *e;
            }
            for e in row.iter_mut() {
                *e /= s;
            }
        }
        self.push(out, Op::Softmax { x })
    }
}
