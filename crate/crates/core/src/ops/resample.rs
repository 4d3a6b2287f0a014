//! Bilinear spatial resizing of NHWC maps (half-pixel centres, edge clamped).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResizeGeom {
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Two-tap interpolation weights for each output coordinate along one axis.
fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn resize_apply<T: Scalar>(geom: &ResizeGeom, src: &[T], dst: &mut [T], adjoint: bool) {
    let ty = taps(geom.h, geom.oh);
    let tx = taps(geom.w, geom.ow);
    let c = geom.c;
    for b in 0..geom.b {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let o = ((b * geom.oh + oy) * geom.ow + ox) * c;
                let corners = [
                    (y0, x0, (1.0 - fy) * (1.0 - fx)),
                    (y0, x1, (1.0 - fy) * fx),
                    (y1, x0, fy * (1.0 - fx)),
                    (y1, x1, fy * fx),
                ];
                for (yy, xx, wgt) in corners {
                    let wgt = T::of_f64(wgt);
                    let i = ((b * geom.h + yy) * geom.w + xx) * c;
                    if adjoint {
                        for ch in 0..c {
                            dst[i + ch] += wgt * src[o + ch];
                        }
                    } else {
                        for ch in 0..c {
                            dst[o + ch] += wgt * src[i + ch];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn resize_grad<T: Scalar>(geom: &ResizeGeom, g: &[T]) -> Vec<T> {
    let mut gx = vec![T::zero(); geom.b * geom.h * geom.w * geom.c];
    resize_apply(geom, g, &mut gx, true);
    gx
}

impl<T: Scalar> Tape<T> {
    /// Bilinear upsampling of `[B, H, W, C]` by an integer factor.
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || factor == 0 {
            return Err(Error::Dimension(alloc::format!(
                "upsample_bilinear on {s:?} by {factor}"
            )));
        }
        let geom = ResizeGeom {
            b: s[0],
            h: s[1],
            w: s[2],
            c: s[3],
            oh: s[1] * factor,
            ow: s[2] * factor,
        };
        let mut out = vec![T::zero(); geom.b * geom.oh * geom.ow * geom.c];
        resize_apply(&geom, self.value(x).data(), &mut out, false);
        let out = Tensor::new(&[geom.b, geom.oh, geom.ow, geom.c], out)?;
        Ok(self.push(out, Op::Resize { x, geom }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rng::uniform_tensor;

    #[test]
    fn constant_maps_stay_constant() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::full(&[1, 3, 2, 2], 1.5));
        let y = t.upsample_bilinear(x, 4).unwrap();
        assert_eq!(t.shape(y), &[1, 12, 8, 2]);
        assert!(t.value(y).data().iter().all(|&v| (v - 1.5).abs() < 1e-15));
    }

    #[test]
    fn adjoint_gradient() {
        let x = uniform_tensor::<f64>(&[1, 3, 2, 2], -1.0, 1.0, 1);
        let w = uniform_tensor::<f64>(&[1, 6, 4, 2], -1.0, 1.0, 2);
        let r = grad_check(
            |t, v| {
                let y = t.upsample_bilinear(v[0], 2)?;
                let w = t.constant(w.clone());
                let y = t.mul(y, w)?;
                Ok(t.sum(y))
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
