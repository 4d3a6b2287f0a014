//! Sequence-scan kernels: the fused selective scan, the fixed-parameter
//! recurrence and the four-direction merge.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::scan2d::{direction_positions, NUM_DIRECTIONS};
use crate::ssm::DiscreteSsm;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Batch, length, channels and state size of a selective scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub b: usize,
    pub l: usize,
    pub e: usize,
    pub n: usize,
}

/// Forward selective scan. Returns `(y, states)` with `states[b,t,e,n] = h_t`.
///
/// Per channel `e` and state `n`:
/// `h_t = exp(δ_t·a) h_{t-1} + δ_t B_t x_t`, `y_t = Σ_n C_t h_t + D x_t`.
#[allow(clippy::too_many_arguments)]
pub fn selective_scan_kernel<T: Scalar>(
    dims: &ScanDims,
    u: &[T],
    delta: &[T],
    a: &[T],
    bm: &[T],
    cm: &[T],
    d: &[T],
) -> (Vec<T>, Vec<T>) {
    let ScanDims { b, l, e, n } = *dims;
    let mut y = vec![T::zero(); b * l * e];
    let mut states = vec![T::zero(); b * l * e * n];
    let mut h = vec![T::zero(); e * n];
    for bi in 0..b {
        h.iter_mut().for_each(|v| *v = T::zero());
        for t in 0..l {
            let row = (bi * l + t) * e;
            let bt = &bm[(bi * l + t) * n..(bi * l + t + 1) * n];
            let ct = &cm[(bi * l + t) * n..(bi * l + t + 1) * n];
            for ch in 0..e {
                let x = u[row + ch];
                let dt = delta[row + ch];
                let dx = dt * x;
                let hs = &mut h[ch * n..(ch + 1) * n];
                let ar = &a[ch * n..(ch + 1) * n];
                let mut acc = d[ch] * x;
                for k in 0..n {
                    let hv = (dt * ar[k]).exp() * hs[k] + dx * bt[k];
                    hs[k] = hv;
                    acc += ct[k] * hv;
                }
                y[row + ch] = acc;
            }
            states[(bi * l + t) * e * n..(bi * l + t + 1) * e * n].copy_from_slice(&h);
        }
    }
    (y, states)
}

/// Gradients for `[u, delta, a, bm, cm, d]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn selective_scan_grad<T: Scalar>(
    dims: &ScanDims,
    u: &[T],
    delta: &[T],
    a: &[T],
    bm: &[T],
    cm: &[T],
    d: &[T],
    states: &[T],
    g: &[T],
) -> [Vec<T>; 6] {
    let ScanDims { b, l, e, n } = *dims;
    let mut gu = vec![T::zero(); u.len()];
    let mut gdelta = vec![T::zero(); delta.len()];
    let mut ga = vec![T::zero(); a.len()];
    let mut gbm = vec![T::zero(); bm.len()];
    let mut gcm = vec![T::zero(); cm.len()];
    let mut gd = vec![T::zero(); d.len()];
    let mut carry = vec![T::zero(); e * n];
    for bi in 0..b {
        carry.iter_mut().for_each(|v| *v = T::zero());
        for t in (0..l).rev() {
            let row = (bi * l + t) * e;
            let sn = (bi * l + t) * n;
            let h_now = &states[row * n..(row + e) * n];
            for ch in 0..e {
                let gy = g[row + ch];
                let x = u[row + ch];
                let dt = delta[row + ch];
                gd[ch] += gy * x;
                let mut gx = gy * d[ch];
                let mut gdt = T::zero();
                for k in 0..n {
                    let idx = ch * n + k;
                    let hprev = if t > 0 { states[(row - e) * n + idx] } else { T::zero() };
                    let av = a[idx];
                    let abar = (dt * av).exp();
                    let bk = bm[sn + k];
                    let dh = cm[sn + k] * gy + carry[idx];
                    gcm[sn + k] += gy * h_now[idx];
                    let g_abar = dh * hprev * abar;
                    gdt += g_abar * av + dh * bk * x;
                    ga[idx] += g_abar * dt;
                    gbm[sn + k] += dh * dt * x;
                    gx += dh * dt * bk;
                    carry[idx] = dh * abar;
                }
                gu[row + ch] = gx;
                gdelta[row + ch] = gdt;
            }
        }
    }
    [gu, gdelta, ga, gbm, gcm, gd]
}

/// Adjoint of the fixed-parameter recurrence with respect to its input.
pub(crate) fn fixed_scan_grad<T: Scalar>(ssm: &DiscreteSsm<T>, g: &[T]) -> Vec<T> {
    let n = ssm.state_size();
    // lam_t = C g_t + Ā lam_{t+1}
    let mut lam = vec![T::zero(); n];
    let mut gx = vec![T::zero(); g.len()];
    for t in (0..g.len()).rev() {
        let mut acc = ssm.d * g[t];
        for k in 0..n {
            lam[k] = ssm.a_bar[k] * lam[k] + ssm.c[k] * g[t];
            acc += lam[k] * ssm.b_bar[k];
        }
        gx[t] = acc;
    }
    gx
}

pub(crate) fn merge_grad<T: Scalar>(g: &[T], b: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let l = h * w;
    let mut gx = vec![T::zero(); b * NUM_DIRECTIONS * l * c];
    for k in 0..NUM_DIRECTIONS {
        let pos = direction_positions(k, h, w);
        for bi in 0..b {
            for (t, &p) in pos.iter().enumerate() {
                let dst = ((bi * NUM_DIRECTIONS + k) * l + t) * c;
                let src = (bi * l + p) * c;
                gx[dst..dst + c].copy_from_slice(&g[src..src + c]);
            }
        }
    }
    gx
}

impl<T: Scalar> Tape<T> {
    /// Fused selective scan over `u: [B, L, E]`.
    ///
    /// `delta: [B, L, E]` (positive), `a: [E, N]`, `bm, cm: [B, L, N]`, `d: [E]`.
    pub fn selective_scan_raw(&mut self, u: Var, delta: Var, a: Var, bm: Var, cm: Var, d: Var) -> Result<Var> {
        let su = self.shape(u).to_vec();
        if su.len() != 3 {
            return Err(Error::Dimension(alloc::format!(
                "selective scan input must be [B, L, E], got {su:?}"
            )));
        }
        let (b, l, e) = (su[0], su[1], su[2]);
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || sa[0] != e {
            return shape_err("selective_scan A", &sa, &[e, 0]);
        }
        let n = sa[1];
        if self.shape(delta) != su.as_slice() {
            return shape_err("selective_scan delta", self.shape(delta), &su);
        }
        for v in [bm, cm] {
            if self.shape(v) != [b, l, n] {
                return shape_err("selective_scan B/C", self.shape(v), &[b, l, n]);
            }
        }
        if self.shape(d) != [e] {
            return shape_err("selective_scan D", self.shape(d), &[e]);
        }
        let dims = ScanDims { b, l, e, n };
        let (y, states) = selective_scan_kernel(
            &dims,
            self.value(u).data(),
            self.value(delta).data(),
            self.value(a).data(),
            self.value(bm).data(),
            self.value(cm).data(),
            self.value(d).data(),
        );
        let out = Tensor::new(&su, y)?;
        Ok(self.push(
            out,
            Op::SelectiveScan {
                u,
                delta,
                a,
                bm,
                cm,
                d,
                dims,
                states,
            },
        ))
    }

    /// Run a fixed discrete SSM over a length-`L` sequence.
    pub fn ssm_scan(&mut self, x: Var, ssm: &DiscreteSsm<T>) -> Result<Var> {
        let y = crate::ssm::scan_recurrent(ssm, self.value(x).data())?;
        let out = Tensor::new(self.shape(x), y)?;
        Ok(self.push(out, Op::FixedScan { x, ssm: ssm.clone() }))
    }

    /// Sum the four directional sequences `[B, 4, H·W, C]` back onto an `H × W` map.
    pub fn scan_merge_raw(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[1] != NUM_DIRECTIONS || s[2] != h * w {
            return shape_err("scan_merge", &s, &[0, NUM_DIRECTIONS, h * w, 0]);
        }
        let (b, l, c) = (s[0], s[2], s[3]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); b * l * c];
        let pos: Vec<Vec<usize>> = (0..NUM_DIRECTIONS).map(|k| direction_positions(k, h, w)).collect();
        let mut inv = vec![[0usize; NUM_DIRECTIONS]; l];
        for (k, p) in pos.iter().enumerate() {
            for (t, &pp) in p.iter().enumerate() {
                inv[pp][k] = t;
            }
        }
        for bi in 0..b {
            for (p, ts) in inv.iter().enumerate() {
                let o = (bi * l + p) * c;
                let at = |k: usize| ((bi * NUM_DIRECTIONS + k) * l + ts[k]) * c;
                let (s0, s1, s2, s3) = (at(0), at(1), at(2), at(3));
                for ch in 0..c {
                    // pairwise so that four equal terms sum exactly
                    out[o + ch] = (src[s0 + ch] + src[s1 + ch]) + (src[s2 + ch] + src[s3 + ch]);
                }
            }
        }
        let out = Tensor::new(&[b, h, w, c], out)?;
        Ok(self.push(out, Op::ScanMerge { x, b, h, w, c }))
    }
}
