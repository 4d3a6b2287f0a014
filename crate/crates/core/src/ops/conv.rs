//! NHWC cross-correlation with groups, dilation, stride and explicit padding.

use alloc::vec;
use alloc::vec::Vec;

use crate::conv::Conv2dSpec;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub dh: usize,
    pub dw: usize,
    pub pt: usize,
    pub pl: usize,
    pub oh: usize,
    pub ow: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn new(spec: &Conv2dSpec, input: &[usize]) -> Result<Self> {
        spec.validate()?;
        if input.len() != 4 || input[3] != spec.in_channels {
            return shape_err("conv2d input", input, &[0, 0, 0, spec.in_channels]);
        }
        let (kh, kw) = spec.kernel;
        let (dh, dw) = spec.dilation;
        let (sh, sw) = spec.stride;
        let p = spec.padding;
        let span_h = dh * (kh - 1) + 1;
        let span_w = dw * (kw - 1) + 1;
        let ph = input[1] + p.top + p.bottom;
        let pw = input[2] + p.left + p.right;
        if ph < span_h || pw < span_w {
            return Err(Error::Dimension(alloc::format!(
                "conv2d output would be empty: padded input {ph}x{pw}, kernel span {span_h}x{span_w}"
            )));
        }
        Ok(Self {
            b: input[0],
            h: input[1],
            w: input[2],
            cin: spec.in_channels,
            cout: spec.out_channels,
            kh,
            kw,
            sh,
            sw,
            dh,
            dw,
            pt: p.top,
            pl: p.left,
            oh: (ph - span_h) / sh + 1,
            ow: (pw - span_w) / sw + 1,
            groups: spec.groups,
        })
    }

    fn cig(&self) -> usize {
        self.cin / self.groups
    }

    fn cog(&self) -> usize {
        self.cout / self.groups
    }

    fn is_depthwise(&self) -> bool {
        self.cig() == 1 && self.cog() == 1
    }

    #[inline]
    fn src(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.sh + ky * self.dh).checked_sub(self.pt)?;
        let ix = (ox * self.sw + kx * self.dw).checked_sub(self.pl)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }
}

/// `[cout, cig, kh, kw]` → `[kh, kw, groups, cig, cog]`
fn to_tap_major<T: Scalar>(g: &ConvGeom, w: &[T]) -> Vec<T> {
    let (cig, cog) = (g.cig(), g.cog());
    let mut out = vec![T::zero(); w.len()];
    for co in 0..g.cout {
        let (grp, col) = (co / cog, co % cog);
        for ci in 0..cig {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let src = ((co * cig + ci) * g.kh + ky) * g.kw + kx;
                    let dst = ((((ky * g.kw + kx) * g.groups + grp) * cig + ci) * cog) + col;
                    out[dst] = w[src];
                }
            }
        }
    }
    out
}

fn from_tap_major<T: Scalar>(g: &ConvGeom, wt: &[T]) -> Vec<T> {
    let (cig, cog) = (g.cig(), g.cog());
    let mut out = vec![T::zero(); wt.len()];
    for co in 0..g.cout {
        let (grp, col) = (co / cog, co % cog);
        for ci in 0..cig {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let dst = ((co * cig + ci) * g.kh + ky) * g.kw + kx;
                    let src = ((((ky * g.kw + kx) * g.groups + grp) * cig + ci) * cog) + col;
                    out[dst] = wt[src];
                }
            }
        }
    }
    out
}

pub fn conv2d_kernel<T: Scalar>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let wt = to_tap_major(g, w);
    let (cig, cog) = (g.cig(), g.cog());
    let mut out = vec![T::zero(); g.b * g.oh * g.ow * g.cout];
    for b in 0..g.b {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o0 = ((b * g.oh + oy) * g.ow + ox) * g.cout;
                let orow = &mut out[o0..o0 + g.cout];
                if let Some(bias) = bias {
                    orow.copy_from_slice(bias);
                }
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let Some((iy, ix)) = g.src(oy, ox, ky, kx) else {
                            continue;
                        };
                        let i0 = ((b * g.h + iy) * g.w + ix) * g.cin;
                        let xin = &x[i0..i0 + g.cin];
                        let tap = (ky * g.kw + kx) * g.cin * cog;
                        if g.is_depthwise() {
                            let wrow = &wt[tap..tap + g.cin];
                            for ((o, &xv), &wv) in orow.iter_mut().zip(xin).zip(wrow) {
                                *o += xv * wv;
                            }
                            continue;
                        }
                        for grp in 0..g.groups {
                            let oseg = &mut orow[grp * cog..(grp + 1) * cog];
                            for ci in 0..cig {
                                let xv = xin[grp * cig + ci];
                                let w0 = tap + (grp * cig + ci) * cog;
                                for (o, &wv) in oseg.iter_mut().zip(&wt[w0..w0 + cog]) {
                                    *o += xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::type_complexity)]
pub(crate) fn conv2d_grad<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gout: &[T],
    need_x: bool,
    need_w: bool,
    has_bias: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let wt = to_tap_major(g, w);
    let (cig, cog) = (g.cig(), g.cog());
    let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut gwt = need_w.then(|| vec![T::zero(); w.len()]);
    let mut gb = has_bias.then(|| vec![T::zero(); g.cout]);
    for b in 0..g.b {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o0 = ((b * g.oh + oy) * g.ow + ox) * g.cout;
                let grow = &gout[o0..o0 + g.cout];
                if let Some(gb) = gb.as_mut() {
                    for (a, &v) in gb.iter_mut().zip(grow) {
                        *a += v;
                    }
                }
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let Some((iy, ix)) = g.src(oy, ox, ky, kx) else {
                            continue;
                        };
                        let i0 = ((b * g.h + iy) * g.w + ix) * g.cin;
                        let tap = (ky * g.kw + kx) * g.cin * cog;
                        if g.is_depthwise() {
                            if let Some(gx) = gx.as_mut() {
                                let wrow = &wt[tap..tap + g.cin];
                                for ((a, &gv), &wv) in gx[i0..i0 + g.cin].iter_mut().zip(grow).zip(wrow) {
                                    *a += gv * wv;
                                }
                            }
                            if let Some(gw) = gwt.as_mut() {
                                for ((a, &gv), &xv) in gw[tap..tap + g.cin].iter_mut().zip(grow).zip(&x[i0..i0 + g.cin])
                                {
                                    *a += gv * xv;
                                }
                            }
                            continue;
                        }
                        for grp in 0..g.groups {
                            let gseg = &grow[grp * cog..(grp + 1) * cog];
                            for ci in 0..cig {
                                let c = grp * cig + ci;
                                let w0 = tap + c * cog;
                                if let Some(gx) = gx.as_mut() {
                                    let mut acc = T::zero();
                                    for (&gv, &wv) in gseg.iter().zip(&wt[w0..w0 + cog]) {
                                        acc += gv * wv;
                                    }
                                    gx[i0 + c] += acc;
                                }
                                if let Some(gw) = gwt.as_mut() {
                                    let xv = x[i0 + c];
                                    for (a, &gv) in gw[w0..w0 + cog].iter_mut().zip(gseg) {
                                        *a += xv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gwt.map(|gw| from_tap_major(g, &gw)), gb)
}

impl<T: Scalar> Tape<T> {
    /// 2-D cross-correlation of an NHWC input with weights `[cout, cin/groups, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: &Conv2dSpec) -> Result<Var> {
        let geom = ConvGeom::new(spec, self.shape(x))?;
        let ws = spec.weight_shape();
        if self.shape(w) != ws.as_slice() {
            return shape_err("conv2d weight", self.shape(w), &ws);
        }
        if let Some(b) = bias {
            if self.shape(b) != [spec.out_channels] {
                return shape_err("conv2d bias", self.shape(b), &[spec.out_channels]);
            }
        }
        let out = conv2d_kernel(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
        );
        let out = Tensor::new(&[geom.b, geom.oh, geom.ow, geom.cout], out)?;
        Ok(self.push(out, Op::Conv2d { x, w, bias, geom }))
    }
}
