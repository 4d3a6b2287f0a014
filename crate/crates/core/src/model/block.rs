//! HC-SSM block: channel split, SSM branch, HC-Conv branch, shuffle, residual.

use alloc::format;
use alloc::vec::Vec;

use super::config::{ConvVariant, ModelConfig};
use super::params::{Init, ParamId, ParamLayout};
use crate::conv::{depthwise_separable, Conv2dSpec};
use crate::error::Result;
use crate::ops::norm::LAYER_NORM_EPS;
use crate::scalar::Scalar;
use crate::scan2d::{channel_shuffle, channel_split, scan_direction, scan_merge, NUM_DIRECTIONS};
use crate::ssm::{selective_scan, SelectiveProj};
use crate::tape::{Tape, Var};

const DT_MIN: f64 = 1e-3;
const DT_MAX: f64 = 1e-1;

#[derive(Clone, Debug)]
pub struct DirectionIds {
    pub dt_down: ParamId,
    pub dt_up: ParamId,
    pub dt_bias: ParamId,
    pub b_w: ParamId,
    pub b_b: ParamId,
    pub c_w: ParamId,
    pub c_b: ParamId,
}

/// One layer of the HC-Conv branch.
#[derive(Clone, Debug)]
pub enum ConvLayerIds {
    Plain {
        spec: Conv2dSpec,
        w: ParamId,
        b: ParamId,
    },
    Separable {
        dw_spec: Conv2dSpec,
        dw_w: ParamId,
        dw_b: ParamId,
        pw_spec: Conv2dSpec,
        pw_w: ParamId,
        pw_b: ParamId,
    },
}

/// Parameter handles of one HC-SSM block operating on `channels` channels.
#[derive(Clone, Debug)]
pub struct BlockIds {
    pub channels: usize,
    pub ln_g: ParamId,
    pub ln_b: ParamId,
    pub in_w: ParamId,
    pub in_b: ParamId,
    pub local_dw_spec: Conv2dSpec,
    pub local_dw_w: ParamId,
    pub local_dw_b: ParamId,
    pub local_pw_spec: Conv2dSpec,
    pub local_pw_w: ParamId,
    pub local_pw_b: ParamId,
    pub dirs: Vec<DirectionIds>,
    pub a_log: ParamId,
    pub d: ParamId,
    pub out_ln_g: ParamId,
    pub out_ln_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub conv: Vec<ConvLayerIds>,
}

fn bound(fan_in: usize) -> Init {
    Init::Uniform((1.0 / fan_in as f64).sqrt())
}

fn add_conv(layout: &mut ParamLayout, name: &str, spec: &Conv2dSpec) -> (ParamId, ParamId) {
    let w = layout.add(
        format!("{name}.w"),
        &spec.weight_shape(),
        Init::Uniform(spec.init_bound()),
    );
    let b = layout.add(
        format!("{name}.b"),
        &[spec.out_channels],
        Init::Uniform(spec.init_bound()),
    );
    (w, b)
}

impl BlockIds {
    pub fn register(layout: &mut ParamLayout, prefix: &str, channels: usize, cfg: &ModelConfig) -> Self {
        let c = channels / 2;
        let e = cfg.expand * c;
        let n = cfg.state_size;
        let r = e.div_ceil(16);
        let p = |s: &str| format!("{prefix}.ssm.{s}");

        let ln_g = layout.add(p("ln.g"), &[c], Init::Const(1.0));
        let ln_b = layout.add(p("ln.b"), &[c], Init::Const(0.0));
        // Projects to the scan input and a gate, `e` channels each.
        let in_w = layout.add(p("in.w"), &[c, 2 * e], bound(c));
        let in_b = layout.add(p("in.b"), &[2 * e], bound(c));
        let local_dw_spec = Conv2dSpec::depthwise(e, 3, 1);
        let (local_dw_w, local_dw_b) = add_conv(layout, &p("local.dw"), &local_dw_spec);
        let local_pw_spec = Conv2dSpec::pointwise(e, e);
        let (local_pw_w, local_pw_b) = add_conv(layout, &p("local.pw"), &local_pw_spec);
        let dirs = (0..NUM_DIRECTIONS)
            .map(|k| {
                let q = |s: &str| format!("{prefix}.ssm.dir{k}.{s}");
                DirectionIds {
                    dt_down: layout.add(q("dt_down"), &[e, r], bound(e)),
                    dt_up: layout.add(q("dt_up"), &[r, e], bound(r)),
                    dt_bias: layout.add(q("dt_bias"), &[e], Init::StepBias { lo: DT_MIN, hi: DT_MAX }),
                    b_w: layout.add(q("b_w"), &[e, n], bound(e)),
                    b_b: layout.add(q("b_b"), &[n], bound(e)),
                    c_w: layout.add(q("c_w"), &[e, n], bound(e)),
                    c_b: layout.add(q("c_b"), &[n], bound(e)),
                }
            })
            .collect();
        let a_log = layout.add(p("a_log"), &[e, n], Init::StateLog);
        let d = layout.add(p("d"), &[e], Init::Const(1.0));
        let out_ln_g = layout.add(p("out_ln.g"), &[e], Init::Const(1.0));
        let out_ln_b = layout.add(p("out_ln.b"), &[e], Init::Const(0.0));
        let out_w = layout.add(p("out.w"), &[e, c], bound(e));
        let out_b = layout.add(p("out.b"), &[c], bound(e));

        let conv = cfg
            .dilation_schedule
            .rates()
            .iter()
            .enumerate()
            .map(|(i, &rate)| {
                let dil = if cfg.conv_variant.dilated() { rate } else { 1 };
                let name = format!("{prefix}.conv.l{i}");
                match cfg.conv_variant {
                    ConvVariant::Full | ConvVariant::DilatedOnly => {
                        let spec = Conv2dSpec::same(c, c, 3, dil, 1);
                        let (w, b) = add_conv(layout, &name, &spec);
                        ConvLayerIds::Plain { spec, w, b }
                    }
                    ConvVariant::DwOnly | ConvVariant::Both => {
                        let dw_spec = Conv2dSpec::depthwise(c, 3, dil);
                        let (dw_w, dw_b) = add_conv(layout, &format!("{name}.dw"), &dw_spec);
                        let pw_spec = Conv2dSpec::pointwise(c, c);
                        let (pw_w, pw_b) = add_conv(layout, &format!("{name}.pw"), &pw_spec);
                        ConvLayerIds::Separable {
                            dw_spec,
                            dw_w,
                            dw_b,
                            pw_spec,
                            pw_w,
                            pw_b,
                        }
                    }
                }
            })
            .collect();

        Self {
            channels,
            ln_g,
            ln_b,
            in_w,
            in_b,
            local_dw_spec,
            local_dw_w,
            local_dw_b,
            local_pw_spec,
            local_pw_w,
            local_pw_b,
            dirs,
            a_log,
            d,
            out_ln_g,
            out_ln_b,
            out_w,
            out_b,
            conv,
        }
    }

    /// `x: [B, H, W, channels]` to the same shape.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let at = |id: ParamId| p[id.0];
        let eps = T::of_f64(LAYER_NORM_EPS);
        let (h, w) = (tape.shape(x)[1], tape.shape(x)[2]);
        let (x1, x2) = channel_split(tape, x)?;

        let y = tape.layer_norm(x1, at(self.ln_g), at(self.ln_b), eps)?;
        let xz = tape.linear(y, at(self.in_w), Some(at(self.in_b)))?;
        let e = tape.shape(xz)[3] / 2;
        let y = tape.slice_last(xz, 0, e)?;
        let gate = tape.slice_last(xz, e, e)?;
        let y = depthwise_separable(
            tape,
            y,
            &self.local_dw_spec,
            at(self.local_dw_w),
            Some(at(self.local_dw_b)),
            &self.local_pw_spec,
            at(self.local_pw_w),
            Some(at(self.local_pw_b)),
        )?;
        let y = tape.silu(y);
        let a_exp = tape.exp(at(self.a_log));
        let a = tape.neg(a_exp);
        let mut outs = Vec::with_capacity(NUM_DIRECTIONS);
        for (k, ids) in self.dirs.iter().enumerate() {
            let seq = scan_direction(tape, y, k)?;
            let proj = SelectiveProj {
                dt_down: at(ids.dt_down),
                dt_up: at(ids.dt_up),
                dt_bias: at(ids.dt_bias),
                b_w: at(ids.b_w),
                b_b: at(ids.b_b),
                c_w: at(ids.c_w),
                c_b: at(ids.c_b),
            };
            outs.push(selective_scan(tape, seq, &proj, a, at(self.d))?);
        }
        let stacked = tape.stack(&outs, 1)?;
        let merged = scan_merge(tape, stacked, h, w)?;
        let merged = tape.layer_norm(merged, at(self.out_ln_g), at(self.out_ln_b), eps)?;
        let gate = tape.silu(gate);
        let gated = tape.mul(merged, gate)?;
        let y1 = tape.linear(gated, at(self.out_w), Some(at(self.out_b)))?;

        let mut z = x2;
        let last = self.conv.len().saturating_sub(1);
        for (i, layer) in self.conv.iter().enumerate() {
            z = match layer {
                ConvLayerIds::Plain { spec, w, b } => tape.conv2d(z, at(*w), Some(at(*b)), spec)?,
                ConvLayerIds::Separable {
                    dw_spec,
                    dw_w,
                    dw_b,
                    pw_spec,
                    pw_w,
                    pw_b,
                } => depthwise_separable(
                    tape,
                    z,
                    dw_spec,
                    at(*dw_w),
                    Some(at(*dw_b)),
                    pw_spec,
                    at(*pw_w),
                    Some(at(*pw_b)),
                )?,
            };
            if i < last {
                z = tape.silu(z);
            }
        }

        let cat = tape.concat_last(y1, z)?;
        let mixed = channel_shuffle(tape, cat, 2)?;
        tape.add(mixed, x)
    }
}
