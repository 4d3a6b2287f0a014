//! U-shaped encoder/decoder assembled from HC-SSM blocks.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::block::BlockIds;
use super::config::ModelConfig;
use super::params::{Init, ParamCount, ParamId, ParamLayout};
use crate::conv::Conv2dSpec;
use crate::error::{Error, Result};
use crate::ops::norm::LAYER_NORM_EPS;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
struct EmbedIds {
    spec: Conv2dSpec,
    w: ParamId,
    b: ParamId,
    ln_g: ParamId,
    ln_b: ParamId,
}

#[derive(Clone, Debug)]
struct MergeIds {
    ln_g: ParamId,
    ln_b: ParamId,
    w: ParamId,
}

#[derive(Clone, Debug)]
struct UpIds {
    up_w: ParamId,
    fuse_w: ParamId,
    fuse_b: ParamId,
    block: BlockIds,
}

#[derive(Clone, Debug)]
struct HeadIds {
    spec: Conv2dSpec,
    w: ParamId,
    b: ParamId,
}

/// Network definition: configuration plus the parameter layout. Parameter
/// values live outside, in the order given by [`HcMamba::layout`].
#[derive(Clone, Debug)]
pub struct HcMamba {
    config: ModelConfig,
    layout: ParamLayout,
    embed: EmbedIds,
    encoder: Vec<Vec<BlockIds>>,
    merges: Vec<MergeIds>,
    decoder: Vec<UpIds>,
    head: HeadIds,
}

fn bound(fan_in: usize) -> Init {
    Init::Uniform((1.0 / fan_in as f64).sqrt())
}

/// Concatenate each 2×2 neighbourhood: `[B, H, W, C]` to `[B, H/2, W/2, 4C]`
/// in the order (0,0), (1,0), (0,1), (1,1) as (row, col) offsets.
pub fn patch_merge_gather<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let [b, h, w, c] = s[..] else {
        return Err(Error::Dimension(format!("patch merge expects [B, H, W, C], got {s:?}")));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!("patch merge needs even extents, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut index = Vec::with_capacity(b * h * w * c);
    for bi in 0..b {
        for y in 0..oh {
            for xx in 0..ow {
                for (dy, dx) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let base = ((bi * h + 2 * y + dy) * w + 2 * xx + dx) * c;
                    index.extend((base..base + c).map(|i| i as u32));
                }
            }
        }
    }
    tape.gather(x, index, &[b, oh, ow, 4 * c])
}

impl HcMamba {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = ParamLayout::default();
        let ch = config.stage_channels();
        let stages = ch.len();

        let spec = Conv2dSpec::patchify(config.in_channels, ch[0], ModelConfig::PATCH);
        let embed = EmbedIds {
            w: layout.add("embed.w".into(), &spec.weight_shape(), Init::Uniform(spec.init_bound())),
            b: layout.add("embed.b".into(), &[ch[0]], Init::Uniform(spec.init_bound())),
            ln_g: layout.add("embed.ln.g".into(), &[ch[0]], Init::Const(1.0)),
            ln_b: layout.add("embed.ln.b".into(), &[ch[0]], Init::Const(0.0)),
            spec,
        };

        let mut encoder = Vec::with_capacity(stages);
        let mut merges = Vec::with_capacity(stages - 1);
        for s in 0..stages {
            let blocks = (0..config.stage_depths[s])
                .map(|j| BlockIds::register(&mut layout, &format!("enc{s}.blk{j}"), ch[s], &config))
                .collect();
            encoder.push(blocks);
            if s + 1 < stages {
                let c4 = 4 * ch[s];
                merges.push(MergeIds {
                    ln_g: layout.add(format!("merge{s}.ln.g"), &[c4], Init::Const(1.0)),
                    ln_b: layout.add(format!("merge{s}.ln.b"), &[c4], Init::Const(0.0)),
                    w: layout.add(format!("merge{s}.w"), &[c4, ch[s + 1]], bound(c4)),
                });
            }
        }

        let decoder = (0..stages - 1)
            .rev()
            .map(|s| {
                let (cin, c) = (ch[s + 1], ch[s]);
                UpIds {
                    up_w: layout.add(format!("dec{s}.up.w"), &[cin, c], bound(cin)),
                    fuse_w: layout.add(format!("dec{s}.fuse.w"), &[2 * c, c], bound(2 * c)),
                    fuse_b: layout.add(format!("dec{s}.fuse.b"), &[c], bound(2 * c)),
                    block: BlockIds::register(&mut layout, &format!("dec{s}.blk"), c, &config),
                }
            })
            .collect();

        let spec = Conv2dSpec::pointwise(ch[0], config.num_classes);
        let head = HeadIds {
            w: layout.add("head.w".into(), &spec.weight_shape(), Init::Uniform(spec.init_bound())),
            b: layout.add("head.b".into(), &[config.num_classes], Init::Uniform(spec.init_bound())),
            spec,
        };

        Ok(Self {
            config,
            layout,
            embed,
            encoder,
            merges,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_parameters(&self) -> usize {
        self.layout.total()
    }

    /// Parameter totals per top-level module (`embed`, `enc0`, `merge0`, ..., `head`).
    pub fn count_by_module(&self) -> Vec<ParamCount> {
        self.layout.count_by(|n| String::from(n.split('.').next().unwrap_or(n)))
    }

    /// Parameter totals per block component (`ssm`, `conv`, `other`).
    pub fn count_by_component(&self) -> Vec<ParamCount> {
        self.layout.count_by(|n| {
            if n.contains(".ssm.") {
                "ssm".into()
            } else if n.contains(".conv.") {
                "conv".into()
            } else {
                "other".into()
            }
        })
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> Vec<Tensor<T>> {
        self.layout.materialize(seed)
    }

    /// Place parameter values on `tape` as trainable leaves.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, params: &[Tensor<T>]) -> Result<Vec<Var>> {
        self.check_params(params)?;
        Ok(params.iter().map(|t| tape.param(t.clone())).collect())
    }

    pub fn check_params<T: Scalar>(&self, params: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.layout.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                self.layout.len(),
                params.len()
            )));
        }
        for (spec, t) in self.layout.specs().iter().zip(params) {
            if spec.shape != t.shape() {
                return Err(Error::Contract(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    /// Logits `[B, H, W, classes]` for images `[B, H, W, in_channels]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let m = self.config.size_multiple();
        match s[..] {
            [_, h, w, c] if c == self.config.in_channels && h % m == 0 && w % m == 0 => {}
            _ => {
                return Err(Error::Dimension(format!(
                    "input must be [B, H, W, {}] with H and W multiples of {m}, got {s:?}",
                    self.config.in_channels
                )))
            }
        }
        if p.len() != self.layout.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter handles, got {}",
                self.layout.len(),
                p.len()
            )));
        }
        let at = |id: ParamId| p[id.0];
        let eps = T::of_f64(LAYER_NORM_EPS);

        let e = &self.embed;
        let mut h = tape.conv2d(x, at(e.w), Some(at(e.b)), &e.spec)?;
        h = tape.layer_norm(h, at(e.ln_g), at(e.ln_b), eps)?;

        let mut skips = Vec::with_capacity(self.merges.len());
        for (s, blocks) in self.encoder.iter().enumerate() {
            for blk in blocks {
                h = blk.forward(tape, p, h)?;
            }
            if let Some(mg) = self.merges.get(s) {
                skips.push(h);
                let g = patch_merge_gather(tape, h)?;
                let g = tape.layer_norm(g, at(mg.ln_g), at(mg.ln_b), eps)?;
                h = tape.linear(g, at(mg.w), None)?;
            }
        }

        for up in &self.decoder {
            let skip = skips.pop().expect("one skip per up-stage");
            let u = tape.upsample_nearest(h, 2)?;
            let u = tape.linear(u, at(up.up_w), None)?;
            let cat = tape.concat_last(u, skip)?;
            h = tape.linear(cat, at(up.fuse_w), Some(at(up.fuse_b)))?;
            h = up.block.forward(tape, p, h)?;
        }

        let up = tape.upsample_bilinear(h, ModelConfig::PATCH)?;
        tape.conv2d(up, at(self.head.w), Some(at(self.head.b)), &self.head.spec)
    }
}
