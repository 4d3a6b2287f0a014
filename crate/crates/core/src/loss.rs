//! Segmentation losses: soft mIoU, soft Dice and a boundary-distance term.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::metrics::{boundary_loss as hard_boundary_loss, check_labels};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Smoothing added to numerator and denominator of the soft overlap ratios.
pub const SOFT_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub miou: f64,
    pub dice: f64,
    pub boundary: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            miou: 0.4,
            dice: 0.4,
            boundary: 0.2,
        }
    }
}

impl LossWeights {
    pub fn new(miou: f64, dice: f64, boundary: f64) -> Result<Self> {
        let w = Self { miou, dice, boundary };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.miou, self.dice, self.boundary];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || all.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Contract(alloc::format!(
                "loss weights must be non-negative with a positive sum, got {all:?}"
            )));
        }
        Ok(())
    }
}

/// Per-image, per-class sums `(Σ p·g, Σ p, Σ g)`, each `[B, K]`-shaped list of `[K]` vars.
fn class_sums<T: Scalar>(tape: &mut Tape<T>, probs: Var, onehot: Var) -> Result<Vec<(Var, Var, Var)>> {
    let ps = tape.shape(probs).to_vec();
    if ps != tape.shape(onehot) {
        return crate::error::shape_err("soft overlap", &ps, tape.shape(onehot));
    }
    if ps.len() < 2 {
        return Err(Error::Dimension(alloc::format!("expected [B, ..., K], got {ps:?}")));
    }
    let (b, k) = (ps[0], ps[ps.len() - 1]);
    let pix = tape.value(probs).len() / (b * k);
    let p = tape.reshape(probs, &[b, pix, k])?;
    let g = tape.reshape(onehot, &[b, pix, k])?;
    let pg = tape.mul(p, g)?;
    (0..b)
        .map(|i| {
            let sel = |t: &mut Tape<T>, v| -> Result<Var> {
                let s = t.select(v, 0, i)?;
                t.sum_leading(s, 1)
            };
            Ok((sel(tape, pg)?, sel(tape, p)?, sel(tape, g)?))
        })
        .collect()
}

/// `1 − mean_k (I_k + ε)/(U_k + ε)` with `U = Σp + Σg − I`, averaged over the batch.
pub fn soft_miou_loss<T: Scalar>(tape: &mut Tape<T>, probs: Var, onehot: Var) -> Result<Var> {
    let sums = class_sums(tape, probs, onehot)?;
    let eps = T::of_f64(SOFT_EPS);
    let mut per_image = Vec::with_capacity(sums.len());
    for (i, p, g) in sums {
        let pg = tape.add(p, g)?;
        let u = tape.sub(pg, i)?;
        let num = tape.add_scalar(i, eps);
        let den = tape.add_scalar(u, eps);
        let r = tape.div(num, den)?;
        per_image.push(tape.mean(r));
    }
    one_minus_mean(tape, &per_image)
}

/// `1 − mean_k (2I_k + ε)/(Σp_k + Σg_k + ε)`, averaged over the batch.
pub fn soft_dice_loss<T: Scalar>(tape: &mut Tape<T>, probs: Var, onehot: Var) -> Result<Var> {
    let sums = class_sums(tape, probs, onehot)?;
    let eps = T::of_f64(SOFT_EPS);
    let mut per_image = Vec::with_capacity(sums.len());
    for (i, p, g) in sums {
        let two_i = tape.scale(i, T::of_f64(2.0));
        let num = tape.add_scalar(two_i, eps);
        let pg = tape.add(p, g)?;
        let den = tape.add_scalar(pg, eps);
        let r = tape.div(num, den)?;
        per_image.push(tape.mean(r));
    }
    one_minus_mean(tape, &per_image)
}

fn one_minus_mean<T: Scalar>(tape: &mut Tape<T>, scores: &[Var]) -> Result<Var> {
    let mut acc = scores[0];
    for &s in &scores[1..] {
        acc = tape.add(acc, s)?;
    }
    let m = tape.scale(acc, T::of_f64(-1.0 / scores.len() as f64));
    Ok(tape.add_scalar(m, T::one()))
}

/// One-hot encoding of `labels` (length `B·H·W`) as `[.., K]`.
pub fn one_hot<T: Scalar>(labels: &[u8], shape: &[usize], w: usize) -> Result<Tensor<T>> {
    let k = *shape.last().unwrap_or(&0);
    check_labels(labels, k, w, "label")?;
    let mut t = Tensor::zeros(shape);
    if t.len() != labels.len() * k {
        return Err(Error::Dimension(alloc::format!(
            "{} labels do not match logits {shape:?}",
            labels.len()
        )));
    }
    let d = t.data_mut();
    for (i, &l) in labels.iter().enumerate() {
        d[i * k + l as usize] = T::one();
    }
    Ok(t)
}

/// Per-pixel argmax over the trailing class axis.
pub fn argmax<T: Scalar>(logits: &Tensor<T>) -> Vec<u8> {
    let k = logits.last_dim();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect()
}

/// Mean over images and foreground classes of the hard boundary loss.
pub fn mask_boundary_loss(pred: &[u8], gt: &[u8], b: usize, h: usize, w: usize, k: usize) -> f64 {
    let hw = h * w;
    let mut total = 0.0;
    for i in 0..b {
        let (p, g) = (&pred[i * hw..(i + 1) * hw], &gt[i * hw..(i + 1) * hw]);
        for c in 1..k {
            let pm: Vec<bool> = p.iter().map(|&v| v as usize == c).collect();
            let gm: Vec<bool> = g.iter().map(|&v| v as usize == c).collect();
            total += hard_boundary_loss(&pm, &gm, h, w);
        }
    }
    total / (b * (k - 1)) as f64
}

/// Loss value and its components.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    /// Weighted total; the boundary term enters as a constant.
    pub total: Var,
    pub miou: f64,
    pub dice: f64,
    pub boundary: f64,
}

/// Weighted composite of soft mIoU, soft Dice and the argmax boundary term
/// for logits `[B, H, W, K]` and labels of length `B·H·W`.
pub fn composite_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[u8],
    weights: &LossWeights,
) -> Result<LossParts> {
    weights.validate()?;
    let shape = tape.shape(logits).to_vec();
    let [b, h, w, k] = shape[..] else {
        return Err(Error::Dimension(alloc::format!(
            "logits must be [B, H, W, K], got {shape:?}"
        )));
    };
    let onehot = tape.constant(one_hot(labels, &shape, w)?);
    let probs = tape.softmax(logits);
    let l_iou = soft_miou_loss(tape, probs, onehot)?;
    let l_dice = soft_dice_loss(tape, probs, onehot)?;
    let pred = argmax(tape.value(logits));
    let boundary = mask_boundary_loss(&pred, labels, b, h, w, k);

    let a = tape.scale(l_iou, T::of_f64(weights.miou));
    let d = tape.scale(l_dice, T::of_f64(weights.dice));
    let soft = tape.add(a, d)?;
    let total = tape.add_scalar(soft, T::of_f64(weights.boundary * boundary));
    Ok(LossParts {
        total,
        miou: tape.value(l_iou)[0].as_f64(),
        dice: tape.value(l_dice)[0].as_f64(),
        boundary,
    })
}
