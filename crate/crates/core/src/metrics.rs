//! Hard-mask segmentation metrics and boundary distances.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Boundary pixels `(row, col)` of a binary mask: foreground pixels with at
/// least one background 4-neighbour, the outside of the image counting as
/// background.
pub fn boundary_points(mask: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    let fg = |r: isize, c: isize| {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && mask[r as usize * w + c as usize]
    };
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !mask[r * w + c] {
                continue;
            }
            let (ri, ci) = (r as isize, c as isize);
            if !fg(ri - 1, ci) || !fg(ri + 1, ci) || !fg(ri, ci - 1) || !fg(ri, ci + 1) {
                out.push((r, c));
            }
        }
    }
    out
}

fn dist(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dr = a.0 as f64 - b.0 as f64;
    let dc = a.1 as f64 - b.1 as f64;
    (dr * dr + dc * dc).sqrt()
}

/// For every point of `from`, the Euclidean distance to the nearest point of
/// `to` (brute force). `to` must be non-empty.
pub fn directed_distances(from: &[(usize, usize)], to: &[(usize, usize)]) -> Vec<f64> {
    from.iter()
        .map(|&p| to.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min))
        .collect()
}

pub fn image_diagonal(h: usize, w: usize) -> f64 {
    ((h * h + w * w) as f64).sqrt()
}

/// Both directed distance lists between the boundaries of two masks, or
/// `None` when exactly one boundary is empty.
fn pooled_distances(pred: &[bool], gt: &[bool], h: usize, w: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    let bp = boundary_points(pred, h, w);
    let bg = boundary_points(gt, h, w);
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => Some((Vec::new(), Vec::new())),
        (false, false) => Some((directed_distances(&bp, &bg), directed_distances(&bg, &bp))),
        _ => None,
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric mean nearest-boundary distance between two binary masks.
///
/// Both boundaries empty gives 0; exactly one empty gives the image diagonal.
pub fn boundary_loss(pred: &[bool], gt: &[bool], h: usize, w: usize) -> f64 {
    match pooled_distances(pred, gt, h, w) {
        None => image_diagonal(h, w),
        Some((a, _)) if a.is_empty() => 0.0,
        Some((a, b)) => 0.5 * (mean(&a) + mean(&b)),
    }
}

/// Percentile `q ∈ [0, 1]` of unsorted values by linear interpolation
/// between closest ranks.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// 95th percentile of the pooled directed boundary distances.
pub fn hd95(pred: &[bool], gt: &[bool], h: usize, w: usize) -> f64 {
    match pooled_distances(pred, gt, h, w) {
        None => image_diagonal(h, w),
        Some((mut a, b)) => {
            a.extend(b);
            percentile(&a, 0.95)
        }
    }
}

/// `counts[gt * k + pred]`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    k: usize,
    counts: Vec<u64>,
}

/// One-vs-rest counts for a single class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    // An empty denominator means nothing could go wrong.
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassCounts {
    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }
    pub fn dice(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }
}

pub(crate) fn check_labels(mask: &[u8], k: usize, w: usize, what: &str) -> Result<()> {
    if let Some(i) = mask.iter().position(|&v| v as usize >= k) {
        let (r, c) = (i / w.max(1), i % w.max(1));
        return Err(Error::Data(alloc::format!(
            "{what} value {} at pixel {i} (row {r}, col {c}) is outside [0, {k})",
            mask[i]
        )));
    }
    Ok(())
}

impl Confusion {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8], w: usize) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Dimension(alloc::format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        check_labels(pred, self.k, w, "prediction")?;
        check_labels(gt, self.k, w, "ground truth")?;
        for (&p, &g) in pred.iter().zip(gt) {
            self.counts[g as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn class(&self, c: usize) -> ClassCounts {
        let tp = self.count(c, c);
        let row: u64 = (0..self.k).map(|p| self.count(c, p)).sum();
        let col: u64 = (0..self.k).map(|g| self.count(g, c)).sum();
        ClassCounts {
            tp,
            fp: col - tp,
            fn_: row - tp,
            tn: self.total() + tp - row - col,
        }
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.k).map(|c| self.count(c, c)).sum();
        ratio(diag, self.total())
    }
}

/// Table-style segmentation report. Class 0 is background; mIoU, DSC, Sen and
/// Spe are macro-averaged over the foreground classes (for binary tasks this
/// is class 1 alone). `Acc` is overall pixel accuracy.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub miou: f64,
    pub dsc: f64,
    pub acc: f64,
    pub spe: f64,
    pub sen: f64,
    pub hd95: f64,
    pub per_class_dsc: Vec<f64>,
}

impl MetricReport {
    fn from_parts(conf: &Confusion, hd95: f64) -> Self {
        let fg: Vec<ClassCounts> = (1..conf.k).map(|c| conf.class(c)).collect();
        let avg = |f: fn(&ClassCounts) -> f64| fg.iter().map(f).sum::<f64>() / fg.len() as f64;
        Self {
            miou: avg(ClassCounts::iou),
            dsc: avg(ClassCounts::dice),
            acc: conf.accuracy(),
            spe: avg(ClassCounts::specificity),
            sen: avg(ClassCounts::sensitivity),
            hd95,
            per_class_dsc: (0..conf.k).map(|c| conf.class(c).dice()).collect(),
        }
    }
}

fn class_mask(m: &[u8], c: usize) -> Vec<bool> {
    m.iter().map(|&v| v as usize == c).collect()
}

/// Mean HD95 over foreground classes of one image.
pub fn image_hd95(pred: &[u8], gt: &[u8], h: usize, w: usize, k: usize) -> f64 {
    let total: f64 = (1..k)
        .map(|c| hd95(&class_mask(pred, c), &class_mask(gt, c), h, w))
        .sum();
    total / (k - 1) as f64
}

/// Metrics for one `h × w` prediction against ground truth.
pub fn evaluate(pred: &[u8], gt: &[u8], h: usize, w: usize, k: usize) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::new(k)?;
    acc.add(pred, gt, h, w)?;
    Ok(acc.report())
}

/// Split-level aggregation: confusion counts are pooled over all pixels and
/// HD95 is averaged over images, in insertion order.
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    confusion: Confusion,
    hd_sum: f64,
    images: usize,
}

impl MetricAccumulator {
    pub fn new(k: usize) -> Result<Self> {
        if !(2..=256).contains(&k) {
            return Err(Error::Contract(alloc::format!(
                "num_classes must be in [2, 256], got {k}"
            )));
        }
        Ok(Self {
            confusion: Confusion::new(k),
            hd_sum: 0.0,
            images: 0,
        })
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8], h: usize, w: usize) -> Result<()> {
        if pred.len() != h * w {
            return Err(Error::Dimension(alloc::format!(
                "mask has {} pixels, expected {h}x{w}",
                pred.len()
            )));
        }
        self.confusion.add(pred, gt, w)?;
        self.hd_sum += image_hd95(pred, gt, h, w, self.confusion.k);
        self.images += 1;
        Ok(())
    }

    pub fn confusion(&self) -> &Confusion {
        &self.confusion
    }

    pub fn report(&self) -> MetricReport {
        let hd = if self.images == 0 {
            0.0
        } else {
            self.hd_sum / self.images as f64
        };
        MetricReport::from_parts(&self.confusion, hd)
    }
}
