//! Synthetic segmentation data, dataset manifests and batching.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hcmamba_core::rng::{seeded_stream, uniform, SeededRng};
use hcmamba_core::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::netpbm::{self, Image};

pub const MANIFEST: &str = "manifest.tsv";

// Stream offsets keep per-purpose random sequences apart for one seed.
const SHUFFLE_STREAMS: u64 = 1 << 40;
const FLIP_STREAMS: u64 = 2 << 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// 80/10/10 by index.
    pub fn of_index(i: usize, n: usize) -> Self {
        if i * 10 < n * 8 {
            Self::Train
        } else if i * 10 < n * 9 {
            Self::Val
        } else {
            Self::Test
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            _ => Err(Error::Config(format!(
                "unknown split {s:?} (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub num_images: usize,
    pub num_classes: usize,
    /// Amplitude of the background texture noise, in `[0, 1]` intensity units.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            num_images: 200,
            num_classes: 2,
            noise: 0.08,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % 32 != 0 {
            return Err(Error::Config(format!(
                "image_size must be a positive multiple of 32, got {}",
                self.image_size
            )));
        }
        if self.num_images == 0 {
            return Err(Error::Config("num_images must be at least 1".into()));
        }
        if !(2..=3).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "synthetic data supports 2 or 3 classes, got {}",
                self.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(format!("noise must be in [0, 1], got {}", self.noise)));
        }
        Ok(())
    }
}

pub const MIN_FOREGROUND: f64 = 0.05;
pub const MAX_FOREGROUND: f64 = 0.6;
const SUPERSAMPLE: usize = 4;

enum Shape {
    Ellipse {
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
        cos: f64,
        sin: f64,
    },
    Polygon(Vec<(f64, f64)>),
}

impl Shape {
    fn random(rng: &mut SeededRng, size: f64) -> Self {
        let cy = uniform(rng, 0.2, 0.8) * size;
        let cx = uniform(rng, 0.2, 0.8) * size;
        let r = uniform(rng, 0.1, 0.28) * size;
        if rng.random::<bool>() {
            let t = uniform(rng, 0.0, std::f64::consts::PI);
            Self::Ellipse {
                cy,
                cx,
                ry: r * uniform(rng, 0.6, 1.0),
                rx: r * uniform(rng, 0.6, 1.0),
                cos: t.cos(),
                sin: t.sin(),
            }
        } else {
            let n = rng.random_range(5..=8);
            let mut angles: Vec<f64> = (0..n).map(|_| uniform(rng, 0.0, std::f64::consts::TAU)).collect();
            angles.sort_by(f64::total_cmp);
            let pts = angles
                .into_iter()
                .map(|a| {
                    let rr = r * uniform(rng, 0.7, 1.0);
                    (cy + rr * a.sin(), cx + rr * a.cos())
                })
                .collect();
            Self::Polygon(pts)
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Self::Ellipse {
                cy,
                cx,
                ry,
                rx,
                cos,
                sin,
            } => {
                let (dy, dx) = (y - cy, x - cx);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Self::Polygon(p) => {
                let mut inside = false;
                let mut j = p.len() - 1;
                for i in 0..p.len() {
                    let ((yi, xi), (yj, xj)) = (p[i], p[j]);
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }

    /// Fraction of the pixel `(r, c)` covered, by regular supersampling.
    fn coverage(&self, r: usize, c: usize) -> f64 {
        let s = SUPERSAMPLE;
        let mut hit = 0;
        for i in 0..s {
            for j in 0..s {
                let y = r as f64 + (i as f64 + 0.5) / s as f64;
                let x = c as f64 + (j as f64 + 0.5) / s as f64;
                hit += self.contains(y, x) as usize;
            }
        }
        hit as f64 / (s * s) as f64
    }
}

/// One generated image (`[H·W·3]` RGB) and mask (`[H·W]` class ids).
pub fn synthesize(spec: &SyntheticSpec, index: usize) -> (Image, Image) {
    let n = spec.image_size;
    let mut rng = seeded_stream(spec.seed, index as u64);
    loop {
        let blobs: Vec<(Shape, u8)> = (0..rng.random_range(1..=3))
            .map(|_| {
                let shape = Shape::random(&mut rng, n as f64);
                let class = if spec.num_classes == 2 {
                    1
                } else {
                    rng.random_range(1..spec.num_classes as u8)
                };
                (shape, class)
            })
            .collect();
        let mut mask = vec![0u8; n * n];
        let mut cover = vec![0.0f64; n * n * blobs.len()];
        for r in 0..n {
            for c in 0..n {
                for (k, (shape, class)) in blobs.iter().enumerate() {
                    // The mask follows the pixel centre; the image gets the blended coverage.
                    if shape.contains(r as f64 + 0.5, c as f64 + 0.5) {
                        mask[r * n + c] = *class;
                    }
                    cover[(r * n + c) * blobs.len() + k] = shape.coverage(r, c);
                }
            }
        }
        let frac = mask.iter().filter(|&&m| m != 0).count() as f64 / (n * n) as f64;
        if !(MIN_FOREGROUND..=MAX_FOREGROUND).contains(&frac) {
            continue;
        }

        let skin = [
            uniform(&mut rng, 0.7, 0.9),
            uniform(&mut rng, 0.5, 0.7),
            uniform(&mut rng, 0.4, 0.6),
        ];
        let lesion_base = [
            uniform(&mut rng, 0.25, 0.45),
            uniform(&mut rng, 0.12, 0.25),
            uniform(&mut rng, 0.08, 0.2),
        ];
        // Low-frequency background texture from a few random plane waves.
        let waves: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    uniform(&mut rng, -0.3, 0.3),
                    uniform(&mut rng, -0.3, 0.3),
                    uniform(&mut rng, 0.0, std::f64::consts::TAU),
                )
            })
            .collect();
        let tint: Vec<[f64; 3]> = blobs
            .iter()
            .map(|(_, class)| {
                let shift = 0.15 * (*class as f64 - 1.0);
                [lesion_base[0] + shift, lesion_base[1], lesion_base[2] + shift]
            })
            .collect();
        let mut rgb = vec![0u8; n * n * 3];
        for r in 0..n {
            for c in 0..n {
                let tex: f64 = waves
                    .iter()
                    .map(|(fy, fx, ph)| (fy * r as f64 + fx * c as f64 + ph).sin())
                    .sum::<f64>()
                    / 3.0;
                for ch in 0..3 {
                    let grain = uniform(&mut rng, -1.0, 1.0);
                    let mut v = skin[ch] + spec.noise * (0.6 * tex + 0.4 * grain);
                    for (k, t) in tint.iter().enumerate() {
                        let a = cover[(r * n + c) * blobs.len() + k];
                        v = (1.0 - a) * v + a * (t[ch] + 0.5 * spec.noise * grain);
                    }
                    rgb[(r * n + c) * 3 + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
        return (Image::new(n, n, 3, rgb), Image::new(n, n, 1, mask));
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub index: usize,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

/// Parse `index<TAB>image<TAB>mask<TAB>split` lines; relative paths resolve
/// against `base`.
pub fn parse_manifest(text: &str, base: &Path, origin: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |msg: String| Error::Data(format!("{}:{}: {msg}", origin.display(), ln + 1));
        if f.len() != 4 {
            return Err(bad(format!("expected 4 tab-separated fields, got {}", f.len())));
        }
        let index = f[0].parse().map_err(|_| bad(format!("bad index {:?}", f[0])))?;
        let split = f[3].parse().map_err(|e: Error| bad(e.to_string()))?;
        out.push(ManifestEntry {
            index,
            image: base.join(f[1]),
            mask: base.join(f[2]),
            split,
        });
    }
    Ok(out)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_manifest(&text, dir, &path)
}

fn dir_has_entries(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Write the dataset under `dir` and return the manifest path.
pub fn generate_synthetic(spec: &SyntheticSpec, dir: &Path, force: bool) -> Result<PathBuf> {
    spec.validate()?;
    if dir_has_entries(dir) && !force {
        return Err(Error::Refused(format!(
            "{} already exists and is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = String::new();
    for i in 0..spec.num_images {
        let (img, mask) = synthesize(spec, i);
        let ip = format!("images/{i:04}.ppm");
        let mp = format!("masks/{i:04}.pgm");
        netpbm::write(&dir.join(&ip), &img)?;
        netpbm::write(&dir.join(&mp), &mask)?;
        let split = Split::of_index(i, spec.num_images);
        manifest.push_str(&format!("{i}\t{ip}\t{mp}\t{split}\n"));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Decoded image/mask pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub height: usize,
    pub width: usize,
    /// Interleaved RGB in `[0, 1]`.
    pub rgb: Vec<f32>,
    pub mask: Vec<u8>,
}

/// Load and validate one pair. Nothing is returned unless both files parse
/// and agree.
pub fn load_pair(image: &Path, mask: &Path, num_classes: usize) -> Result<Sample> {
    let img = netpbm::read_channels(image, 3)?;
    let m = netpbm::read_channels(mask, 1)?;
    if (img.width, img.height) != (m.width, m.height) {
        return Err(Error::Data(format!(
            "{} is {}x{} but {} is {}x{}",
            image.display(),
            img.width,
            img.height,
            mask.display(),
            m.width,
            m.height
        )));
    }
    if let Some(i) = m.data.iter().position(|&v| v as usize >= num_classes) {
        return Err(Error::Data(format!(
            "{}: class {} at (row {}, col {}) is outside [0, {num_classes})",
            mask.display(),
            m.data[i],
            i / m.width,
            i % m.width
        )));
    }
    Ok(Sample {
        height: img.height,
        width: img.width,
        rgb: img.data.iter().map(|&v| v as f32 / 255.0).collect(),
        mask: m.data,
    })
}

/// Load every pair of one split, in manifest order.
pub fn load_split(dir: &Path, split: Split, num_classes: usize) -> Result<Vec<Sample>> {
    read_manifest(dir)?
        .iter()
        .filter(|e| e.split == split)
        .map(|e| load_pair(&e.image, &e.mask, num_classes))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationBatch<T> {
    /// `[B, H, W, 3]`
    pub images: Tensor<T>,
    /// `B·H·W` class ids.
    pub masks: Vec<u8>,
}

/// Epoch order: a permutation drawn from `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_stream(seed, SHUFFLE_STREAMS + epoch as u64));
    order
}

/// Horizontal flip decision per position of the epoch order.
pub fn epoch_flips(n: usize, seed: u64, epoch: usize) -> Vec<bool> {
    let mut rng = seeded_stream(seed, FLIP_STREAMS + epoch as u64);
    (0..n).map(|_| rng.random::<bool>()).collect()
}

/// `[1, H, W, 3]` tensor and mask of one sample, optionally mirrored left-right.
pub fn sample_tensor<T: Scalar>(s: &Sample, flip: bool) -> (Tensor<T>, Vec<u8>) {
    let (h, w) = (s.height, s.width);
    let src = |r: usize, c: usize| r * w + if flip { w - 1 - c } else { c };
    let img = Tensor::from_fn(&[1, h, w, 3], |i| {
        let (p, ch) = (i / 3, i % 3);
        T::of_f64(s.rgb[src(p / w, p % w) * 3 + ch] as f64)
    });
    let mask = (0..h * w).map(|p| s.mask[src(p / w, p % w)]).collect();
    (img, mask)
}

/// Items of one epoch grouped into batches of `(sample index, flip)`; the
/// last batch may be short.
pub fn batch_plan(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    shuffle: bool,
    flip: bool,
) -> Result<Vec<Vec<(usize, bool)>>> {
    if n == 0 {
        return Err(Error::Data("dataset split is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let order = if shuffle {
        epoch_order(n, seed, epoch)
    } else {
        (0..n).collect()
    };
    let flips = if flip {
        epoch_flips(n, seed, epoch)
    } else {
        vec![false; n]
    };
    let items: Vec<(usize, bool)> = order.into_iter().zip(flips).collect();
    Ok(items.chunks(batch_size).map(<[_]>::to_vec).collect())
}

/// Stack the planned items into one batch.
pub fn make_batch<T: Scalar>(samples: &[Sample], items: &[(usize, bool)]) -> Result<SegmentationBatch<T>> {
    let (h, w) = (samples[items[0].0].height, samples[items[0].0].width);
    let mut data = Vec::with_capacity(items.len() * h * w * 3);
    let mut masks = Vec::with_capacity(items.len() * h * w);
    for &(i, f) in items {
        let s = &samples[i];
        if (s.height, s.width) != (h, w) {
            return Err(Error::Data(format!(
                "batch mixes {}x{} and {}x{} images",
                h, w, s.height, s.width
            )));
        }
        let (t, m) = sample_tensor::<T>(s, f);
        data.extend_from_slice(t.data());
        masks.extend(m);
    }
    Ok(SegmentationBatch {
        images: Tensor::new(&[items.len(), h, w, 3], data)?,
        masks,
    })
}
