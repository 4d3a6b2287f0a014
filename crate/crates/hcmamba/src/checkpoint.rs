//! Checkpoints: a directory holding a plain-text `manifest.txt`, the
//! parameter blob `params.bin` and the optimizer moments `optim.bin`, both
//! little-endian at the manifest's precision.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use hcmamba_core::model::ParamLayout;
use hcmamba_core::optim::AdamW;
use hcmamba_core::{Scalar, Tensor};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";
pub const PARAMS: &str = "params.bin";
pub const OPTIM: &str = "optim.bin";
const FORMAT: &str = "hcmamba-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in elements.
    pub offset: usize,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Training progress stored with the weights.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Progress {
    /// Epochs completed.
    pub epoch: usize,
    pub step: usize,
    pub best_val_miou: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub precision: String,
    pub seed: u64,
    pub progress: Progress,
    pub param_count: usize,
    pub config: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub manifest: Manifest,
    pub params: Vec<Tensor<T>>,
    pub optim: Option<AdamW<T>>,
}

fn blob<T: Scalar>(ts: &[Tensor<T>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(ts.iter().map(Tensor::len).sum::<usize>() * T::WIDTH);
    for t in ts {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut s = format!(
            "format = {FORMAT}\nprecision = {}\nseed = {}\nepoch = {}\nstep = {}\nbest_val_miou = {:?}\nparam_count = {}\n",
            self.precision, self.seed, self.progress.epoch, self.progress.step, self.progress.best_val_miou, self.param_count
        );
        s.push_str("[config]\n");
        s.push_str(&self.config);
        s.push_str("[tensors]\n");
        for t in &self.tensors {
            let shape = t.shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
            s.push_str(&format!("{}\t{}\t{}\n", t.name, shape, t.offset));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |ln: usize, msg: &str| Error::Checkpoint(format!("{MANIFEST}:{}: {msg}", ln + 1));
        let mut header = BTreeMap::new();
        let mut config = String::new();
        let mut tensors = Vec::new();
        let mut section = "";
        for (ln, line) in text.lines().enumerate() {
            match line {
                "[config]" | "[tensors]" => {
                    section = line;
                    continue;
                }
                _ => {}
            }
            match section {
                "" => {
                    let (k, v) = line.split_once(" = ").ok_or_else(|| bad(ln, "expected key = value"))?;
                    header.insert(k.to_string(), v.to_string());
                }
                "[config]" => {
                    config.push_str(line);
                    config.push('\n');
                }
                _ => {
                    let f: Vec<&str> = line.split('\t').collect();
                    if f.len() != 3 {
                        return Err(bad(ln, "expected name, shape and offset"));
                    }
                    let shape = f[1]
                        .split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad(ln, "malformed shape"))?;
                    let offset = f[2].parse().map_err(|_| bad(ln, "malformed offset"))?;
                    tensors.push(TensorEntry {
                        name: f[0].to_string(),
                        shape,
                        offset,
                    });
                }
            }
        }
        let get = |k: &str| {
            header
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("{MANIFEST}: missing {k}")))
        };
        if get("format")? != FORMAT {
            return Err(Error::Checkpoint(format!(
                "{MANIFEST}: unsupported format {:?}",
                get("format")?
            )));
        }
        let num = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("{MANIFEST}: malformed {k}")))
        };
        Ok(Self {
            precision: get("precision")?.clone(),
            seed: num("seed")?,
            progress: Progress {
                epoch: num("epoch")? as usize,
                step: num("step")? as usize,
                best_val_miou: get("best_val_miou")?
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("{MANIFEST}: malformed best_val_miou")))?,
            },
            param_count: num("param_count")? as usize,
            config,
            tensors,
        })
    }
}

/// Write a checkpoint directory, replacing any existing one at `dir`.
pub fn save<T: Scalar>(
    dir: &Path,
    layout: &ParamLayout,
    params: &[Tensor<T>],
    optim: Option<&AdamW<T>>,
    cfg: &RunConfig,
    progress: Progress,
) -> Result<()> {
    let mut offset = 0;
    let tensors = layout
        .specs()
        .iter()
        .map(|s| {
            let e = TensorEntry {
                name: s.name.clone(),
                shape: s.shape.clone(),
                offset,
            };
            offset += s.numel();
            e
        })
        .collect();
    let manifest = Manifest {
        precision: T::NAME.into(),
        seed: cfg.seed,
        progress,
        param_count: offset,
        config: cfg.echo(),
        tensors,
    };
    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    write_file(&tmp.join(PARAMS), &blob(params))?;
    if let Some(o) = optim {
        let mut b = blob(&o.m);
        b.extend(blob(&o.v));
        write_file(&tmp.join(OPTIM), &b)?;
    }
    write_file(&tmp.join(MANIFEST), manifest.render().as_bytes())?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
}

fn decode<T: Scalar>(bytes: &[u8], width: usize, start: usize, n: usize) -> Vec<T> {
    let chunk = &bytes[start * width..(start + n) * width];
    match width {
        4 => chunk
            .chunks_exact(4)
            .map(|c| T::of_f64(f32::read_le(c) as f64))
            .collect(),
        _ => chunk.chunks_exact(8).map(|c| T::of_f64(f64::read_le(c))).collect(),
    }
}

/// Names and shapes that differ between the manifest and the model layout.
pub fn mismatches(manifest: &Manifest, layout: &ParamLayout) -> Vec<String> {
    let have: BTreeMap<&str, &TensorEntry> = manifest.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut out = Vec::new();
    for s in layout.specs() {
        match have.get(s.name.as_str()) {
            None => out.push(format!("missing {} {:?}", s.name, s.shape)),
            Some(t) if t.shape != s.shape => {
                out.push(format!("{}: checkpoint {:?}, model {:?}", s.name, t.shape, s.shape))
            }
            _ => {}
        }
    }
    for t in &manifest.tensors {
        if !layout.specs().iter().any(|s| s.name == t.name) {
            out.push(format!("unexpected {} {:?}", t.name, t.shape));
        }
    }
    out
}

/// Load a checkpoint for `layout`, converting to `T` if it was stored at a
/// different precision.
pub fn load<T: Scalar>(dir: &Path, layout: &ParamLayout) -> Result<Checkpoint<T>> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest = Manifest::parse(&text)?;
    let width = match manifest.precision.as_str() {
        "f32" => 4,
        "f64" => 8,
        p => return Err(Error::Checkpoint(format!("{MANIFEST}: unknown precision {p:?}"))),
    };
    let listing = mismatches(&manifest, layout);
    if !listing.is_empty() {
        return Err(Error::Checkpoint(format!(
            "checkpoint does not match the configured model ({} differences): {}",
            listing.len(),
            listing.join("; ")
        )));
    }
    let total: usize = manifest.tensors.iter().map(TensorEntry::numel).sum();
    if total != manifest.param_count {
        return Err(Error::Checkpoint(format!(
            "{MANIFEST}: param_count {} but tensors hold {total}",
            manifest.param_count
        )));
    }
    let ppath = dir.join(PARAMS);
    let bytes = fs::read(&ppath).map_err(|e| Error::io(&ppath, e))?;
    if bytes.len() != total * width {
        return Err(Error::Checkpoint(format!(
            "{PARAMS}: {} bytes, expected {} ({total} values x {width})",
            bytes.len(),
            total * width
        )));
    }
    let by_name: BTreeMap<&str, &TensorEntry> = manifest.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let read_set = |bytes: &[u8], base: usize| -> Result<Vec<Tensor<T>>> {
        layout
            .specs()
            .iter()
            .map(|s| {
                let e = by_name[s.name.as_str()];
                if e.offset + e.numel() > total {
                    return Err(Error::Checkpoint(format!(
                        "{}: offset {} + {} exceeds the blob ({total} values)",
                        e.name,
                        e.offset,
                        e.numel()
                    )));
                }
                Ok(Tensor::new(&e.shape, decode(bytes, width, base + e.offset, e.numel()))?)
            })
            .collect()
    };
    let params = read_set(&bytes, 0)?;
    if let Some(bad) = params.iter().zip(layout.specs()).find(|(t, _)| !t.is_finite()) {
        return Err(Error::Checkpoint(format!("{}: non-finite values", bad.1.name)));
    }

    let opath = dir.join(OPTIM);
    let optim = if opath.exists() {
        let ob = fs::read(&opath).map_err(|e| Error::io(&opath, e))?;
        if ob.len() != 2 * total * width {
            return Err(Error::Checkpoint(format!(
                "{OPTIM}: {} bytes, expected {}",
                ob.len(),
                2 * total * width
            )));
        }
        let cfg = RunConfig::default();
        let mut o = AdamW::new(cfg.optimizer(), &params);
        o.m = read_set(&ob, 0)?;
        o.v = read_set(&ob, total)?;
        o.step = manifest.progress.step;
        Some(o)
    } else {
        None
    };
    Ok(Checkpoint {
        manifest,
        params,
        optim,
    })
}
