//! Run configuration: `key = value` files with `#` comments plus overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use hcmamba_core::conv::DilationSchedule;
use hcmamba_core::loss::LossWeights;
use hcmamba_core::model::{ConvVariant, ModelConfig};
use hcmamba_core::optim::AdamWConfig;

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        }
    }
}

/// Everything a command needs. Defaults are the desk-scale setup.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub flip: bool,
    /// Stop after this many epochs even if the schedule runs longer.
    pub stop_after: Option<usize>,
    pub precision: Precision,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub num_images: usize,
    pub noise: f64,
    pub data_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                base_channels: 32,
                state_size: 8,
                input_size: (64, 64),
                ..ModelConfig::default()
            },
            loss: LossWeights::default(),
            lr: 1e-3,
            lr_min: 1e-5,
            weight_decay: 1e-4,
            epochs: 20,
            batch_size: 8,
            seed: 0,
            flip: true,
            stop_after: None,
            precision: Precision::F32,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            num_images: 200,
            noise: 0.08,
            data_seed: 7,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?} as a number")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub const KEYS: &[&str] = &[
    "base_channels",
    "stage_depths",
    "state_size",
    "num_classes",
    "input_size",
    "dilation_schedule",
    "conv_variant",
    "expand",
    "w_miou",
    "w_dice",
    "w_boundary",
    "lr",
    "lr_min",
    "weight_decay",
    "epochs",
    "batch_size",
    "seed",
    "flip",
    "stop_after",
    "precision",
    "data_dir",
    "out_dir",
    "num_images",
    "noise",
    "data_seed",
];

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        match key {
            "base_channels" => m.base_channels = parse_num(key, v)?,
            "stage_depths" => m.stage_depths = parse_list(key, v)?,
            "state_size" => m.state_size = parse_num(key, v)?,
            "num_classes" => m.num_classes = parse_num(key, v)?,
            "input_size" => {
                m.input_size = match v.split_once('x') {
                    Some((h, w)) => (parse_num(key, h)?, parse_num(key, w)?),
                    None => {
                        let s = parse_num(key, v)?;
                        (s, s)
                    }
                }
            }
            "dilation_schedule" => m.dilation_schedule = DilationSchedule::new(parse_list(key, v)?)?,
            "conv_variant" => m.conv_variant = v.parse::<ConvVariant>()?,
            "expand" => m.expand = parse_num(key, v)?,
            "w_miou" => self.loss.miou = parse_num(key, v)?,
            "w_dice" => self.loss.dice = parse_num(key, v)?,
            "w_boundary" => self.loss.boundary = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "lr_min" => self.lr_min = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "flip" => self.flip = parse_bool(key, v)?,
            "stop_after" => self.stop_after = if v == "none" { None } else { Some(parse_num(key, v)?) },
            "precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(Error::Config(format!("precision: expected f32 or f64, got {v:?}"))),
                }
            }
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "num_images" => self.num_images = parse_num(key, v)?,
            "noise" => self.noise = parse_num(key, v)?,
            "data_seed" => self.data_seed = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` lines. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key = value", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        self.set(k.trim(), v)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg.apply_text(&text, &p.display().to_string())?;
        }
        for kv in overrides {
            cfg.apply_override(kv)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 <= lr_min <= lr, lr > 0 (got {} and {})",
                self.lr_min, self.lr
            )));
        }
        if self.model.num_classes > 256 {
            return Err(Error::Config("num_classes must be at most 256".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn synthetic(&self) -> SyntheticSpec {
        SyntheticSpec {
            image_size: self.model.input_size.0,
            num_images: self.num_images,
            num_classes: self.model.num_classes,
            noise: self.noise,
            seed: self.data_seed,
        }
    }

    /// Every key with its current value, in [`KEYS`] order; parses back to `self`.
    pub fn echo(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("base_channels", m.base_channels.to_string());
        put("stage_depths", join(&m.stage_depths));
        put("state_size", m.state_size.to_string());
        put("num_classes", m.num_classes.to_string());
        put("input_size", format!("{}x{}", m.input_size.0, m.input_size.1));
        put("dilation_schedule", join(m.dilation_schedule.rates()));
        put("conv_variant", m.conv_variant.to_string());
        put("expand", m.expand.to_string());
        put("w_miou", format!("{:?}", self.loss.miou));
        put("w_dice", format!("{:?}", self.loss.dice));
        put("w_boundary", format!("{:?}", self.loss.boundary));
        put("lr", format!("{:?}", self.lr));
        put("lr_min", format!("{:?}", self.lr_min));
        put("weight_decay", format!("{:?}", self.weight_decay));
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("flip", self.flip.to_string());
        put(
            "stop_after",
            self.stop_after.map_or_else(|| "none".into(), |v| v.to_string()),
        );
        put("precision", self.precision.as_str().into());
        put("data_dir", self.data_dir.display().to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("num_images", self.num_images.to_string());
        put("noise", format!("{:?}", self.noise));
        put("data_seed", self.data_seed.to_string());
        s
    }
}
