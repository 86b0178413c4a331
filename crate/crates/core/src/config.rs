//! Flat `key=value` run settings shared by every command.
//!
//! A configuration starts from a preset (`desk` unless told otherwise),
//! then applies a file and `--set` overrides in order. Unknown keys and
//! unparsable values are rejected with the offending key named.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::bif::{BifLayout, GaborBankConfig, WindowStat};
use crate::error::{Error, Result};
use crate::model::{FusionConfig, StageSpec};
use crate::train::TrainSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub face_size: usize,
    pub patch_size: usize,
    pub split_ratio: f64,
    pub gabor: GaborBankConfig,
    pub bif_window: usize,
    pub bif_stride: usize,
    pub bif_stat: WindowStat,
    pub k_prime: usize,
    pub tree_depth: usize,
    /// 0 keeps one class per distinct age.
    pub select_bins: usize,
    pub max_iou: f64,
    pub stem: usize,
    pub down: usize,
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    pub bottleneck_ratio: usize,
    pub patch_channels: usize,
    pub use_patches: bool,
    pub schedule: TrainSchedule,
    pub checkpoint_every: usize,
}

/// Every key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("face_size", "side of the preprocessed face in pixels"),
    ("patch_size", "side every patch is resized to before entering the network"),
    ("split_ratio", "fraction of the manifest used for training"),
    ("gabor.ksizes", "kernel extent of each Gabor band, comma separated"),
    ("gabor.sigma_ratio", "envelope sigma as a fraction of the kernel extent"),
    ("gabor.lambda_ratio", "wavelength is sigma divided by this"),
    ("gabor.gamma", "envelope aspect ratio"),
    ("gabor.orientations", "number of evenly spaced orientations"),
    ("bif.window", "side of each candidate patch"),
    ("bif.stride", "grid step between candidate patches"),
    ("bif.stat", "window statistic: mean or max"),
    ("select.k_prime", "boosting rounds"),
    ("select.depth", "maximum depth of each single-feature tree"),
    ("select.bins", "equal-width age classes for selection, 0 for one per age"),
    ("select.max_iou", "largest overlap allowed between kept patches"),
    ("model.stem", "channels of the face stem conv"),
    ("model.down", "channels after the downsampling block"),
    ("model.widths", "channel width of the five stages"),
    ("model.strides", "stride entering each of the five stages"),
    ("model.bottleneck_ratio", "bottleneck width divisor"),
    ("model.patch_channels", "channels each patch stem contributes"),
    ("model.use_patches", "false trains the face-only baseline"),
    ("train.epochs", "training epochs"),
    ("train.batch_size", "samples per SGD step"),
    ("train.lr", "initial learning rate"),
    ("train.lr_drop", "learning-rate multiplier at each drop"),
    ("train.lr_drop_every", "epochs between drops"),
    ("train.momentum", "SGD momentum"),
    ("train.weight_decay", "L2 penalty added to every gradient"),
    ("train.checkpoint_every", "epochs between intermediate checkpoints, 0 for none"),
];

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset("desk").expect("desk preset exists")
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config {
        key: key.into(),
        reason: format!("cannot parse `{v}`"),
    })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Paper-scale settings: full Gabor bank, 1000 boosting rounds over
    /// depth-28 trees, default widths and the 200-epoch schedule.
    pub fn full() -> Self {
        Self {
            face_size: 96,
            patch_size: 24,
            split_ratio: 0.8,
            gabor: GaborBankConfig::default(),
            bif_window: 24,
            bif_stride: 6,
            bif_stat: WindowStat::Mean,
            k_prime: 1000,
            tree_depth: 28,
            select_bins: 0,
            max_iou: 0.5,
            stem: 16,
            down: 32,
            widths: vec![64, 64, 128, 128, 256],
            strides: vec![2, 1, 2, 1, 2],
            bottleneck_ratio: 4,
            patch_channels: 8,
            use_patches: true,
            schedule: TrainSchedule::default(),
            checkpoint_every: 10,
        }
    }

    /// Laptop-scale settings for synthetic experiments.
    pub fn desk() -> Self {
        Self {
            k_prime: 30,
            tree_depth: 6,
            select_bins: 8,
            stem: 8,
            down: 8,
            widths: vec![8, 8, 16, 16, 32],
            bottleneck_ratio: 2,
            patch_channels: 4,
            schedule: TrainSchedule {
                epochs: 20,
                batch_size: 32,
                lr0: 0.05,
                drop_every: 8,
                ..TrainSchedule::default()
            },
            checkpoint_every: 10,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            _ => Err(Error::Config {
                key: "preset".into(),
                reason: format!("unknown preset `{name}` (known: desk, full)"),
            }),
        }
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match key {
            "face_size" => self.face_size = parse(k, v)?,
            "patch_size" => self.patch_size = parse(k, v)?,
            "split_ratio" => self.split_ratio = parse(k, v)?,
            "gabor.ksizes" => self.gabor.ksizes = list(k, v)?,
            "gabor.sigma_ratio" => self.gabor.sigma_ratio = parse(k, v)?,
            "gabor.lambda_ratio" => self.gabor.lambda_ratio = parse(k, v)?,
            "gabor.gamma" => self.gabor.gamma = parse(k, v)?,
            "gabor.orientations" => self.gabor.orientations = parse(k, v)?,
            "bif.window" => self.bif_window = parse(k, v)?,
            "bif.stride" => self.bif_stride = parse(k, v)?,
            "bif.stat" => self.bif_stat = parse(k, v)?,
            "select.k_prime" => self.k_prime = parse(k, v)?,
            "select.depth" => self.tree_depth = parse(k, v)?,
            "select.bins" => self.select_bins = parse(k, v)?,
            "select.max_iou" => self.max_iou = parse(k, v)?,
            "model.stem" => self.stem = parse(k, v)?,
            "model.down" => self.down = parse(k, v)?,
            "model.widths" => self.widths = list(k, v)?,
            "model.strides" => self.strides = list(k, v)?,
            "model.bottleneck_ratio" => self.bottleneck_ratio = parse(k, v)?,
            "model.patch_channels" => self.patch_channels = parse(k, v)?,
            "model.use_patches" => self.use_patches = parse(k, v)?,
            "train.epochs" => self.schedule.epochs = parse(k, v)?,
            "train.batch_size" => self.schedule.batch_size = parse(k, v)?,
            "train.lr" => self.schedule.lr0 = parse(k, v)?,
            "train.lr_drop" => self.schedule.drop_factor = parse(k, v)?,
            "train.lr_drop_every" => self.schedule.drop_every = parse(k, v)?,
            "train.momentum" => self.schedule.momentum = parse(k, v)?,
            "train.weight_decay" => self.schedule.weight_decay = parse(k, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse(k, v)?,
            _ => {
                return Err(Error::Config {
                    key: key.into(),
                    reason: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.schedule;
        Some(match key {
            "face_size" => self.face_size.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "split_ratio" => self.split_ratio.to_string(),
            "gabor.ksizes" => join(&self.gabor.ksizes),
            "gabor.sigma_ratio" => self.gabor.sigma_ratio.to_string(),
            "gabor.lambda_ratio" => self.gabor.lambda_ratio.to_string(),
            "gabor.gamma" => self.gabor.gamma.to_string(),
            "gabor.orientations" => self.gabor.orientations.to_string(),
            "bif.window" => self.bif_window.to_string(),
            "bif.stride" => self.bif_stride.to_string(),
            "bif.stat" => self.bif_stat.to_string(),
            "select.k_prime" => self.k_prime.to_string(),
            "select.depth" => self.tree_depth.to_string(),
            "select.bins" => self.select_bins.to_string(),
            "select.max_iou" => self.max_iou.to_string(),
            "model.stem" => self.stem.to_string(),
            "model.down" => self.down.to_string(),
            "model.widths" => join(&self.widths),
            "model.strides" => join(&self.strides),
            "model.bottleneck_ratio" => self.bottleneck_ratio.to_string(),
            "model.patch_channels" => self.patch_channels.to_string(),
            "model.use_patches" => self.use_patches.to_string(),
            "train.epochs" => s.epochs.to_string(),
            "train.batch_size" => s.batch_size.to_string(),
            "train.lr" => s.lr0.to_string(),
            "train.lr_drop" => s.drop_factor.to_string(),
            "train.lr_drop_every" => s.drop_every.to_string(),
            "train.momentum" => s.momentum.to_string(),
            "train.weight_decay" => s.weight_decay.to_string(),
            "train.checkpoint_every" => self.checkpoint_every.to_string(),
            _ => return None,
        })
    }

    /// Apply `key=value` lines. Blank lines and `#` comments are skipped.
    /// A `preset=NAME` line is only allowed first and resets everything.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut first = true;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_assignment(line)?;
            if k == "preset" {
                if !first {
                    return Err(Error::Config {
                        key: "preset".into(),
                        reason: "must be the first setting".into(),
                    });
                }
                *self = Self::preset(v)?;
            } else {
                self.set(k, v)?;
            }
            first = false;
        }
        Ok(())
    }

    /// Resolve a `--config` argument: a preset name or a settings file.
    pub fn from_arg(arg: &str) -> Result<Self> {
        if let Ok(c) = Self::preset(arg) {
            return Ok(c);
        }
        let text = std::fs::read_to_string(Path::new(arg)).map_err(|e| Error::Config {
            key: "config".into(),
            reason: format!("`{arg}` is not a preset and cannot be read: {e}"),
        })?;
        let mut c = Self::default();
        c.apply_text(&text)?;
        Ok(c)
    }

    /// Apply one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = split_assignment(assignment)?;
        self.set(k, v)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _) in KEYS {
            let _ = writeln!(s, "{k}={}", self.get(k).expect("every listed key has a value"));
        }
        s
    }

    pub fn layout(&self) -> BifLayout {
        BifLayout {
            bands: self.gabor.bands(),
            orientations: self.gabor.orientations,
            face_size: self.face_size,
            window: self.bif_window,
            stride: self.bif_stride,
        }
    }

    /// Network description for the given class labels.
    pub fn fusion_config(&self, labels: Vec<u32>) -> Result<FusionConfig> {
        if self.widths.len() != self.strides.len() {
            return Err(Error::Config {
                key: "model.strides".into(),
                reason: format!("{} strides for {} widths", self.strides.len(), self.widths.len()),
            });
        }
        let c = FusionConfig {
            labels,
            face_size: self.face_size,
            stem_channels: self.stem,
            down_channels: self.down,
            stages: self
                .widths
                .iter()
                .zip(&self.strides)
                .map(|(&width, &stride)| StageSpec { width, stride })
                .collect(),
            bottleneck_ratio: self.bottleneck_ratio,
            patch_size: self.patch_size,
            patch_channels: self.patch_channels,
            use_patches: self.use_patches,
            patch_specs: Vec::new(),
        };
        c.validate()?;
        Ok(c)
    }

    /// Cross-field checks that do not need data.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split_ratio", "must lie strictly between 0 and 1");
        }
        if !(0.0..=1.0).contains(&self.max_iou) {
            return bad("select.max_iou", "must lie in [0, 1]");
        }
        if self.k_prime == 0 {
            return bad("select.k_prime", "must be at least 1");
        }
        if self.tree_depth == 0 {
            return bad("select.depth", "must be at least 1");
        }
        self.layout().validate()?;
        self.schedule.validate()?;
        self.fusion_config(vec![1, 2])?;
        Ok(())
    }
}

fn split_assignment(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::Config {
            key: s.trim().into(),
            reason: "expected key=value".into(),
        })
}
