//! SGD training with a step learning-rate schedule, and evaluation by mean
//! absolute error and cumulative score.

mod metrics;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use metrics::{cs, mae, read_report_csv, EvalReport, ReportSummary, CS_LEVELS};

use crate::data::SampleSet;
use crate::error::{contract_err, Error, Result};
use crate::model::{predict_classification, predict_regression, FusionNet};
use crate::nn::{sgd_step, Mode, OptimizerState, Session};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Multiplier applied every `drop_every` epochs.
    pub drop_factor: f64,
    pub drop_every: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            lr0: 0.1,
            drop_factor: 0.1,
            drop_every: 50,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr", "must be positive");
        }
        if !(self.drop_factor > 0.0 && self.drop_factor <= 1.0) {
            return bad("lr_drop", "must lie in (0, 1]");
        }
        if self.drop_every == 0 {
            return bad("lr_drop_every", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay", "must be non-negative");
        }
        Ok(())
    }

    /// `lr0 · drop^⌊epoch / drop_every⌋`. Dividing by the inverse factor
    /// keeps decimal schedules exact (0.1 → 0.01 → 0.001).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = (epoch / self.drop_every) as i32;
        self.lr0 / (1.0 / self.drop_factor).powi(k)
    }

    pub fn batches_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }

    /// Visiting order of the training samples in `epoch`.
    pub fn epoch_order(&self, samples: usize, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        let mut idx: Vec<usize> = (0..samples).collect();
        idx.shuffle(&mut rng);
        idx
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sample cross-entropy over the epoch.
    pub loss: f64,
    pub lr: f64,
}

pub fn write_train_log(w: impl Write, log: &[EpochLog]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["epoch", "loss", "lr"])?;
    for e in log {
        wr.write_record([e.epoch.to_string(), format!("{:?}", e.loss), format!("{:?}", e.lr)])?;
    }
    wr.flush()?;
    Ok(())
}

/// Class index of every age in the network's label list.
pub fn class_targets(net: &FusionNet, ages: &[u32]) -> Result<Vec<usize>> {
    ages.iter()
        .map(|a| {
            net.config.labels.binary_search(a).map_err(|_| {
                Error::Contract(format!("age {a} is not one of the network's {} labels", net.config.labels.len()))
            })
        })
        .collect()
}

fn check_patches(net: &FusionNet, data: &SampleSet) -> Result<()> {
    let c = &net.config;
    if !c.use_patches {
        return Ok(());
    }
    if data.patch_size != c.patch_size {
        return contract_err(format!(
            "patches are {}×{0} but the network takes {}×{1}",
            data.patch_size, c.patch_size
        ));
    }
    if !c.patch_specs.is_empty() {
        let want: Vec<_> = c.patch_specs.iter().map(|s| s.rect).collect();
        if want != data.rects {
            return contract_err(format!(
                "network was trained on patches {want:?}, data was cropped at {:?}",
                data.rects
            ));
        }
    }
    Ok(())
}

/// Fit `net` to `data` with softmax cross-entropy and momentum SGD.
///
/// `on_epoch` runs after every epoch with the log line so far; returning
/// an error stops training.
pub fn train(
    net: &mut FusionNet,
    data: &SampleSet,
    schedule: &TrainSchedule,
    mut on_epoch: impl FnMut(&EpochLog, &FusionNet) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    schedule.validate()?;
    check_patches(net, data)?;
    if data.is_empty() {
        return contract_err("no training samples");
    }
    let targets = class_targets(net, &data.ages)?;
    let mut opt = OptimizerState::new(&net.params, schedule.lr0, schedule.momentum, schedule.weight_decay);
    let mut log = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        opt.learning_rate = schedule.lr_at(epoch);
        let order = schedule.epoch_order(data.len(), epoch);
        let mut total = 0.0;
        for (b, idx) in order.chunks(schedule.batch_size).enumerate() {
            let batch = data.batch(idx)?;
            let t: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let FusionNet { config, arch, params } = net;
            let mut s = Session::new(params, Mode::Train);
            let faces = s.graph.constant(batch.faces);
            let patches: Vec<_> = if config.use_patches {
                batch.patches.into_iter().map(|p| s.graph.constant(p)).collect()
            } else {
                Vec::new()
            };
            let logits = arch.forward(config, &mut s, faces, &patches)?;
            let loss = s.graph.softmax_cross_entropy(logits, &t)?;
            let value = s.graph.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            s.graph.backward(loss)?;
            let grads = s.gradients();
            drop(s);
            sgd_step(params, &grads, &mut opt)?;
            total += value * idx.len() as f64;
        }
        let line = EpochLog {
            epoch,
            loss: total / data.len() as f64,
            lr: opt.learning_rate,
        };
        log.push(line);
        on_epoch(&line, net)?;
    }
    Ok(log)
}

/// How logits become an age.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Label of the largest logit.
    Cls,
    /// Expected age under the clamped softmax.
    Reg,
}

impl std::str::FromStr for Head {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Self::Cls),
            "reg" => Ok(Self::Reg),
            _ => Err(Error::Config {
                key: "head".into(),
                reason: format!("`{s}` is neither `cls` nor `reg`"),
            }),
        }
    }
}

impl std::fmt::Display for Head {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cls => "cls",
            Self::Reg => "reg",
        })
    }
}

pub const EVAL_BATCH: usize = 64;

/// Eval-mode logits for every sample, one row each, in sample order.
pub fn predict_logits(net: &mut FusionNet, data: &SampleSet) -> Result<Vec<Vec<f64>>> {
    check_patches(net, data)?;
    let classes = net.config.classes();
    let all: Vec<usize> = (0..data.len()).collect();
    let mut rows = Vec::with_capacity(data.len());
    for idx in all.chunks(EVAL_BATCH) {
        let batch = data.batch(idx)?;
        let patches = if net.config.use_patches { batch.patches } else { Vec::new() };
        let logits = net.infer(&batch.faces, &patches)?;
        rows.extend(logits.data().chunks(classes).map(<[f64]>::to_vec));
    }
    Ok(rows)
}

pub fn apply_head(logits: &[Vec<f64>], labels: &[u32], head: Head) -> Result<Vec<f64>> {
    logits
        .iter()
        .map(|row| match head {
            Head::Cls => predict_classification(row, labels).map(f64::from),
            Head::Reg => predict_regression(row, labels),
        })
        .collect()
}

pub fn evaluate(net: &mut FusionNet, data: &SampleSet, head: Head) -> Result<EvalReport> {
    let logits = predict_logits(net, data)?;
    let pred = apply_head(&logits, &net.config.labels, head)?;
    EvalReport::new(pred, data.ages.clone())
}
