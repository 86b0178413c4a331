//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "FUSN" | version u32 | config_len u32 | config text
//! epoch u64 | seed u64 | lr f64 | record_count u32
//! record*: name_len u32 | name | kind u8 | ndim u32 | dims u64* |
//!          f32 values | sha256 of the value bytes (32 bytes)
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::FusionConfig;
use super::net::FusionNet;
use crate::error::{Error, Result};
use crate::nn::ParamKind;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FUSN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training state stored next to the parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainMeta {
    pub epoch: u64,
    pub seed: u64,
    pub learning_rate: f64,
}

/// One parameter as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRecord {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    /// Raw little-endian `f32` bytes.
    pub blob: Vec<u8>,
    pub digest: [u8; 32],
}

impl CheckpointRecord {
    pub fn values(&self) -> Vec<f64> {
        self.blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointContents {
    pub version: u32,
    pub config_text: String,
    pub meta: TrainMeta,
    pub records: Vec<CheckpointRecord>,
}

pub fn encode_checkpoint(net: &FusionNet, meta: &TrainMeta) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let text = net.config.to_text();
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&meta.epoch.to_le_bytes());
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&meta.learning_rate.to_le_bytes());
    let entries = net.params.entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(match e.kind {
            ParamKind::Trainable => 0,
            ParamKind::Buffer => 1,
        });
        out.extend_from_slice(&(e.value.ndim() as u32).to_le_bytes());
        for &d in e.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let start = out.len();
        for &v in e.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let digest = Sha256::digest(&out[start..]);
        out.extend_from_slice(&digest);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("checkpoint truncated while reading {what}")));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<CheckpointContents> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = c.u32("config length")? as usize;
    let config_text = std::str::from_utf8(c.take(len, "config")?)
        .map_err(|_| Error::Format("config text is not UTF-8".into()))?
        .to_string();
    let meta = TrainMeta {
        epoch: c.u64("epoch")?,
        seed: c.u64("seed")?,
        learning_rate: f64::from_bits(c.u64("learning rate")?),
    };
    let count = c.u32("record count")? as usize;
    let mut records = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let kind = match c.take(1, "kind")?[0] {
            0 => ParamKind::Trainable,
            1 => ParamKind::Buffer,
            k => return Err(Error::Format(format!("`{name}`: unknown kind {k}"))),
        };
        let ndim = c.u32("rank")? as usize;
        let shape = (0..ndim)
            .map(|_| c.u64("shape").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("`{name}`: absurd shape {shape:?}")))?;
        let blob = c.take(numel, "values")?.to_vec();
        let digest: [u8; 32] = c.take(32, "digest")?.try_into().unwrap();
        if Sha256::digest(&blob).as_slice() != digest {
            return Err(Error::Format(format!("`{name}`: checksum mismatch")));
        }
        records.push(CheckpointRecord {
            name,
            kind,
            shape,
            blob,
            digest,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(CheckpointContents {
        version,
        config_text,
        meta,
        records,
    })
}

impl FusionNet {
    /// Rebuild a network from checkpoint bytes. Nothing is returned unless
    /// every parameter is present exactly once with the right shape.
    pub fn from_checkpoint(bytes: &[u8]) -> Result<(Self, TrainMeta)> {
        let contents = decode_checkpoint(bytes)?;
        let config = FusionConfig::from_text(&contents.config_text)?;
        let mut net = FusionNet::build(&config, 0)?;
        if contents.records.len() != net.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, model expects {}",
                contents.records.len(),
                net.params.len()
            )));
        }
        let mut seen = vec![false; net.params.len()];
        for r in &contents.records {
            let id = net
                .params
                .find(&r.name)
                .ok_or_else(|| Error::Format(format!("unknown parameter `{}`", r.name)))?;
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(Error::Format(format!("parameter `{}` stored twice", r.name)));
            }
            let entry = &mut net.params.entries_mut()[id.index()];
            if entry.kind != r.kind || entry.value.shape() != r.shape.as_slice() {
                return Err(Error::Format(format!(
                    "`{}`: stored {:?} {:?}, model has {:?} {:?}",
                    r.name,
                    r.kind,
                    r.shape,
                    entry.kind,
                    entry.value.shape()
                )));
            }
            entry.value.data_mut().copy_from_slice(&r.values());
        }
        Ok((net, contents.meta))
    }

    /// Round parameters to `f32` (the stored precision) and write them, so
    /// the in-memory and reloaded models agree exactly.
    pub fn save(&mut self, path: &Path, meta: &TrainMeta) -> Result<()> {
        self.params.round_to_f32();
        let bytes = encode_checkpoint(self, meta);
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, TrainMeta)> {
        Self::from_checkpoint(&std::fs::read(path)?)
    }
}
