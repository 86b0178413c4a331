use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract_err, Error, Result};

/// One labelled image. `path` is kept as written in the manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub path: PathBuf,
    pub age: u32,
}

/// A list of labelled images plus the directory relative paths resolve
/// against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<Record>) -> Result<Self> {
        let m = Self {
            root: root.into(),
            records,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.age == 0 {
                return Err(Error::Format(format!("{}: age must be positive", r.path.display())));
            }
            if !seen.insert(&r.path) {
                return Err(Error::Format(format!("{}: listed twice", r.path.display())));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ages(&self) -> Vec<u32> {
        self.records.iter().map(|r| r.age).collect()
    }

    pub fn resolve(&self, r: &Record) -> PathBuf {
        self.root.join(&r.path)
    }

    /// Records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            root: self.root.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn read(r: impl Read, root: impl Into<PathBuf>) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        if rd.headers()?.iter().collect::<Vec<_>>() != ["path", "age"] {
            return Err(Error::Format("manifest header must be `path,age`".into()));
        }
        let mut records = Vec::new();
        for (line, row) in rd.records().enumerate() {
            let row = row?;
            let bad = |what: &str| Error::Format(format!("manifest row {}: {what}", line + 1));
            let path = row.get(0).filter(|p| !p.is_empty()).ok_or_else(|| bad("empty path"))?;
            let age = row
                .get(1)
                .and_then(|a| a.trim().parse().ok())
                .ok_or_else(|| bad("age is not a whole number"))?;
            records.push(Record {
                path: path.into(),
                age,
            });
        }
        Self::new(root, records)
    }

    pub fn write(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["path", "age"])?;
        for r in &self.records {
            let path = r.path.to_str().ok_or_else(|| {
                Error::Format(format!("{}: path is not UTF-8", r.path.display()))
            })?;
            wr.write_record([path, &r.age.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Read a manifest file; its paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let root = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let f = std::fs::File::open(path).map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::read(std::io::BufReader::new(f), root)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Disjoint train/test indices into a manifest, each in manifest order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle `0..m` with `seed` and send the first `⌈ratio·m⌉` to training.
pub fn split(m: usize, ratio: f64, seed: u64) -> Result<Split> {
    if m < 2 {
        return contract_err(format!("cannot split {m} records"));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return contract_err(format!("split ratio {ratio} outside (0, 1]"));
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // guard against 0.8·10 landing a hair above 8
    let n_train = ((ratio * m as f64) - 1e-9).ceil() as usize;
    let (train, test) = idx.split_at(n_train.min(m));
    let (mut train, mut test) = (train.to_vec(), test.to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}
