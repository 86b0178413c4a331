//! End-to-end steps behind the command-line driver: patch selection,
//! training, evaluation and single-image prediction.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::bif::{read_cache, write_cache, BifExtractor, BifVector, FeatureSpec, PatchRect};
use crate::config::RunConfig;
use crate::data::{load_and_preprocess, load_faces, split, Manifest, SampleSet, Split};
use crate::error::{contract_err, Error, Result};
use crate::model::{FusionConfig, FusionNet, TrainMeta};
use crate::select::{
    read_patches_csv, select_features, top_patches, BoostData, ClassMap, RankedPatch, SelectionResult,
};
use crate::tensor::Tensor;
use crate::train::{apply_head, evaluate, train, write_train_log, EpochLog, EvalReport, Head, TrainSchedule};

/// Number of patches, one per network stage.
pub const PATCHES: usize = FusionConfig::STAGES;

/// Train/test partition of a manifest for `seed`.
pub fn split_manifest(cfg: &RunConfig, manifest: &Manifest, seed: u64) -> Result<Split> {
    split(manifest.len(), cfg.split_ratio, seed)
}

#[derive(Clone, Debug)]
pub struct SelectOutcome {
    pub selection: SelectionResult,
    pub patches: Vec<RankedPatch>,
}

pub fn extractor(cfg: &RunConfig) -> Result<BifExtractor> {
    BifExtractor::new(&cfg.gabor, cfg.layout(), cfg.bif_stat)
}

/// Boost over precomputed feature vectors and keep the top patches.
pub fn select_from_bif(cfg: &RunConfig, bif: &[BifVector], ages: &[u32]) -> Result<SelectOutcome> {
    let classes = if cfg.select_bins == 0 {
        ClassMap::distinct(ages)
    } else {
        ClassMap::binned(ages, cfg.select_bins)?
    };
    let y = classes.classes_of(ages)?;
    let rows: Vec<Vec<f64>> = bif.iter().map(|v| v.values.clone()).collect();
    let data = BoostData::from_rows(&rows)?;
    let k_prime = cfg.k_prime.min(data.features());
    let selection = select_features(&data, &y, classes.len(), k_prime, cfg.tree_depth)?;
    let patches = top_patches(&selection, &cfg.layout(), PATCHES, cfg.max_iou)?;
    Ok(SelectOutcome { selection, patches })
}

/// Feature vectors for `faces`, read from `cache` when it holds exactly
/// this many vectors of the right length, and written to it otherwise.
pub fn bif_vectors(cfg: &RunConfig, faces: &[Tensor], cache: Option<&Path>) -> Result<Vec<BifVector>> {
    let k = cfg.layout().len();
    if let Some(path) = cache.filter(|p| p.exists()) {
        let v = read_cache(BufReader::new(File::open(path)?), k)?;
        if v.len() == faces.len() {
            return Ok(v);
        }
    }
    let v = extractor(cfg)?.extract_all(faces)?;
    if let Some(path) = cache {
        write_cache(BufWriter::new(File::create(path)?), k, &v)?;
    }
    Ok(v)
}

/// Select patches from the training split of a manifest.
///
/// A cache holds the vectors of every manifest face, so one file serves
/// every seed's split.
pub fn run_select(cfg: &RunConfig, manifest: &Manifest, seed: u64, cache: Option<&Path>) -> Result<SelectOutcome> {
    cfg.validate()?;
    let sp = split_manifest(cfg, manifest, seed)?;
    let train_ages = manifest.subset(&sp.train).ages();
    let bif = match cache {
        Some(path) => {
            let all = bif_vectors(cfg, &load_faces(manifest, cfg.face_size)?, Some(path))?;
            sp.train.iter().map(|&i| all[i].clone()).collect()
        }
        None => bif_vectors(cfg, &load_faces(&manifest.subset(&sp.train), cfg.face_size)?, None)?,
    };
    select_from_bif(cfg, &bif, &train_ages)
}

/// Sorted distinct ages.
pub fn labels_of(ages: &[u32]) -> Vec<u32> {
    let mut l = ages.to_vec();
    l.sort_unstable();
    l.dedup();
    l
}

pub fn rects_of(specs: &[FeatureSpec]) -> Vec<PatchRect> {
    specs.iter().map(|s| s.rect).collect()
}

/// Build and train a network on `data` with labels taken from its ages.
pub fn train_model(
    cfg: &RunConfig,
    data: &SampleSet,
    specs: &[FeatureSpec],
    seed: u64,
    on_epoch: impl FnMut(&EpochLog, &FusionNet) -> Result<()>,
) -> Result<(FusionNet, Vec<EpochLog>)> {
    let mut fc = cfg.fusion_config(labels_of(&data.ages))?;
    if cfg.use_patches {
        if specs.len() != PATCHES {
            return contract_err(format!("need {PATCHES} patch specs, got {}", specs.len()));
        }
        fc.patch_specs = specs.to_vec();
        fc.validate()?;
    }
    let mut net = FusionNet::build(&fc, seed)?;
    let schedule = TrainSchedule {
        seed,
        ..cfg.schedule.clone()
    };
    let log = train(&mut net, data, &schedule, on_epoch)?;
    // snap to the stored precision so the returned model is the checkpoint
    net.params.round_to_f32();
    Ok((net, log))
}

/// `dir/stem.suffix` next to `path`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn read_patch_specs(path: &Path) -> Result<Vec<FeatureSpec>> {
    let f = File::open(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let recs = read_patches_csv(BufReader::new(f))?;
    if recs.len() != PATCHES {
        return contract_err(format!("{} lists {} patches, need {PATCHES}", path.display(), recs.len()));
    }
    Ok(recs.into_iter().map(|r| r.spec).collect())
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub net: FusionNet,
    pub log: Vec<EpochLog>,
    /// Expected-age head on the held-out split.
    pub report: EvalReport,
}

/// Train on the seed's training split, then write the checkpoint, the
/// epoch log (`<stem>.train.csv`) and the held-out report (`<stem>.eval.csv`).
pub fn run_train(
    cfg: &RunConfig,
    manifest: &Manifest,
    specs: &[FeatureSpec],
    out: &Path,
    seed: u64,
) -> Result<TrainRun> {
    cfg.validate()?;
    let sp = split_manifest(cfg, manifest, seed)?;
    let rects = if cfg.use_patches { rects_of(specs) } else { Vec::new() };
    let train_set = SampleSet::load(&manifest.subset(&sp.train), cfg.face_size, &rects, cfg.patch_size)?;
    let every = cfg.checkpoint_every;
    let (mut net, log) = train_model(cfg, &train_set, specs, seed, |line, net| {
        let done = line.epoch + 1;
        if every > 0 && done % every == 0 && done < cfg.schedule.epochs {
            let meta = TrainMeta {
                epoch: done as u64,
                seed,
                learning_rate: line.lr,
            };
            net.clone().save(&sidecar(out, &format!("epoch{done}.fusn")), &meta)?;
        }
        Ok(())
    })?;
    let meta = TrainMeta {
        epoch: log.len() as u64,
        seed,
        learning_rate: log.last().map_or(cfg.schedule.lr0, |l| l.lr),
    };
    net.save(out, &meta)?;
    write_train_log(BufWriter::new(File::create(sidecar(out, "train.csv"))?), &log)?;
    let test_set = SampleSet::load(&manifest.subset(&sp.test), cfg.face_size, &rects, cfg.patch_size)?;
    let report = evaluate(&mut net, &test_set, Head::Reg)?;
    report.write_csv(BufWriter::new(File::create(sidecar(out, "eval.csv"))?))?;
    Ok(TrainRun { net, log, report })
}

/// Which records of a manifest to evaluate on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    All,
    /// The training or held-out part of the split made with the seed stored
    /// in the checkpoint.
    Train,
    Test,
}

impl std::str::FromStr for EvalSplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            _ => Err(Error::Config {
                key: "split".into(),
                reason: format!("`{s}` is not one of all, train, test"),
            }),
        }
    }
}

/// Check requested patch specs against those stored in the network.
pub fn check_specs(net: &FusionNet, requested: Option<&[FeatureSpec]>) -> Result<()> {
    match requested {
        Some(r) if net.config.use_patches && r != net.config.patch_specs.as_slice() => contract_err(format!(
            "patch specs {r:?} differ from the {:?} the model was trained with",
            net.config.patch_specs
        )),
        _ => Ok(()),
    }
}

pub fn run_eval(
    cfg: &RunConfig,
    model: &Path,
    manifest: &Manifest,
    head: Head,
    which: EvalSplit,
    specs: Option<&[FeatureSpec]>,
) -> Result<EvalReport> {
    let (mut net, meta) = FusionNet::load(model)?;
    check_specs(&net, specs)?;
    let records = match which {
        EvalSplit::All => manifest.clone(),
        EvalSplit::Train => manifest.subset(&split_manifest(cfg, manifest, meta.seed)?.train),
        EvalSplit::Test => manifest.subset(&split_manifest(cfg, manifest, meta.seed)?.test),
    };
    let c = &net.config;
    let rects = if c.use_patches { rects_of(&c.patch_specs) } else { Vec::new() };
    let data = SampleSet::load(&records, c.face_size, &rects, c.patch_size)?;
    evaluate(&mut net, &data, head)
}

pub fn run_predict(model: &Path, image: &Path, head: Head, specs: Option<&[FeatureSpec]>) -> Result<f64> {
    let (mut net, _) = FusionNet::load(model)?;
    check_specs(&net, specs)?;
    let c = net.config.clone();
    let face = load_and_preprocess(image, c.face_size)?;
    let rects = if c.use_patches { rects_of(&c.patch_specs) } else { Vec::new() };
    let data = SampleSet::from_faces(vec![face], vec![1], &rects, c.patch_size)?;
    let logits = crate::train::predict_logits(&mut net, &data)?;
    Ok(apply_head(&logits, &c.labels, head)?[0])
}
