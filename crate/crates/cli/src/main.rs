use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use fusionnet::config::RunConfig;
use fusionnet::data::{synth_dataset, Manifest, SynthConfig};
use fusionnet::pipeline::{self, EvalSplit};
use fusionnet::select::write_patches_csv;
use fusionnet::train::Head;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Facial age estimation with patch-fusion networks.
#[derive(Parser)]
#[command(name = "fusionnet", version)]
struct Cli {
    /// Worker threads for parallel stages. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic face dataset and its manifest.csv.
    Synth {
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Pick the most age-informative patches from the training split.
    Select {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Patch CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Reuse (or create) a cache of every manifest face's Gabor features.
        #[arg(long)]
        bif_cache: Option<PathBuf>,
    },
    /// Train a network on the training split and score the held-out split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Patch CSV from `select`; not needed with model.use_patches=false.
        #[arg(long)]
        patches: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to write; logs and the held-out report go next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a labelled manifest and print the report CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "reg")]
        head: Head,
        /// `all`, or the `train` / `test` part of the split made with the
        /// checkpoint's seed and the configured split ratio.
        #[arg(long, default_value = "all")]
        split: EvalSplit,
        /// Fail unless the checkpoint was trained on these patches.
        #[arg(long)]
        patches: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-sample predictions here.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Print the predicted age of one aligned face image.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Fail unless the checkpoint was trained on these patches.
        #[arg(long)]
        patches: Option<PathBuf>,
        #[arg(long, default_value = "reg")]
        head: Head,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Preset name (`desk`, `full`) or a file of key=value lines.
    #[arg(long, default_value = "desk")]
    config: String,
    /// Override one setting; repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_arg(&self.config)?;
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::load(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .context("starting worker threads")?;

    match cli.command {
        Command::Synth { count, seed, out_dir } => {
            let m = synth_dataset(&SynthConfig::new(count as usize, seed), &out_dir)?;
            eprintln!("wrote {} faces to {}", m.len(), out_dir.display());
        }
        Command::Select {
            manifest,
            run,
            out,
            bif_cache,
        } => {
            let cfg = run.resolve()?;
            let m = load_manifest(&manifest)?;
            let sel = pipeline::run_select(&cfg, &m, run.seed, bif_cache.as_deref())?;
            if let Some(why) = &sel.selection.stopped_early {
                eprintln!("boosting stopped early: {why}");
            }
            write_patches_csv(BufWriter::new(File::create(&out)?), &sel.patches)?;
            eprintln!(
                "{} boosting rounds, {} patches written to {}",
                sel.selection.rounds.len(),
                sel.patches.len(),
                out.display()
            );
        }
        Command::Train {
            manifest,
            patches,
            run,
            out,
        } => {
            let cfg = run.resolve()?;
            let m = load_manifest(&manifest)?;
            let specs = match &patches {
                Some(p) => pipeline::read_patch_specs(p)?,
                None if cfg.use_patches => anyhow::bail!("--patches is required unless model.use_patches=false"),
                None => Vec::new(),
            };
            let r = pipeline::run_train(&cfg, &m, &specs, &out, run.seed)?;
            if let Some(last) = r.log.last() {
                eprintln!("epoch {} loss {:.4} lr {}", last.epoch, last.loss, last.lr);
            }
            eprintln!(
                "held-out MAE {:.3} over {} faces; checkpoint {}",
                r.report.mae,
                r.report.samples,
                out.display()
            );
        }
        Command::Eval {
            model,
            manifest,
            head,
            split,
            patches,
            run,
            out,
            predictions,
        } => {
            let cfg = run.resolve()?;
            let m = load_manifest(&manifest)?;
            let specs = patches.as_deref().map(pipeline::read_patch_specs).transpose()?;
            let report = pipeline::run_eval(&cfg, &model, &m, head, split, specs.as_deref())?;
            let stdout = std::io::stdout();
            report.write_csv(stdout.lock())?;
            if let Some(path) = out {
                report.write_csv(BufWriter::new(File::create(path)?))?;
            }
            if let Some(path) = predictions {
                report.write_predictions_csv(BufWriter::new(File::create(path)?))?;
            }
        }
        Command::Predict {
            model,
            image,
            patches,
            head,
        } => {
            let specs = patches.as_deref().map(pipeline::read_patch_specs).transpose()?;
            let age = pipeline::run_predict(&model, &image, head, specs.as_deref())?;
            let mut so = std::io::stdout().lock();
            match head {
                Head::Reg => writeln!(so, "{age:.4}")?,
                Head::Cls => writeln!(so, "{}", age as u32)?,
            }
        }
    }
    Ok(())
}
