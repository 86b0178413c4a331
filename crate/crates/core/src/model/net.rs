use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::FusionConfig;
use crate::error::{dim_err, Result};
use crate::nn::{Bottleneck, Conv2d, Linear, Mode, ParamStore, PreActConv, Session};
use crate::tensor::{Tensor, Var};

/// Maps one grayscale patch to a small feature map at its stage's resolution.
#[derive(Clone, Debug)]
pub struct PatchStem {
    pub conv: Conv2d,
    pub halvings: Vec<PreActConv>,
}

impl PatchStem {
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let mut y = self.conv.forward(s, x)?;
        for h in &self.halvings {
            y = h.forward(s, y)?;
        }
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct Stage {
    /// Strided bottleneck used when the stage changes width or resolution.
    pub transition: Option<Bottleneck>,
    /// Pre-activated 1×1 conv back to stage width, folding in the patch
    /// features when present. Absent in the last stage.
    pub reduce: Option<PreActConv>,
    pub block: Bottleneck,
}

/// Layer graph of a fusion network. Parameters live in a separate
/// [`ParamStore`] so a session can borrow them mutably while the layers are
/// borrowed shared.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub stem: Conv2d,
    pub down: Bottleneck,
    pub patch_stems: Vec<PatchStem>,
    pub stages: Vec<Stage>,
    pub head: Linear,
}

/// A fusion network: configuration, layers and parameters.
#[derive(Clone, Debug)]
pub struct FusionNet {
    pub config: FusionConfig,
    pub arch: Architecture,
    pub params: ParamStore,
}

impl FusionNet {
    /// Build with parameters drawn deterministically from `seed`. All
    /// values are rounded to `f32` so checkpoints reload bit-exactly.
    pub fn build(config: &FusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let st = &mut store;
        let ratio = config.bottleneck_ratio;
        let stem = Conv2d::new(st, "stem", 1, config.stem_channels, 3, 1, false, &mut rng)?;
        let down = Bottleneck::new(st, "down", config.stem_channels, config.down_channels, 2, ratio, &mut rng)?;

        let mut patch_stems = Vec::new();
        if config.use_patches {
            for (i, &h) in config.patch_halvings()?.iter().enumerate() {
                let name = format!("patch{}", i + 1);
                let c = config.patch_channels;
                let conv = Conv2d::new(st, &format!("{name}.conv"), 1, c, 3, 1, false, &mut rng)?;
                let halvings = (0..h)
                    .map(|j| PreActConv::new(st, &format!("{name}.half{j}"), c, c, 3, 2, &mut rng))
                    .collect::<Result<_>>()?;
                patch_stems.push(PatchStem { conv, halvings });
            }
        }

        let mut stages = Vec::new();
        let mut width = config.down_channels;
        let last = config.stages.len();
        for (i, spec) in config.stages.iter().enumerate() {
            let n = i + 1;
            let transition = if spec.stride != 1 || spec.width != width {
                let t = Bottleneck::new(st, &format!("transition{n}"), width, spec.width, spec.stride, ratio, &mut rng)?;
                width = spec.width;
                Some(t)
            } else {
                None
            };
            let extra = if config.use_patches { config.patch_channels } else { 0 };
            // the last stage keeps any patch channels all the way to pooling
            let (reduce, block_width) = if n == last {
                (None, width + extra)
            } else {
                let r = PreActConv::new(st, &format!("reduce{n}"), width + extra, width, 1, 1, &mut rng)?;
                (Some(r), width)
            };
            let block = Bottleneck::new(st, &format!("block{n}"), block_width, block_width, 1, ratio, &mut rng)?;
            stages.push(Stage { transition, reduce, block });
        }
        let head = Linear::new(st, "fc", config.feature_width(), config.classes(), &mut rng)?;
        store.round_to_f32();
        Ok(Self {
            config: config.clone(),
            arch: Architecture {
                stem,
                down,
                patch_stems,
                stages,
                head,
            },
            params: store,
        })
    }

    /// Eval-mode logits `[N, classes]` for a batch of faces and patches.
    pub fn infer(&mut self, faces: &Tensor, patches: &[Tensor]) -> Result<Tensor> {
        let mut s = Session::new(&mut self.params, Mode::Eval);
        let f = s.graph.constant(faces.clone());
        let p: Vec<Var> = patches.iter().map(|t| s.graph.constant(t.clone())).collect();
        let y = self.arch.forward(&self.config, &mut s, f, &p)?;
        Ok(s.graph.value(y).clone())
    }
}

impl Architecture {
    /// Logits for faces `[N,1,F,F]` and, unless the model is a baseline, one
    /// `[N,1,P,P]` batch per stage in rank order.
    pub fn forward(&self, config: &FusionConfig, s: &mut Session, face: Var, patches: &[Var]) -> Result<Var> {
        let fs = s.graph.value(face).shape().to_vec();
        let f = config.face_size;
        if fs.len() != 4 || fs[1..] != [1, f, f] {
            return dim_err(format!("expected faces [N,1,{f},{f}], got {fs:?}"));
        }
        let n = fs[0];
        if patches.len() != self.patch_stems.len() {
            return dim_err(format!(
                "model takes {} patch inputs, got {}",
                self.patch_stems.len(),
                patches.len()
            ));
        }
        for (i, &p) in patches.iter().enumerate() {
            let ps = s.graph.value(p).shape();
            let q = config.patch_size;
            if ps != [n, 1, q, q] {
                return dim_err(format!("patch {} must be [{n},1,{q},{q}], got {ps:?}", i + 1));
            }
        }

        let x = self.stem.forward(s, face)?;
        let mut x = self.down.forward(s, x)?;
        for (i, stage) in self.stages.iter().enumerate() {
            if let Some(t) = &stage.transition {
                x = t.forward(s, x)?;
            }
            if let Some(stem) = self.patch_stems.get(i) {
                let p = stem.forward(s, patches[i])?;
                x = s.graph.concat_channels(&[x, p])?;
            }
            if let Some(r) = &stage.reduce {
                x = r.forward(s, x)?;
            }
            x = stage.block.forward(s, x)?;
        }
        let pooled = s.graph.global_avg_pool(x)?;
        self.head.forward(s, pooled)
    }
}
