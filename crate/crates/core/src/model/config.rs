use std::fmt::Write as _;

use crate::bif::{FeatureSpec, PatchRect};
use crate::error::{Error, Result};

/// One main-path stage: width and the stride of the transition into it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub width: usize,
    pub stride: usize,
}

/// Full architectural description of a fusion network.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    /// Ordered distinct class ages; the network has one logit per label.
    pub labels: Vec<u32>,
    pub face_size: usize,
    pub stem_channels: usize,
    /// Width after the stride-2 downsampling block that follows the stem.
    pub down_channels: usize,
    pub stages: Vec<StageSpec>,
    pub bottleneck_ratio: usize,
    pub patch_size: usize,
    pub patch_channels: usize,
    /// Feed one selected patch into each stage. `false` gives the
    /// face-only baseline.
    pub use_patches: bool,
    /// Patches the network was trained on, in stage order. Empty until a
    /// selection has been attached.
    pub patch_specs: Vec<FeatureSpec>,
}

impl FusionConfig {
    pub const STAGES: usize = 5;

    /// Default widths with labels `ages`.
    pub fn with_labels(labels: Vec<u32>) -> Self {
        Self {
            labels,
            face_size: 96,
            stem_channels: 16,
            down_channels: 32,
            stages: [(64, 2), (64, 1), (128, 2), (128, 1), (256, 2)]
                .into_iter()
                .map(|(width, stride)| StageSpec { width, stride })
                .collect(),
            bottleneck_ratio: 4,
            patch_size: 24,
            patch_channels: 8,
            use_patches: true,
            patch_specs: Vec::new(),
        }
    }

    pub fn baseline(&self) -> Self {
        Self {
            use_patches: false,
            ..self.clone()
        }
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    /// Spatial extent of each stage, after its transition.
    pub fn stage_resolutions(&self) -> Vec<usize> {
        let mut res = (self.face_size + 1) / 2;
        self.stages
            .iter()
            .map(|s| {
                res = (res - 1) / s.stride + 1;
                res
            })
            .collect()
    }

    /// Number of stride-2 halvings each patch stem needs to reach its
    /// stage's resolution.
    pub fn patch_halvings(&self) -> Result<Vec<usize>> {
        self.stage_resolutions()
            .iter()
            .enumerate()
            .map(|(i, &res)| {
                let mut size = self.patch_size;
                let mut h = 0;
                while size > res {
                    size = (size - 1) / 2 + 1;
                    h += 1;
                }
                if size != res {
                    return Err(Error::Dimension(format!(
                        "patch stem {} cannot bring a {}×{0} patch to the {res}×{res} map of stage {}",
                        i + 1,
                        self.patch_size,
                        i + 1
                    )));
                }
                Ok(h)
            })
            .collect()
    }

    /// Channel count of the final stage's output, which feeds the classifier.
    pub fn feature_width(&self) -> usize {
        let last = self.stages.last().map_or(0, |s| s.width);
        if self.use_patches {
            last + self.patch_channels
        } else {
            last
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| Err(Error::Config { key: key.into(), reason });
        if self.labels.is_empty() || self.labels.windows(2).any(|w| w[0] >= w[1]) {
            return bad("labels", "must be non-empty, strictly increasing ages".into());
        }
        if self.stages.len() != Self::STAGES {
            return bad("stages", format!("need exactly {} stages", Self::STAGES));
        }
        for (key, v) in [
            ("face_size", self.face_size),
            ("stem", self.stem_channels),
            ("down", self.down_channels),
            ("bottleneck_ratio", self.bottleneck_ratio),
            ("patch_size", self.patch_size),
            ("patch_channels", self.patch_channels),
        ] {
            if v == 0 {
                return bad(key, "must be positive".into());
            }
        }
        if self.stages.iter().any(|s| s.width == 0 || s.stride == 0) {
            return bad("stages", "widths and strides must be positive".into());
        }
        if self.use_patches {
            self.patch_halvings()?;
        }
        if !self.patch_specs.is_empty() {
            if self.patch_specs.len() != Self::STAGES {
                return bad("patches", format!("need exactly {} patch specs", Self::STAGES));
            }
            if let Some(s) = self.patch_specs.iter().find(|s| !s.rect.fits_in(self.face_size)) {
                return bad("patches", format!("{:?} does not fit a {} px face", s.rect, self.face_size));
            }
        }
        Ok(())
    }

    /// Shapes `[C, H, W]` of every intermediate map, in forward order.
    pub fn shape_trace(&self) -> Result<Vec<(String, [usize; 3])>> {
        self.validate()?;
        let f = self.face_size;
        let mut t = vec![
            ("face".to_string(), [1, f, f]),
            ("stem".to_string(), [self.stem_channels, f, f]),
        ];
        let mut res = (f + 1) / 2;
        let mut width = self.down_channels;
        t.push(("down".to_string(), [width, res, res]));
        let halvings = if self.use_patches { self.patch_halvings()? } else { vec![] };
        for (i, s) in self.stages.iter().enumerate() {
            let n = i + 1;
            if s.stride != 1 || s.width != width {
                res = (res - 1) / s.stride + 1;
                width = s.width;
                t.push((format!("transition{n}"), [width, res, res]));
            }
            if self.use_patches {
                let mut p = self.patch_size;
                for _ in 0..halvings[i] {
                    p = (p - 1) / 2 + 1;
                }
                t.push((format!("patch{n}"), [self.patch_channels, p, p]));
                t.push((format!("concat{n}"), [width + self.patch_channels, res, res]));
            }
            let block_width = if n == Self::STAGES {
                self.feature_width()
            } else {
                t.push((format!("reduce{n}"), [width, res, res]));
                width
            };
            t.push((format!("block{n}"), [block_width, res, res]));
        }
        t.push(("pool".to_string(), [self.feature_width(), 1, 1]));
        t.push(("logits".to_string(), [self.classes(), 1, 1]));
        Ok(t)
    }

    /// Canonical `key=value` text, one setting per line.
    pub fn to_text(&self) -> String {
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "labels={}", join(&mut self.labels.iter().map(u32::to_string)));
        let _ = writeln!(s, "face_size={}", self.face_size);
        let _ = writeln!(s, "stem={}", self.stem_channels);
        let _ = writeln!(s, "down={}", self.down_channels);
        let _ = writeln!(s, "widths={}", join(&mut self.stages.iter().map(|x| x.width.to_string())));
        let _ = writeln!(s, "strides={}", join(&mut self.stages.iter().map(|x| x.stride.to_string())));
        let _ = writeln!(s, "bottleneck_ratio={}", self.bottleneck_ratio);
        let _ = writeln!(s, "patch_size={}", self.patch_size);
        let _ = writeln!(s, "patch_channels={}", self.patch_channels);
        let _ = writeln!(s, "use_patches={}", self.use_patches);
        let specs = self.patch_specs.iter().map(|p| {
            format!("{}/{}/{}/{}/{}", p.band, p.orientation, p.rect.x0, p.rect.y0, p.rect.side)
        });
        let _ = writeln!(s, "patches={}", specs.collect::<Vec<_>>().join(";"));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let fmt = |m: String| Error::Format(format!("model config: {m}"));
        let mut kv = std::collections::BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| fmt(format!("bad line `{line}`")))?;
            if kv.insert(k.trim(), v.trim()).is_some() {
                return Err(fmt(format!("duplicate key `{k}`")));
            }
        }
        let mut take = |k: &str| kv.remove(k).ok_or_else(|| fmt(format!("missing `{k}`")));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Format(format!("model config: `{k}` = `{v}` is not a number")))
        }
        fn list<T: std::str::FromStr>(k: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').map(|x| num(k, x.trim())).collect()
        }
        let labels = list("labels", take("labels")?)?;
        let face_size = num("face_size", take("face_size")?)?;
        let stem_channels = num("stem", take("stem")?)?;
        let down_channels = num("down", take("down")?)?;
        let widths: Vec<usize> = list("widths", take("widths")?)?;
        let strides: Vec<usize> = list("strides", take("strides")?)?;
        let bottleneck_ratio = num("bottleneck_ratio", take("bottleneck_ratio")?)?;
        let patch_size = num("patch_size", take("patch_size")?)?;
        let patch_channels = num("patch_channels", take("patch_channels")?)?;
        let use_patches = match take("use_patches")? {
            "true" => true,
            "false" => false,
            other => return Err(fmt(format!("use_patches = `{other}`"))),
        };
        let patch_specs = take("patches")?
            .split(';')
            .filter(|p| !p.is_empty())
            .map(|p| {
                let v: Vec<usize> = list("patches", &p.replace('/', ","))?;
                match v[..] {
                    [band, orientation, x, y, side] => Ok(FeatureSpec {
                        band,
                        orientation,
                        rect: PatchRect::new(x, y, side),
                    }),
                    _ => Err(fmt(format!("patch spec `{p}` needs band/orientation/x/y/size"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(k) = kv.keys().next() {
            return Err(fmt(format!("unknown key `{k}`")));
        }
        if widths.len() != strides.len() {
            return Err(fmt("widths and strides differ in length".into()));
        }
        let cfg = Self {
            labels,
            face_size,
            stem_channels,
            down_channels,
            stages: widths
                .into_iter()
                .zip(strides)
                .map(|(width, stride)| StageSpec { width, stride })
                .collect(),
            bottleneck_ratio,
            patch_size,
            patch_channels,
            use_patches,
            patch_specs,
        };
        cfg.validate().map_err(|e| fmt(e.to_string()))?;
        Ok(cfg)
    }
}
