//! Procedural face proxies whose texture encodes age.
//!
//! Every image is a shaded oval with a faint sinusoidal "wrinkle" texture
//! over the whole face. Five fixed square regions carry a much stronger
//! texture, so a patch selector has a known right answer. In both cases the
//! texture amplitude grows and its wavelength shrinks as age increases.
//! Outside the regions an age-independent skin texture of random strength,
//! wavelength and direction blurs the signal of windows that only partly
//! cover a region.

use std::f64::consts::PI;
use std::path::Path;

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::manifest::{Manifest, Record};
use crate::bif::PatchRect;
use crate::error::{contract_err, Error, Result};

pub const SYNTH_SIZE: usize = 96;

/// Regions with strong age texture: two forehead halves, two eye corners
/// and the mouth area. Corners lie on the 6-pixel candidate grid.
pub const PLANTED_REGIONS: [PatchRect; 5] = [
    PatchRect { x0: 18, y0: 6, side: 30 },
    PatchRect { x0: 48, y0: 6, side: 30 },
    PatchRect { x0: 6, y0: 36, side: 30 },
    PatchRect { x0: 60, y0: 36, side: 30 },
    PatchRect { x0: 30, y0: 66, side: 30 },
];

/// Direction (radians) along which each planted texture oscillates.
const REGION_ANGLES: [f64; 5] = [PI / 2.0, PI / 2.0, PI / 4.0, 3.0 * PI / 4.0, 0.0];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    pub age_min: u32,
    pub age_max: u32,
    pub noise_std: f64,
}

impl SynthConfig {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            seed,
            age_min: 16,
            age_max: 77,
            noise_std: 0.03,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return contract_err("synthetic dataset needs at least one image");
        }
        if self.age_min == 0 || self.age_min > self.age_max {
            return contract_err(format!("bad age range {}..={}", self.age_min, self.age_max));
        }
        Ok(())
    }

    /// Position of `age` within the range, in `[0, 1]`.
    fn age_t(&self, age: u32) -> f64 {
        if self.age_max == self.age_min {
            return 0.0;
        }
        (age - self.age_min) as f64 / (self.age_max - self.age_min) as f64
    }
}

/// Ages drawn uniformly from the configured range.
pub fn synth_ages(cfg: &SynthConfig) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.count).map(|_| rng.random_range(cfg.age_min..=cfg.age_max)).collect()
}

/// Wavelength (px) and amplitude of the planted texture at age fraction `t`.
pub fn region_texture(t: f64) -> (f64, f64) {
    (11.0 - 7.0 * t, 0.03 + 0.22 * t)
}

fn global_texture(t: f64) -> (f64, f64) {
    (11.0 - 7.0 * t, 0.01 + 0.03 * t)
}

/// Render image `index` as gray levels in `[0, 1]`, row-major 96×96.
pub fn synth_face(cfg: &SynthConfig, index: usize, age: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let t = cfg.age_t(age);
    let noise = Normal::new(0.0, cfg.noise_std).expect("noise std is finite");
    let n = SYNTH_SIZE;
    let c = n as f64 / 2.0;

    let (g_lambda, g_amp) = global_texture(t);
    let g_phase = rng.random_range(0.0..2.0 * PI);
    let regions: Vec<_> = REGION_ANGLES
        .iter()
        .map(|&a| {
            let (lambda, amp) = region_texture(t);
            (a, lambda, amp * rng.random_range(0.9..1.1), rng.random_range(0.0..2.0 * PI))
        })
        .collect();

    let skin_amp = rng.random_range(0.0..0.2);
    let skin_lambda = rng.random_range(4.0..11.0);
    let skin_angle: f64 = rng.random_range(0.0..PI);
    let skin_phase = rng.random_range(0.0..2.0 * PI);

    let mut px = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let d = ((fx - c) / 36.0).powi(2) + ((fy - c - 2.0) / 45.0).powi(2);
            let face = 1.0 / (1.0 + (-(1.0 - d) * 10.0).exp());
            let mut v = 0.2 + face * (0.35 + 0.08 * (fy - c) / c);
            v += face * g_amp * (2.0 * PI * fy / g_lambda + g_phase).sin();
            let mut inside: f64 = 0.0;
            for (r, &(angle, lambda, amp, phase)) in PLANTED_REGIONS.iter().zip(&regions) {
                let w = taper(r, fx, fy);
                if w > 0.0 {
                    let u = fx * angle.cos() + fy * angle.sin();
                    v += w * amp * (2.0 * PI * u / lambda + phase).sin();
                    inside = inside.max(w);
                }
            }
            let u = fx * skin_angle.cos() + fy * skin_angle.sin();
            v += (1.0 - inside) * skin_amp * (2.0 * PI * u / skin_lambda + skin_phase).sin();
            v += noise.sample(&mut rng);
            px.push(v.clamp(0.0, 1.0));
        }
    }
    px
}

/// 1 inside the region, fading linearly to 0 over the outer 3 pixels.
fn taper(r: &PatchRect, x: f64, y: f64) -> f64 {
    let edge = |p: f64, lo: usize| {
        let (lo, hi) = (lo as f64, (lo + r.side) as f64);
        ((p - lo).min(hi - p) / 3.0).clamp(0.0, 1.0)
    };
    edge(x, r.x0) * edge(y, r.y0)
}

/// 8-bit quantisation of [`synth_face`].
pub fn render_face(cfg: &SynthConfig, index: usize, age: u32) -> GrayImage {
    let px = synth_face(cfg, index, age);
    let bytes = px.iter().map(|v| (v * 255.0).round() as u8).collect();
    GrayImage::from_raw(SYNTH_SIZE as u32, SYNTH_SIZE as u32, bytes).expect("buffer matches size")
}

/// Write `count` PNG faces and `manifest.csv` into `out_dir`.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let ages = synth_ages(cfg);
    let width = cfg.count.to_string().len().max(5);
    let records: Vec<Record> = ages
        .iter()
        .enumerate()
        .map(|(i, &age)| Record {
            path: format!("face_{i:0width$}.png").into(),
            age,
        })
        .collect();
    records.par_iter().enumerate().try_for_each(|(i, r)| {
        let path = out_dir.join(&r.path);
        render_face(cfg, i, r.age)
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))
    })?;
    let manifest = Manifest::new(out_dir, records)?;
    manifest.save(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
