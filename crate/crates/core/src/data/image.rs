use std::path::Path;

use image::{DynamicImage, ImageReader};

use crate::bif::PatchRect;
use crate::error::{contract_err, dim_err, Error, Result};
use crate::tensor::Tensor;

/// Bilinear resampling of a row-major `h×w` plane to `oh×ow`.
///
/// Pixel centres sit at half-integer coordinates, so a same-size resize is
/// an exact copy and a 2× reduction averages 2×2 blocks. Samples beyond the
/// border clamp to the edge.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Result<Vec<f64>> {
    if h == 0 || w == 0 || oh == 0 || ow == 0 || src.len() != h * w {
        return dim_err(format!("cannot resize {}-pixel {h}×{w} plane to {oh}×{ow}", src.len()));
    }
    let taps = |o: usize, n_in: usize, n_out: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(n_in - 1), s - i0 as f64)
    };
    let xs: Vec<_> = (0..ow).map(|x| taps(x, w, ow)).collect();
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, ty) = taps(y, h, oh);
        let (r0, r1) = (&src[y0 * w..][..w], &src[y1 * w..][..w]);
        for &(x0, x1, tx) in &xs {
            let top = (1.0 - tx) * r0[x0] + tx * r0[x1];
            let bottom = (1.0 - tx) * r1[x0] + tx * r1[x1];
            out.push((1.0 - ty) * top + ty * bottom);
        }
    }
    Ok(out)
}

/// Gray level in `[0, 1]` per pixel, with luma weights 0.299/0.587/0.114
/// for colour input. Returns `(height, width, pixels)`.
pub fn grayscale(img: &DynamicImage) -> (usize, usize, Vec<f64>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let px = if img.color().has_color() {
        // integer weights keep pure white at exactly 1.0
        img.to_rgb16()
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0.map(u64::from);
                (299 * r + 587 * g + 114 * b) as f64 / (1000.0 * 65535.0)
            })
            .collect()
    } else {
        img.to_luma16().pixels().map(|p| p.0[0] as f64 / 65535.0).collect()
    };
    (h, w, px)
}

/// Decode an image file and turn it into a `[1, size, size]` face tensor.
pub fn load_and_preprocess(path: &Path, size: usize) -> Result<Tensor> {
    let ingest = |reason: String| Error::Ingestion {
        path: path.to_path_buf(),
        reason,
    };
    let img = ImageReader::open(path)
        .map_err(|e| ingest(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| ingest(e.to_string()))?
        .decode()
        .map_err(|e| ingest(e.to_string()))?;
    preprocess(&img, size)
}

/// Grayscale and resize an already decoded image.
pub fn preprocess(img: &DynamicImage, size: usize) -> Result<Tensor> {
    let (h, w, px) = grayscale(img);
    let px = resize_bilinear(&px, h, w, size, size)?;
    Tensor::new(&[1, size, size], px)
}

/// Cut each rectangle out of a `[1, F, F]` face and bring it to
/// `[1, out, out]`. Rectangles already of side `out` are copied verbatim.
pub fn crop_patches(face: &Tensor, rects: &[PatchRect], out: usize) -> Result<Vec<Tensor>> {
    let s = face.shape();
    if s.len() != 3 || s[0] != 1 || s[1] != s[2] {
        return dim_err(format!("expected a [1,F,F] face, got {s:?}"));
    }
    let f = s[1];
    rects
        .iter()
        .map(|r| {
            if r.side == 0 || !r.fits_in(f) {
                return contract_err(format!("patch {r:?} lies outside the {f}×{f} face"));
            }
            let mut crop = Vec::with_capacity(r.side * r.side);
            for y in r.y0..r.y0 + r.side {
                crop.extend_from_slice(&face.data()[y * f + r.x0..][..r.side]);
            }
            if r.side != out {
                crop = resize_bilinear(&crop, r.side, r.side, out, out)?;
            }
            Tensor::new(&[1, out, out], crop)
        })
        .collect()
}
