//! Same-size filtering of a face by the whole Gabor bank.
//!
//! Responses are computed in the frequency domain: the reflect-padded face
//! is transformed once, and filters are applied two at a time by packing
//! one real kernel into the real part and another into the imaginary part
//! of a single spectrum.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::gabor::{gabor_kernel, GaborBankConfig, GaborParams};
use crate::error::{contract_err, dim_err, Result};
use crate::tensor::Tensor;

/// Mirror an out-of-range index back into `0..n` without repeating the edge.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// A prepared Gabor bank for faces of one fixed size.
pub struct FilterBank {
    params: Vec<GaborParams>,
    kernels: Vec<Tensor>,
    face_size: usize,
    pad: usize,
    grid: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    /// Transposed spectra of filter pairs `(2j, 2j+1)` packed as `K₁ + iK₂`.
    pair_spectra: Vec<Vec<Complex64>>,
}

impl std::fmt::Debug for FilterBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FilterBank")
            .field("filters", &self.params.len())
            .field("face_size", &self.face_size)
            .field("grid", &self.grid)
            .finish()
    }
}

fn fft2_transposed(buf: &mut [Complex64], n: usize, fft: &dyn Fft<f64>, scratch: &mut Vec<Complex64>) {
    fft.process(buf);
    scratch.clear();
    scratch.extend_from_slice(buf);
    for r in 0..n {
        for c in 0..n {
            buf[c * n + r] = scratch[r * n + c];
        }
    }
    fft.process(buf);
}

impl FilterBank {
    pub fn new(config: &GaborBankConfig, face_size: usize) -> Result<Self> {
        let params = config.filters();
        if params.is_empty() {
            return contract_err("filter bank has no filters");
        }
        let kernels = params.iter().map(gabor_kernel).collect::<Result<Vec<_>>>()?;
        let pad = params.iter().map(GaborParams::half).max().unwrap_or(0);
        if pad >= face_size {
            return contract_err(format!(
                "largest kernel half-width {pad} does not fit a {face_size}-pixel face"
            ));
        }
        let grid = (face_size + 2 * pad).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(grid);
        let ifft = planner.plan_fft_inverse(grid);
        let mut bank = Self {
            params,
            kernels,
            face_size,
            pad,
            grid,
            fft,
            ifft,
            pair_spectra: Vec::new(),
        };
        bank.pair_spectra = (0..bank.kernels.len().div_ceil(2))
            .map(|j| bank.pair_spectrum(2 * j))
            .collect();
        Ok(bank)
    }

    fn pair_spectrum(&self, first: usize) -> Vec<Complex64> {
        let n = self.grid;
        let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
        for (slot, idx) in [(0, first), (1, first + 1)] {
            let Some(k) = self.kernels.get(idx) else { continue };
            let ks = self.params[idx].ksize;
            let half = ks as isize / 2;
            for r in 0..ks {
                for c in 0..ks {
                    let y = (r as isize - half).rem_euclid(n as isize) as usize;
                    let x = (c as isize - half).rem_euclid(n as isize) as usize;
                    let v = k.data()[r * ks + c];
                    if slot == 0 {
                        buf[y * n + x].re += v;
                    } else {
                        buf[y * n + x].im += v;
                    }
                }
            }
        }
        let mut scratch = Vec::new();
        fft2_transposed(&mut buf, n, self.fft.as_ref(), &mut scratch);
        buf
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn face_size(&self) -> usize {
        self.face_size
    }

    pub fn params(&self) -> &[GaborParams] {
        &self.params
    }

    /// Normalized kernel of filter `i` (band-major order).
    pub fn kernel(&self, i: usize) -> &Tensor {
        &self.kernels[i]
    }

    fn face_pixels<'a>(&self, face: &'a Tensor) -> Result<&'a [f64]> {
        let s = face.shape();
        let ok = s.len() >= 2
            && s[s.len() - 2..] == [self.face_size, self.face_size]
            && face.numel() == self.face_size * self.face_size;
        if !ok {
            return dim_err(format!(
                "expected a {0}×{0} face, got shape {s:?}",
                self.face_size
            ));
        }
        Ok(face.data())
    }

    /// Absolute filter responses `[filters, H, W]` of one face, using
    /// reflect padding at the borders.
    pub fn response(&self, face: &Tensor) -> Result<Tensor> {
        let px = self.face_pixels(face)?;
        let (n, f, pad) = (self.grid, self.face_size, self.pad);
        let mut spectrum = vec![Complex64::new(0.0, 0.0); n * n];
        for u in 0..f + 2 * pad {
            let y = reflect_index(u as isize - pad as isize, f);
            for v in 0..f + 2 * pad {
                let x = reflect_index(v as isize - pad as isize, f);
                spectrum[u * n + v].re = px[y * f + x];
            }
        }
        let mut scratch = Vec::with_capacity(n * n);
        fft2_transposed(&mut spectrum, n, self.fft.as_ref(), &mut scratch);

        let norm = 1.0 / (n * n) as f64;
        let mut out = vec![0.0; self.len() * f * f];
        let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
        for (j, pair) in self.pair_spectra.iter().enumerate() {
            for ((b, s), k) in buf.iter_mut().zip(&spectrum).zip(pair) {
                *b = s * k;
            }
            fft2_transposed(&mut buf, n, self.ifft.as_ref(), &mut scratch);
            for (slot, idx) in [(0, 2 * j), (1, 2 * j + 1)] {
                if idx >= self.len() {
                    continue;
                }
                let plane = &mut out[idx * f * f..(idx + 1) * f * f];
                for y in 0..f {
                    for x in 0..f {
                        let c = buf[(y + pad) * n + x + pad];
                        let v = if slot == 0 { c.re } else { c.im };
                        plane[y * f + x] = (v * norm).abs();
                    }
                }
            }
        }
        Tensor::new(&[self.len(), f, f], out)
    }
}
