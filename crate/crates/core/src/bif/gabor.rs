use std::f64::consts::PI;

use crate::error::{contract_err, Result};
use crate::tensor::Tensor;

/// One Gabor filter: `exp(−(x'² + γ²y'²)/(2σ²))·cos(2πx'/λ)` with
/// `x' = x cosθ + y sinθ`, `y' = −x sinθ + y cosθ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaborParams {
    pub theta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub ksize: usize,
}

impl GaborParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.lambda > 0.0 && self.gamma > 0.0) {
            return contract_err(format!("gabor: sigma, lambda and gamma must be positive: {self:?}"));
        }
        if self.ksize < 3 || self.ksize % 2 == 0 {
            return contract_err(format!("gabor: ksize {} must be odd and ≥ 3", self.ksize));
        }
        if !(0.0..PI).contains(&self.theta) {
            return contract_err(format!("gabor: theta {} outside [0, π)", self.theta));
        }
        Ok(())
    }

    pub fn half(&self) -> usize {
        self.ksize / 2
    }

    /// Unnormalized filter value at integer offset `(x, y)` from the center.
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.theta.sin_cos();
        let xr = x * c + y * s;
        let yr = -x * s + y * c;
        let envelope = (-(xr * xr + self.gamma * self.gamma * yr * yr)
            / (2.0 * self.sigma * self.sigma))
            .exp();
        envelope * (2.0 * PI * xr / self.lambda).cos()
    }
}

/// Unnormalized `ksize × ksize` kernel; entry `[row, col]` is the filter at
/// `(x, y) = (col − half, row − half)`.
pub fn gabor_kernel_raw(p: &GaborParams) -> Result<Tensor> {
    p.validate()?;
    let half = p.half() as isize;
    let k = p.ksize;
    Ok(Tensor::from_fn(&[k, k], |i| {
        let (row, col) = ((i / k) as isize, (i % k) as isize);
        p.value_at((col - half) as f64, (row - half) as f64)
    }))
}

/// Gabor kernel with its mean removed and scaled to unit L2 norm, so
/// responses ignore illumination offsets and are comparable across bands.
pub fn gabor_kernel(p: &GaborParams) -> Result<Tensor> {
    let mut k = gabor_kernel_raw(p)?;
    let n = k.numel() as f64;
    let mean = k.data().iter().sum::<f64>() / n;
    k.data_mut().iter_mut().for_each(|v| *v -= mean);
    let norm = k.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        k.data_mut().iter_mut().for_each(|v| *v /= norm);
    }
    Ok(k)
}

/// The band/orientation ladder of the filter bank.
#[derive(Clone, Debug, PartialEq)]
pub struct GaborBankConfig {
    /// Kernel extent of each band, fine to coarse.
    pub ksizes: Vec<usize>,
    /// `σ = sigma_ratio · ksize`.
    pub sigma_ratio: f64,
    /// `λ = σ / lambda_ratio`.
    pub lambda_ratio: f64,
    pub gamma: f64,
    /// Orientations `θ = jπ/n`, `j = 0..n`.
    pub orientations: usize,
}

impl Default for GaborBankConfig {
    fn default() -> Self {
        Self {
            ksizes: vec![7, 9, 11, 13, 15, 17, 19, 21],
            sigma_ratio: 0.4,
            lambda_ratio: 0.8,
            gamma: 0.3,
            orientations: 8,
        }
    }
}

impl GaborBankConfig {
    pub fn bands(&self) -> usize {
        self.ksizes.len()
    }

    /// Filter parameters in band-major, then orientation order.
    pub fn filters(&self) -> Vec<GaborParams> {
        let mut out = Vec::with_capacity(self.bands() * self.orientations);
        for &ksize in &self.ksizes {
            let sigma = self.sigma_ratio * ksize as f64;
            for j in 0..self.orientations {
                out.push(GaborParams {
                    theta: j as f64 * PI / self.orientations as f64,
                    gamma: self.gamma,
                    sigma,
                    lambda: sigma / self.lambda_ratio,
                    ksize,
                });
            }
        }
        out
    }
}
