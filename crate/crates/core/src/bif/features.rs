use rayon::prelude::*;

use super::bank::FilterBank;
use super::gabor::GaborBankConfig;
use crate::error::{contract_err, Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned square in face pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatchRect {
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
}

impl PatchRect {
    pub fn new(x0: usize, y0: usize, side: usize) -> Self {
        Self { x0, y0, side }
    }

    pub fn area(&self) -> usize {
        self.side * self.side
    }

    pub fn intersection(&self, other: &PatchRect) -> usize {
        let w = (self.x0 + self.side).min(other.x0 + other.side).saturating_sub(self.x0.max(other.x0));
        let h = (self.y0 + self.side).min(other.y0 + other.side).saturating_sub(self.y0.max(other.y0));
        w * h
    }

    pub fn iou(&self, other: &PatchRect) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn fits_in(&self, face_size: usize) -> bool {
        self.side > 0 && self.x0 + self.side <= face_size && self.y0 + self.side <= face_size
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x0 as f64 + self.side as f64 / 2.0,
            self.y0 as f64 + self.side as f64 / 2.0,
        )
    }
}

/// One BIF candidate: a filter (band, orientation) pooled over a patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FeatureSpec {
    pub band: usize,
    pub orientation: usize,
    pub rect: PatchRect,
}

/// How window responses are pooled into one value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowStat {
    Mean,
    Max,
}

impl std::str::FromStr for WindowStat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(WindowStat::Mean),
            "max" => Ok(WindowStat::Max),
            other => Err(format!("unknown window statistic `{other}` (mean|max)")),
        }
    }
}

impl std::fmt::Display for WindowStat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WindowStat::Mean => "mean",
            WindowStat::Max => "max",
        })
    }
}

/// Enumeration of candidate features: band-major, then orientation, then
/// row-major window position on a regular grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BifLayout {
    pub bands: usize,
    pub orientations: usize,
    pub face_size: usize,
    pub window: usize,
    pub stride: usize,
}

impl Default for BifLayout {
    fn default() -> Self {
        Self {
            bands: 8,
            orientations: 8,
            face_size: 96,
            window: 24,
            stride: 6,
        }
    }
}

impl BifLayout {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 || self.window > self.face_size {
            return contract_err(format!("invalid window geometry {self:?}"));
        }
        if (self.face_size - self.window) % self.stride != 0 {
            return contract_err(format!(
                "stride {} does not tile a {} face with {} windows",
                self.stride, self.face_size, self.window
            ));
        }
        Ok(())
    }

    /// Window positions per axis.
    pub fn grid(&self) -> usize {
        (self.face_size - self.window) / self.stride + 1
    }

    /// Feature count `k`.
    pub fn len(&self) -> usize {
        self.bands * self.orientations * self.grid() * self.grid()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spec_of_index(&self, i: usize) -> Result<FeatureSpec> {
        if i >= self.len() {
            return Err(Error::Index {
                index: i,
                len: self.len(),
            });
        }
        let g = self.grid();
        let pos = i % (g * g);
        let filter = i / (g * g);
        Ok(FeatureSpec {
            band: filter / self.orientations,
            orientation: filter % self.orientations,
            rect: PatchRect::new((pos % g) * self.stride, (pos / g) * self.stride, self.window),
        })
    }

    pub fn index_of_spec(&self, spec: &FeatureSpec) -> Result<usize> {
        let r = spec.rect;
        let g = self.grid();
        let on_grid = r.side == self.window
            && r.x0 % self.stride == 0
            && r.y0 % self.stride == 0
            && r.x0 / self.stride < g
            && r.y0 / self.stride < g;
        if spec.band >= self.bands || spec.orientation >= self.orientations || !on_grid {
            return contract_err(format!("{spec:?} is not a candidate of {self:?}"));
        }
        let filter = spec.band * self.orientations + spec.orientation;
        Ok((filter * g + r.y0 / self.stride) * g + r.x0 / self.stride)
    }
}

/// A face's k-dimensional BIF vector in [`BifLayout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct BifVector {
    pub values: Vec<f64>,
}

/// Filter bank plus pooling layout.
#[derive(Debug)]
pub struct BifExtractor {
    bank: FilterBank,
    layout: BifLayout,
    stat: WindowStat,
}

impl BifExtractor {
    pub fn new(bank: &GaborBankConfig, layout: BifLayout, stat: WindowStat) -> Result<Self> {
        layout.validate()?;
        if bank.bands() != layout.bands || bank.orientations != layout.orientations {
            return contract_err("bank and layout disagree on bands/orientations");
        }
        Ok(Self {
            bank: FilterBank::new(bank, layout.face_size)?,
            layout,
            stat,
        })
    }

    pub fn layout(&self) -> &BifLayout {
        &self.layout
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn extract(&self, face: &Tensor) -> Result<BifVector> {
        let resp = self.bank.response(face)?;
        let f = self.layout.face_size;
        let (g, win, stride) = (self.layout.grid(), self.layout.window, self.layout.stride);
        let mut values = Vec::with_capacity(self.layout.len());
        let mut integral = vec![0.0; (f + 1) * (f + 1)];
        for plane in resp.data().chunks(f * f) {
            match self.stat {
                WindowStat::Mean => {
                    for y in 0..f {
                        let mut row = 0.0;
                        for x in 0..f {
                            row += plane[y * f + x];
                            integral[(y + 1) * (f + 1) + x + 1] = integral[y * (f + 1) + x + 1] + row;
                        }
                    }
                    let area = (win * win) as f64;
                    for gy in 0..g {
                        for gx in 0..g {
                            let (y0, x0) = (gy * stride, gx * stride);
                            let (y1, x1) = (y0 + win, x0 + win);
                            let s = integral[y1 * (f + 1) + x1] - integral[y0 * (f + 1) + x1]
                                - integral[y1 * (f + 1) + x0]
                                + integral[y0 * (f + 1) + x0];
                            values.push((s / area).max(0.0));
                        }
                    }
                }
                WindowStat::Max => {
                    for gy in 0..g {
                        for gx in 0..g {
                            let (y0, x0) = (gy * stride, gx * stride);
                            let m = (y0..y0 + win)
                                .flat_map(|y| plane[y * f + x0..y * f + x0 + win].iter())
                                .fold(0.0f64, |a, &b| a.max(b));
                            values.push(m);
                        }
                    }
                }
            }
        }
        Ok(BifVector { values })
    }

    /// Extract every face; output order follows input order regardless of
    /// how the work is scheduled.
    pub fn extract_all(&self, faces: &[Tensor]) -> Result<Vec<BifVector>> {
        faces.par_iter().map(|f| self.extract(f)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_has_10816_features() {
        let l = BifLayout::default();
        assert_eq!(l.grid(), 13);
        assert_eq!(l.len(), 10_816);
    }

    #[test]
    fn enumeration_endpoints() {
        let l = BifLayout::default();
        assert_eq!(
            l.spec_of_index(0).unwrap(),
            FeatureSpec {
                band: 0,
                orientation: 0,
                rect: PatchRect::new(0, 0, 24)
            }
        );
        assert_eq!(
            l.spec_of_index(10_815).unwrap(),
            FeatureSpec {
                band: 7,
                orientation: 7,
                rect: PatchRect::new(72, 72, 24)
            }
        );
        assert!(matches!(l.spec_of_index(10_816), Err(Error::Index { .. })));
    }

    #[test]
    fn iou_cases() {
        let a = PatchRect::new(0, 0, 24);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&PatchRect::new(24, 0, 24)), 0.0);
        // half overlap: 288 / (576 + 576 - 288)
        assert!((a.iou(&PatchRect::new(12, 0, 24)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn off_grid_spec_rejected() {
        let l = BifLayout::default();
        let s = FeatureSpec {
            band: 0,
            orientation: 0,
            rect: PatchRect::new(3, 0, 24),
        };
        assert!(l.index_of_spec(&s).is_err());
    }
}
