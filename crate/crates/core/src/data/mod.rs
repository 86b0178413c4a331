//! Datasets: manifests, image preprocessing, patch crops, splits and the
//! synthetic face generator.

mod image;
mod manifest;
mod synth;

use rayon::prelude::*;

pub use self::image::{crop_patches, grayscale, load_and_preprocess, preprocess, resize_bilinear};
pub use manifest::{split, Manifest, Record, Split};
pub use synth::{
    region_texture, render_face, synth_ages, synth_dataset, synth_face, SynthConfig, PLANTED_REGIONS,
    SYNTH_SIZE,
};

use crate::bif::PatchRect;
use crate::error::{contract_err, Result};
use crate::tensor::Tensor;

/// Preprocessed faces and their patch crops, in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub faces: Vec<Tensor>,
    /// Per sample, one `[1, P, P]` crop per rectangle.
    pub patches: Vec<Vec<Tensor>>,
    pub ages: Vec<u32>,
    pub rects: Vec<PatchRect>,
    pub patch_size: usize,
}

/// Network input for a group of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[N, 1, F, F]`
    pub faces: Tensor,
    /// One `[N, 1, P, P]` tensor per rectangle.
    pub patches: Vec<Tensor>,
    pub ages: Vec<u32>,
}

/// Decode every manifest image into a `[1, size, size]` face, in parallel,
/// keeping manifest order.
pub fn load_faces(manifest: &Manifest, size: usize) -> Result<Vec<Tensor>> {
    manifest
        .records
        .par_iter()
        .map(|r| load_and_preprocess(&manifest.resolve(r), size))
        .collect()
}

impl SampleSet {
    pub fn from_faces(faces: Vec<Tensor>, ages: Vec<u32>, rects: &[PatchRect], patch_size: usize) -> Result<Self> {
        if faces.len() != ages.len() {
            return contract_err(format!("{} faces but {} ages", faces.len(), ages.len()));
        }
        let patches = faces
            .par_iter()
            .map(|f| crop_patches(f, rects, patch_size))
            .collect::<Result<_>>()?;
        Ok(Self {
            faces,
            patches,
            ages,
            rects: rects.to_vec(),
            patch_size,
        })
    }

    pub fn load(manifest: &Manifest, face_size: usize, rects: &[PatchRect], patch_size: usize) -> Result<Self> {
        Self::from_faces(load_faces(manifest, face_size)?, manifest.ages(), rects, patch_size)
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            faces: indices.iter().map(|&i| self.faces[i].clone()).collect(),
            patches: indices.iter().map(|&i| self.patches[i].clone()).collect(),
            ages: indices.iter().map(|&i| self.ages[i]).collect(),
            rects: self.rects.clone(),
            patch_size: self.patch_size,
        }
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return contract_err("empty batch");
        }
        let faces = Tensor::stack(&indices.iter().map(|&i| &self.faces[i]).collect::<Vec<_>>())?;
        let patches = (0..self.rects.len())
            .map(|k| Tensor::stack(&indices.iter().map(|&i| &self.patches[i][k]).collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        Ok(Batch {
            faces,
            patches,
            ages: indices.iter().map(|&i| self.ages[i]).collect(),
        })
    }
}
