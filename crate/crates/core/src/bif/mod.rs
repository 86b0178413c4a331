//! Bio-inspired features: Gabor bank responses pooled over a grid of
//! candidate patches. Each entry of a [`BifVector`] scores one
//! (band, orientation, window) candidate.

mod bank;
mod cache;
mod features;
mod gabor;

pub use bank::{reflect_index, FilterBank};
pub use cache::{read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use features::{BifExtractor, BifLayout, BifVector, FeatureSpec, PatchRect, WindowStat};
pub use gabor::{gabor_kernel, gabor_kernel_raw, GaborBankConfig, GaborParams};
