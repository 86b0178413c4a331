//! Multi-class AdaBoost (SAMME) over BIF columns, used as a feature
//! selector: each round picks the single feature whose tree has the lowest
//! weighted error, and the selected features name the patches the network
//! looks at.

mod export;
mod tree;

use rayon::prelude::*;

pub use export::{read_patches_csv, write_patches_csv, PatchRecord};
pub use tree::{fit_weak, misclass_error, weighted_error, WeakClassifier};

use crate::bif::{BifLayout, FeatureSpec};
use crate::error::{contract_err, Error, Result};
use tree::{check_inputs, fit_sorted, sort_order, TreeScratch};

/// Floor applied to a zero weighted error before computing `α`.
pub const MIN_ERROR: f64 = 1e-10;

/// Mapping from integer ages to boosting class indices.
#[derive(Clone, Debug, PartialEq)]
pub enum ClassMap {
    /// One class per distinct age, ascending.
    Distinct(Vec<u32>),
    /// `bins` equal-width groups over `[lo, hi]`.
    Binned { lo: u32, hi: u32, bins: usize },
}

impl ClassMap {
    pub fn distinct(ages: &[u32]) -> Self {
        let mut v = ages.to_vec();
        v.sort_unstable();
        v.dedup();
        ClassMap::Distinct(v)
    }

    pub fn binned(ages: &[u32], bins: usize) -> Result<Self> {
        let (Some(&lo), Some(&hi)) = (ages.iter().min(), ages.iter().max()) else {
            return contract_err("cannot bin an empty age list");
        };
        if bins == 0 {
            return contract_err("age bin count must be positive");
        }
        Ok(ClassMap::Binned { lo, hi, bins })
    }

    pub fn len(&self) -> usize {
        match self {
            ClassMap::Distinct(v) => v.len(),
            ClassMap::Binned { bins, .. } => *bins,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_of(&self, age: u32) -> Result<usize> {
        match self {
            ClassMap::Distinct(v) => v
                .binary_search(&age)
                .map_err(|_| Error::Contract(format!("age {age} is not a known class"))),
            ClassMap::Binned { lo, hi, bins } => {
                if age < *lo || age > *hi {
                    return contract_err(format!("age {age} outside [{lo}, {hi}]"));
                }
                let span = (hi - lo + 1) as usize;
                Ok(((age - lo) as usize * bins / span).min(bins - 1))
            }
        }
    }

    pub fn classes_of(&self, ages: &[u32]) -> Result<Vec<usize>> {
        ages.iter().map(|&a| self.class_of(a)).collect()
    }
}

/// BIF values of a training set, stored column-wise with each column's
/// ascending sample order precomputed (tree fits only depend on order).
#[derive(Clone, Debug)]
pub struct BoostData {
    m: usize,
    k: usize,
    columns: Vec<f64>,
    order: Vec<u32>,
}

impl BoostData {
    /// Build from per-sample rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if m < 2 || k == 0 {
            return contract_err(format!("need ≥ 2 samples and ≥ 1 feature, got {m}×{k}"));
        }
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("feature rows differ in length".into()));
        }
        let mut columns = vec![0.0; k * m];
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                columns[j * m + i] = v;
            }
        }
        let order: Vec<u32> = columns
            .par_chunks(m)
            .flat_map_iter(sort_order)
            .collect();
        Ok(Self { m, k, columns, order })
    }

    pub fn samples(&self) -> usize {
        self.m
    }

    pub fn features(&self) -> usize {
        self.k
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j * self.m..(j + 1) * self.m]
    }

    fn column_order(&self, j: usize) -> &[u32] {
        &self.order[j * self.m..(j + 1) * self.m]
    }
}

/// One boosting round.
#[derive(Clone, Debug, PartialEq)]
pub struct Round {
    pub feature: usize,
    pub classifier: WeakClassifier,
    /// Weighted error before clamping.
    pub error: f64,
    pub alpha: f64,
    /// Sample weights after this round's update and normalization.
    pub weights_after: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub rounds: Vec<Round>,
    pub k_prime: usize,
    pub classes: usize,
    /// Set when boosting stopped before `k_prime` rounds.
    pub stopped_early: Option<String>,
}

impl SelectionResult {
    pub fn selected(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.feature).collect()
    }
}

/// Run `k_prime` rounds of SAMME with single-feature trees.
///
/// Every round fits a tree to each not-yet-selected feature, keeps the
/// lowest weighted error (ties go to the lower feature index), and
/// reweights the samples with `α = ln((1−ε)/ε) + ln(K−1)`.
pub fn select_features(
    data: &BoostData,
    y: &[usize],
    classes: usize,
    k_prime: usize,
    depth: usize,
) -> Result<SelectionResult> {
    let m = data.samples();
    let mut w = vec![1.0 / m as f64; m];
    check_inputs(data.column(0), y, &w, classes)?;
    if k_prime > data.features() {
        return contract_err(format!(
            "k' = {k_prime} exceeds the {} available features",
            data.features()
        ));
    }
    let mut taken = vec![false; data.features()];
    let mut rounds = Vec::with_capacity(k_prime);
    let mut stopped_early = None;
    let chance = 1.0 - 1.0 / classes as f64;

    for round in 0..k_prime {
        let fits: Vec<Option<(WeakClassifier, f64)>> = (0..data.features())
            .into_par_iter()
            .map_init(TreeScratch::default, |scratch, j| {
                if taken[j] {
                    return None;
                }
                let col = data.column(j);
                let h = fit_sorted(j, col, data.column_order(j), y, &w, classes, depth, scratch);
                let err = weighted_error(&h, col, y, &w);
                Some((h, err))
            })
            .collect();
        // sequential reduction keeps the tie-break independent of scheduling
        let mut best: Option<(WeakClassifier, f64)> = None;
        for (h, err) in fits.into_iter().flatten() {
            if best.as_ref().is_none_or(|(_, e)| err < *e) {
                best = Some((h, err));
            }
        }
        let Some((h, err)) = best else {
            stopped_early = Some(format!("no unselected features left at round {round}"));
            break;
        };
        if err >= chance {
            stopped_early = Some(format!(
                "round {round}: best weighted error {err} is no better than chance ({chance})"
            ));
            break;
        }
        let eps = err.max(MIN_ERROR);
        let alpha = ((1.0 - eps) / eps).ln() + ((classes - 1) as f64).ln();
        let col = data.column(h.feature);
        for ((wi, &x), &yi) in w.iter_mut().zip(col).zip(y) {
            if h.predict(x) != yi {
                *wi *= alpha.exp();
            }
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        taken[h.feature] = true;
        rounds.push(Round {
            feature: h.feature,
            classifier: h,
            error: err,
            alpha,
            weights_after: w.clone(),
        });
    }
    Ok(SelectionResult {
        rounds,
        k_prime,
        classes,
        stopped_early,
    })
}

/// A selected patch with its boosting rank.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedPatch {
    pub spec: FeatureSpec,
    pub alpha: f64,
    pub round: usize,
}

/// Walk the rounds in selection order and keep the first `n` features whose
/// rectangles overlap every already kept one by at most `max_iou`.
pub fn top_patches(
    sel: &SelectionResult,
    layout: &BifLayout,
    n: usize,
    max_iou: f64,
) -> Result<Vec<RankedPatch>> {
    let mut kept: Vec<RankedPatch> = Vec::with_capacity(n);
    for (round, r) in sel.rounds.iter().enumerate() {
        if kept.len() == n {
            break;
        }
        let spec = layout.spec_of_index(r.feature)?;
        if kept.iter().all(|k| k.spec.rect.iou(&spec.rect) <= max_iou) {
            kept.push(RankedPatch {
                spec,
                alpha: r.alpha,
                round,
            });
        }
    }
    if kept.len() < n {
        return Err(Error::SelectionShortfall {
            found: kept.len(),
            wanted: n,
        });
    }
    Ok(kept)
}
