use crate::error::{contract_err, Result};

/// 0 when the prediction matches the label, 1 otherwise.
pub fn misclass_error(h: usize, y: usize) -> u8 {
    u8::from(h != y)
}

/// A decision tree over one scalar feature.
///
/// A single-feature tree always partitions the real line into intervals, so
/// it is stored flat: `x ≤ thresholds[0]` lands in leaf 0, values in
/// `(thresholds[i-1], thresholds[i]]` land in leaf `i`, and the rest land in
/// the last leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakClassifier {
    pub feature: usize,
    pub thresholds: Vec<f64>,
    pub leaves: Vec<usize>,
    /// Depth actually used by the greedy construction.
    pub depth: usize,
}

impl WeakClassifier {
    pub fn predict(&self, x: f64) -> usize {
        self.leaves[self.thresholds.partition_point(|&t| t < x)]
    }
}

/// Reusable buffers for [`fit_sorted`].
#[derive(Default)]
pub(crate) struct TreeScratch {
    left: Vec<f64>,
    right: Vec<f64>,
    left_err: Vec<f64>,
}

/// Fit a greedy tree on samples already sorted by feature value.
///
/// `order` lists sample indices by ascending value. Each node takes the
/// split position with the lowest weighted misclassification among
/// boundaries between distinct values, and only splits when that strictly
/// improves on the majority leaf. Ties go to the leftmost boundary; leaf
/// majorities tie toward the lowest class.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_sorted(
    feature: usize,
    values: &[f64],
    order: &[u32],
    y: &[usize],
    w: &[f64],
    classes: usize,
    max_depth: usize,
    scratch: &mut TreeScratch,
) -> WeakClassifier {
    scratch.left.resize(classes, 0.0);
    scratch.right.resize(classes, 0.0);
    scratch.left_err.resize(order.len() + 1, 0.0);
    let mut thresholds = Vec::new();
    let mut leaves = Vec::new();
    let mut used = 0;
    grow(
        &Ctx { values, order, y, w },
        0,
        order.len(),
        max_depth,
        0,
        scratch,
        &mut thresholds,
        &mut leaves,
        &mut used,
    );
    WeakClassifier {
        feature,
        thresholds,
        leaves,
        depth: used,
    }
}

struct Ctx<'a> {
    values: &'a [f64],
    order: &'a [u32],
    y: &'a [usize],
    w: &'a [f64],
}

fn majority(weights: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (c, &v) in weights.iter().enumerate() {
        if v > weights[best] {
            best = c;
        }
    }
    (best, weights.iter().sum::<f64>() - weights[best])
}

#[allow(clippy::too_many_arguments)]
fn grow(
    ctx: &Ctx,
    lo: usize,
    hi: usize,
    depth_left: usize,
    level: usize,
    s: &mut TreeScratch,
    thresholds: &mut Vec<f64>,
    leaves: &mut Vec<usize>,
    used: &mut usize,
) {
    s.left.iter_mut().for_each(|v| *v = 0.0);
    for &i in &ctx.order[lo..hi] {
        s.left[ctx.y[i as usize]] += ctx.w[i as usize];
    }
    let (label, node_err) = majority(&s.left);
    let node_weight: f64 = s.left.iter().sum();
    let value = |p: usize| ctx.values[ctx.order[p] as usize];
    if depth_left == 0 || hi - lo < 2 || value(lo) == value(hi - 1) {
        leaves.push(label);
        *used = (*used).max(level);
        return;
    }

    // forward scan: error of the left child for a boundary before p
    s.left.iter_mut().for_each(|v| *v = 0.0);
    let (mut total, mut best) = (0.0, 0.0f64);
    for p in lo..hi {
        let i = ctx.order[p] as usize;
        let c = &mut s.left[ctx.y[i]];
        *c += ctx.w[i];
        total += ctx.w[i];
        best = best.max(*c);
        s.left_err[p + 1 - lo] = total - best;
    }
    // backward scan for the right child, tracking the best boundary
    s.right.iter_mut().for_each(|v| *v = 0.0);
    let (mut total, mut best) = (0.0, 0.0f64);
    let mut split: Option<(usize, f64)> = None;
    for p in (lo + 1..hi).rev() {
        let i = ctx.order[p] as usize;
        let c = &mut s.right[ctx.y[i]];
        *c += ctx.w[i];
        total += ctx.w[i];
        best = best.max(*c);
        if value(p - 1) < value(p) {
            let err = s.left_err[p - lo] + (total - best);
            // `<=` while scanning right to left keeps the leftmost minimum
            if split.is_none_or(|(_, e)| err <= e) {
                split = Some((p, err));
            }
        }
    }
    match split {
        // a relative margin keeps summation noise from creating no-op splits
        Some((p, err)) if node_err - err > 1e-12 * node_weight => {
            let (a, b) = (value(p - 1), value(p));
            let mut t = a + (b - a) / 2.0;
            if t >= b {
                t = a;
            }
            grow(ctx, lo, p, depth_left - 1, level + 1, s, thresholds, leaves, used);
            thresholds.push(t);
            grow(ctx, p, hi, depth_left - 1, level + 1, s, thresholds, leaves, used);
        }
        _ => {
            leaves.push(label);
            *used = (*used).max(level);
        }
    }
}

/// Sample indices sorted by ascending value; equal values keep index order.
pub(crate) fn sort_order(values: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..values.len() as u32).collect();
    order.sort_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]).then(a.cmp(&b)));
    order
}

/// Weighted error `Σ wᵢ·e(h(xᵢ), yᵢ)` summed in sample order.
pub fn weighted_error(h: &WeakClassifier, values: &[f64], y: &[usize], w: &[f64]) -> f64 {
    values
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&x, &yi), &wi)| wi * f64::from(misclass_error(h.predict(x), yi)))
        .sum()
}

pub(crate) fn check_inputs(values: &[f64], y: &[usize], w: &[f64], classes: usize) -> Result<()> {
    let m = values.len();
    if m < 2 || y.len() != m || w.len() != m {
        return contract_err(format!(
            "need ≥ 2 samples with matching labels and weights (got {m}, {}, {})",
            y.len(),
            w.len()
        ));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
        return contract_err(format!("label {bad} outside 0..{classes}"));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return contract_err("sample weights must be finite and non-negative");
    }
    if values.iter().any(|v| !v.is_finite()) {
        return contract_err("feature values must be finite");
    }
    let first = y[0];
    if y.iter().all(|&c| c == first) {
        return contract_err("need at least two distinct labels");
    }
    Ok(())
}

/// Fit a depth-limited single-feature tree to one column.
///
/// Labels are class indices in `0..classes`. Returns the tree (with
/// `feature` set to 0) and its weighted training error.
pub fn fit_weak(
    values: &[f64],
    y: &[usize],
    w: &[f64],
    classes: usize,
    max_depth: usize,
) -> Result<(WeakClassifier, f64)> {
    check_inputs(values, y, w, classes)?;
    let order = sort_order(values);
    let mut scratch = TreeScratch::default();
    let h = fit_sorted(0, values, &order, y, w, classes, max_depth, &mut scratch);
    let err = weighted_error(&h, values, y, w);
    Ok((h, err))
}
