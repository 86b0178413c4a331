use crate::error::{dim_err, Result};

/// Normalized class probabilities paired with their ages.
#[derive(Clone, Debug, PartialEq)]
pub struct AgeDistribution {
    pub p: Vec<f64>,
    pub labels: Vec<u32>,
}

impl AgeDistribution {
    /// Expected age `Σ pᵢ·yᵢ`.
    pub fn expectation(&self) -> f64 {
        self.p.iter().zip(&self.labels).map(|(p, &y)| p * y as f64).sum()
    }
}

fn check(logits: &[f64], labels: &[u32]) -> Result<()> {
    if logits.is_empty() || logits.len() != labels.len() {
        return dim_err(format!("{} logits for {} labels", logits.len(), labels.len()));
    }
    Ok(())
}

/// Clamp negative logits to zero, take the softmax, then renormalize.
///
/// The final renormalization is a no-op in exact arithmetic and only
/// guards against rounding.
pub fn age_distribution(logits: &[f64], labels: &[u32]) -> Result<AgeDistribution> {
    check(logits, labels)?;
    let clamped: Vec<f64> = logits.iter().map(|&v| v.max(0.0)).collect();
    let max = clamped.iter().cloned().fold(0.0, f64::max);
    let mut p: Vec<f64> = clamped.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    Ok(AgeDistribution {
        p,
        labels: labels.to_vec(),
    })
}

/// Expected age under [`age_distribution`].
pub fn predict_regression(logits: &[f64], labels: &[u32]) -> Result<f64> {
    Ok(age_distribution(logits, labels)?.expectation())
}

/// Age of the largest logit; ties go to the smaller age.
pub fn predict_classification(logits: &[f64], labels: &[u32]) -> Result<u32> {
    check(logits, labels)?;
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] || (v == logits[best] && labels[i] < labels[best]) {
            best = i;
        }
    }
    Ok(labels[best])
}
