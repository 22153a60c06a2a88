use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(pred: &[usize], reference: &[usize]) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::Invalid(format!(
            "label sequences differ in length ({} vs {})",
            pred.len(),
            reference.len()
        )));
    }
    Ok(())
}

/// Per-class F1 averaged with weights equal to each class's share of the
/// reference labels. A class with no predictions or no support has F1 0.
pub fn weighted_f1(pred: &[usize], reference: &[usize]) -> Result<f64> {
    check_pair(pred, reference)?;
    if pred.is_empty() {
        return Err(Error::Invalid("weighted F1 of an empty sequence".into()));
    }
    let k = pred.iter().chain(reference).max().map_or(0, |m| m + 1);
    let mut tp = vec![0usize; k];
    let mut pred_n = vec![0usize; k];
    let mut ref_n = vec![0usize; k];
    for (&p, &r) in pred.iter().zip(reference) {
        pred_n[p] += 1;
        ref_n[r] += 1;
        if p == r {
            tp[p] += 1;
        }
    }
    Ok(f1_from_counts(&tp, &pred_n, &ref_n, reference.len()))
}

fn f1_from_counts(tp: &[usize], pred_n: &[usize], ref_n: &[usize], total: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..tp.len() {
        if ref_n[c] == 0 {
            continue;
        }
        let denom = pred_n[c] + ref_n[c];
        let f1 = if denom == 0 {
            0.0
        } else {
            2.0 * tp[c] as f64 / denom as f64
        };
        acc += f1 * ref_n[c] as f64 / total as f64;
    }
    acc
}

/// Weighted F1 over a trailing window ending at each index. The first
/// `window - 1` values use the shorter prefix available.
pub fn windowed_f1(pred: &[usize], reference: &[usize], window: usize) -> Result<Vec<f64>> {
    check_pair(pred, reference)?;
    if window == 0 {
        return Err(Error::Invalid("window must be positive".into()));
    }
    let k = pred.iter().chain(reference).max().map_or(0, |m| m + 1);
    let mut tp = vec![0usize; k];
    let mut pred_n = vec![0usize; k];
    let mut ref_n = vec![0usize; k];
    let mut out = Vec::with_capacity(pred.len());
    for i in 0..pred.len() {
        let (p, r) = (pred[i], reference[i]);
        pred_n[p] += 1;
        ref_n[r] += 1;
        if p == r {
            tp[p] += 1;
        }
        if i >= window {
            let (p, r) = (pred[i - window], reference[i - window]);
            pred_n[p] -= 1;
            ref_n[r] -= 1;
            if p == r {
                tp[p] -= 1;
            }
        }
        out.push(f1_from_counts(&tp, &pred_n, &ref_n, (i + 1).min(window)));
    }
    Ok(out)
}

/// Row-normalized K x K agreement matrix: rows are the reference (full
/// ensemble) choice, columns the router's choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub normalized: Vec<Vec<f64>>,
    /// `false` for rows without any reference support (left all-zero).
    pub supported: Vec<bool>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        let mut normalized = Vec::with_capacity(counts.len());
        let mut supported = Vec::with_capacity(counts.len());
        for row in &counts {
            let total: u64 = row.iter().sum();
            supported.push(total > 0);
            normalized.push(
                row.iter()
                    .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                    .collect(),
            );
        }
        Self {
            counts,
            normalized,
            supported,
        }
    }

    pub fn empty(k: usize) -> Self {
        Self::from_counts(vec![vec![0; k]; k])
    }

    /// Adds another matrix's counts (used to pool repetitions).
    pub fn merge(&self, other: &ConfusionMatrix) -> Self {
        let counts = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Self::from_counts(counts)
    }
}

pub fn confusion_matrix(
    router: &[usize],
    ensemble: &[usize],
    first_n: usize,
    k: usize,
) -> Result<ConfusionMatrix> {
    check_pair(router, ensemble)?;
    if first_n > router.len() {
        return Err(Error::Invalid(format!(
            "prefix {first_n} longer than sequence {}",
            router.len()
        )));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&r, &e) in router.iter().zip(ensemble).take(first_n) {
        if r >= k || e >= k {
            return Err(Error::Label {
                label: r.max(e),
                classes: k,
            });
        }
        counts[e][r] += 1;
    }
    Ok(ConfusionMatrix::from_counts(counts))
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
