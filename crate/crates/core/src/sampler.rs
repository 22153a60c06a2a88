//! Probability-weighted ordered sampling of distinct engines.

use rand::distr::Open01;
use rand::Rng;

use crate::domain::ClassProbabilities;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Draws `min(m, K)` distinct engines, ordered, without replacement.
///
/// Each positive-probability engine gets the key `ln p_i + G_i` with `G_i`
/// standard Gumbel noise, and engines are taken by descending key
/// (Gumbel-top-k). This is sequential weighted sampling without
/// replacement, so the first element is distributed exactly as `p`.
/// Engines with zero probability come after every positive one, in id
/// order. Exactly K uniforms are consumed from `rng` per call.
pub fn sample_engines<T: Scalar, R: Rng + ?Sized>(
    p: &ClassProbabilities<T>,
    m: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if m < 1 {
        return Err(Error::Invalid("must sample at least one engine".into()));
    }
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(p.len());
    let mut zero = Vec::new();
    for (i, &pi) in p.as_slice().iter().enumerate() {
        let u: f64 = rng.sample(Open01);
        let pi = pi.as_f64();
        if pi > 0.0 {
            keyed.push((pi.ln() - (-u.ln()).ln(), i));
        } else {
            zero.push(i);
        }
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(keyed
        .into_iter()
        .map(|(_, i)| i)
        .chain(zero)
        .take(m.min(p.len()))
        .collect())
}
