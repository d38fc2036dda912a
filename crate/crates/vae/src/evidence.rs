use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::VaeModel;
use crate::{Error, Result};

pub const DEFAULT_K: usize = 128;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Per-example `log p(x) ≈ log (1/k) Σⱼ p(x | zⱼ)` with `zⱼ ~ N(0, I)`.
pub fn log_evidence_per_example(model: &VaeModel, x: ArrayView2<f64>, k: usize, seed: u64) -> Result<Array1<f64>> {
    if k == 0 {
        return Err(Error::InvalidConfig(
            "evidence estimate needs k ≥ 1 prior samples".into(),
        ));
    }
    let (b, n) = (x.nrows(), model.arch().latent_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max = Array1::from_elem(b, f64::NEG_INFINITY);
    let mut logs = Vec::with_capacity(k);
    for _ in 0..k {
        let z = Array2::from_shape_simple_fn((b, n), || rng.sample::<f64, _>(StandardNormal));
        let ll = model.log_likelihood(x, z.view())?;
        max.zip_mut_with(&ll, |m, &l| *m = m.max(l));
        logs.push(ll);
    }
    let mut sum = Array1::<f64>::zeros(b);
    for ll in &logs {
        sum.zip_mut_with(&(ll - &max), |s, &d| *s += d.exp());
    }
    let ln_k = (k as f64).ln();
    Ok(ndarray::Zip::from(&max)
        .and(&sum)
        .map_collect(|&m, &s| m + s.ln() - ln_k))
}

/// Batch mean of [`log_evidence_per_example`].
pub fn estimate_log_evidence(model: &VaeModel, x: ArrayView2<f64>, k: usize, seed: u64) -> Result<f64> {
    let per = log_evidence_per_example(model, x, k, seed)?;
    per.mean().ok_or_else(|| Error::InvalidConfig("empty batch".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
}

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_mean(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<Interval> {
    if values.is_empty() || resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(
            "bootstrap needs data, resamples and a level in (0, 1)".into(),
        ));
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    let pick = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Ok(Interval {
        mean: values.iter().sum::<f64>() / n as f64,
        lo: pick(tail),
        hi: pick(1.0 - tail),
        level,
    })
}

/// Evidence estimate with a 95% bootstrap interval over examples.
pub fn estimate_log_evidence_ci(model: &VaeModel, x: ArrayView2<f64>, k: usize, seed: u64) -> Result<Interval> {
    let per = log_evidence_per_example(model, x, k, seed)?;
    bootstrap_mean(
        per.as_slice().expect("contiguous"),
        BOOTSTRAP_RESAMPLES,
        0.95,
        seed ^ 0xb007,
    )
}
