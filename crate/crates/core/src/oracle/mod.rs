//! Independent estimators for checking the closed forms.
//!
//! Monte Carlo estimators always sample from the left argument of each KL term.
//! Work is split into fixed-size chunks, each with its own deterministic RNG
//! stream, and chunk moments are merged in a fixed tree order, so an estimate
//! depends only on `(seed, n)` and never on the number of worker threads.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gaussian::{DiagonalGaussian, FullGaussian};

mod mc;
mod quad;

pub use mc::{mc_gjs, mc_js, mc_kl, mc_lambda, McEstimate};
pub use quad::{
    adaptive_simpson, default_bounds_1d, integrand_1d, integrand_table, quad_divergence_1d, write_integrand_csv,
    Integrand1d, IntegrandRow,
};

#[cfg(test)]
pub(crate) use mc::simpson_2d;

/// A density that can be evaluated pointwise and sampled from.
pub trait Density: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    /// Appends `count` row-major draws to `out`, deterministically in `seed`.
    fn sample_into(&self, count: usize, seed: u64, out: &mut Vec<f64>);

    /// The Gaussian behind this density, when there is one. Gaussian pairs use the
    /// closed-form intermediate instead of a numerically normalised geometric mean.
    fn as_gaussian(&self) -> Option<&FullGaussian> {
        None
    }
}

impl Density for FullGaussian {
    fn dim(&self) -> usize {
        FullGaussian::dim(self)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_pdf_unchecked(x)
    }

    fn sample_into(&self, count: usize, seed: u64, out: &mut Vec<f64>) {
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = out.len();
        out.resize(start + count * n, 0.0);
        for row in out[start..].chunks_exact_mut(n) {
            self.draw_into(&mut rng, row);
        }
    }

    fn as_gaussian(&self) -> Option<&FullGaussian> {
        Some(self)
    }
}

impl Density for DiagonalGaussian {
    fn dim(&self) -> usize {
        DiagonalGaussian::dim(self)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_pdf_unchecked(x)
    }

    fn sample_into(&self, count: usize, seed: u64, out: &mut Vec<f64>) {
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = out.len();
        out.resize(start + count * n, 0.0);
        for row in out[start..].chunks_exact_mut(n) {
            self.draw_into(&mut rng, row);
        }
    }
}

type LogPdf = dyn Fn(&[f64]) -> f64 + Send + Sync;
type Sampler = dyn Fn(usize, u64) -> DMatrix<f64> + Send + Sync;

/// A density given by a pair of closures.
///
/// The sampler receives `(count, seed)` and returns a `count × dim` matrix.
#[derive(Clone)]
pub struct DensityHandle {
    dim: usize,
    log_pdf: Arc<LogPdf>,
    sampler: Arc<Sampler>,
}

impl DensityHandle {
    pub fn new(
        dim: usize,
        log_pdf: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        sampler: impl Fn(usize, u64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            log_pdf: Arc::new(log_pdf),
            sampler: Arc::new(sampler),
        }
    }
}

impl std::fmt::Debug for DensityHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityHandle")
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl Density for DensityHandle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        (self.log_pdf)(x)
    }

    fn sample_into(&self, count: usize, seed: u64, out: &mut Vec<f64>) {
        let m = (self.sampler)(count, seed);
        assert_eq!(m.ncols(), self.dim, "sampler returned the wrong dimension");
        assert_eq!(m.nrows(), count, "sampler returned the wrong number of rows");
        out.reserve(count * self.dim);
        for r in m.row_iter() {
            out.extend(r.iter());
        }
    }
}

/// `ln(eᵃ + eᵇ)` that tolerates `-∞` arguments.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Log-density of the mixture `(1-λ) p + λ q` from the component log-densities.
#[inline]
pub(crate) fn log_mixture(lp: f64, lq: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        lp
    } else if lambda == 1.0 {
        lq
    } else {
        log_add_exp((1.0 - lambda).ln() + lp, lambda.ln() + lq)
    }
}
