use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::quad::adaptive_simpson;
use super::{log_mixture, Density};
use crate::gaussian::{check_dim, intermediate_full, Skew, SkewConvention};
use crate::{Error, Result};

const CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Draws per expectation term.
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    const EMPTY: Moments = Moments {
        n: 0.0,
        mean: 0.0,
        m2: 0.0,
    };

    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(a: Moments, b: Moments) -> Moments {
        if a.n == 0.0 {
            return b;
        }
        if b.n == 0.0 {
            return a;
        }
        let n = a.n + b.n;
        let d = b.mean - a.mean;
        Moments {
            n,
            mean: a.mean + d * b.n / n,
            m2: a.m2 + b.m2 + d * d * a.n * b.n / n,
        }
    }

    fn tree(parts: &[Moments]) -> Moments {
        match parts.len() {
            0 => Moments::EMPTY,
            1 => parts[0],
            len => {
                let (l, r) = parts.split_at(len / 2);
                Moments::merge(Moments::tree(l), Moments::tree(r))
            }
        }
    }

    /// Variance of the sample mean.
    fn mean_variance(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            self.m2 / (self.n - 1.0) / self.n
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream_seed(seed: u64, term: u64, chunk: u64) -> u64 {
    splitmix64(seed ^ splitmix64((term << 40) | chunk))
}

/// `E_{x~d}[f(x)]` from `n` draws, split into independently seeded chunks.
fn expectation<F>(d: &dyn Density, n: usize, seed: u64, term: u64, f: F) -> Result<Moments>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = d.dim();
    let chunks = n.div_ceil(CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(n - c * CHUNK);
            let mut buf = Vec::with_capacity(count * dim);
            d.sample_into(count, stream_seed(seed, term, c as u64), &mut buf);
            let mut m = Moments::EMPTY;
            for x in buf.chunks_exact(dim) {
                let v = f(x);
                if !v.is_finite() {
                    return Err(Error::NonFiniteIntegrand { point: x.to_vec() });
                }
                m.push(v);
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Moments::tree(&parts))
}

fn check_inputs(p: &dyn Density, q: &dyn Density, n: usize) -> Result<()> {
    check_dim(p.dim(), q.dim())?;
    if n == 0 {
        return Err(Error::InvalidParameter("sample count must be positive".into()));
    }
    Ok(())
}

fn combine(terms: &[(f64, Moments)], n: usize, seed: u64) -> McEstimate {
    let value = terms.iter().map(|(w, m)| w * m.mean).sum();
    let var: f64 = terms.iter().map(|(w, m)| w * w * m.mean_variance()).sum();
    McEstimate {
        value,
        std_error: var.sqrt(),
        n_samples: n,
        seed,
    }
}

/// `KL(p‖q) ≈ mean of log p(x) - log q(x)` over `x ~ p`.
pub fn mc_kl(p: &dyn Density, q: &dyn Density, n: usize, seed: u64) -> Result<McEstimate> {
    check_inputs(p, q, n)?;
    let m = expectation(p, n, seed, 0, |x| p.log_density(x) - q.log_density(x))?;
    Ok(combine(&[(1.0, m)], n, seed))
}

/// `½ KL(p‖m) + ½ KL(q‖m)` with `m = ½(p + q)`.
pub fn mc_js(p: &dyn Density, q: &dyn Density, n: usize, seed: u64) -> Result<McEstimate> {
    mixture_divergence(p, q, 0.5, n, seed)
}

/// `λ KL(p‖m) + (1-λ) KL(q‖m)` with `m = (1-λ) p + λ q`.
pub fn mc_lambda(p: &dyn Density, q: &dyn Density, lambda: f64, n: usize, seed: u64) -> Result<McEstimate> {
    let lambda = Skew::new(lambda)?.value();
    mixture_divergence(p, q, lambda, n, seed)
}

fn mixture_divergence(p: &dyn Density, q: &dyn Density, lambda: f64, n: usize, seed: u64) -> Result<McEstimate> {
    check_inputs(p, q, n)?;
    let mut terms = Vec::with_capacity(2);
    if lambda > 0.0 {
        let m = expectation(p, n, seed, 0, |x| {
            let (lp, lq) = (p.log_density(x), q.log_density(x));
            lp - log_mixture(lp, lq, lambda)
        })?;
        terms.push((lambda, m));
    }
    if lambda < 1.0 {
        let m = expectation(q, n, seed, 1, |x| {
            let (lp, lq) = (p.log_density(x), q.log_density(x));
            lq - log_mixture(lp, lq, lambda)
        })?;
        terms.push((1.0 - lambda, m));
    }
    Ok(combine(&terms, n, seed))
}

/// JS^Gα (or its dual when `dual` is set) by sampling the left argument of each KL.
///
/// Gaussian pairs use the closed-form intermediate Gaussian. Other densities in one
/// or two dimensions use the geometric mean normalised by quadrature over a box
/// found from pilot samples, and the dual draws from it with a tabulated grid
/// sampler.
pub fn mc_gjs(
    p: &dyn Density,
    q: &dyn Density,
    alpha: Skew,
    conv: SkewConvention,
    dual: bool,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_inputs(p, q, n)?;
    let mid: Box<dyn Density> = match (p.as_gaussian(), q.as_gaussian()) {
        (Some(g1), Some(g2)) => Box::new(intermediate_full(g1, g2, alpha, conv)?),
        _ => Box::new(GeometricMean::build(p, q, conv.mean_weight(alpha), dual, seed)?),
    };
    let w = alpha.value();
    if dual {
        let m = expectation(mid.as_ref(), n, seed, 2, |x| {
            mid.log_density(x) - (1.0 - w) * p.log_density(x) - w * q.log_density(x)
        })?;
        return Ok(combine(&[(1.0, m)], n, seed));
    }
    let mut terms = Vec::with_capacity(2);
    if w < 1.0 {
        let m = expectation(p, n, seed, 0, |x| p.log_density(x) - mid.log_density(x))?;
        terms.push((1.0 - w, m));
    }
    if w > 0.0 {
        let m = expectation(q, n, seed, 1, |x| q.log_density(x) - mid.log_density(x))?;
        terms.push((w, m));
    }
    Ok(combine(&terms, n, seed))
}

/// `p^(1-a) q^a / Z` for densities without a closed-form geometric mean.
struct GeometricMean<'a> {
    p: &'a dyn Density,
    q: &'a dyn Density,
    a: f64,
    log_z: f64,
    sampler: Option<GridSampler>,
}

const PILOT: usize = 4096;
const BOX_SDS: f64 = 12.0;
const GRID_1D: usize = 1 << 16;
const GRID_2D: usize = 512;
const SIMPSON_2D: usize = 401;

impl<'a> GeometricMean<'a> {
    fn build(p: &'a dyn Density, q: &'a dyn Density, a: f64, with_sampler: bool, seed: u64) -> Result<Self> {
        let dim = p.dim();
        if dim > 2 {
            return Err(Error::Unsupported(format!(
                "geometric mean of non-Gaussian densities needs quadrature, only available in 1 or 2 dimensions (got {dim})"
            )));
        }
        let bounds = pilot_box(p, q, seed);
        let log_g = |x: &[f64]| (1.0 - a) * p.log_density(x) + a * q.log_density(x);
        let z = if dim == 1 {
            adaptive_simpson(|x| log_g(&[x]).exp(), bounds[0].0, bounds[0].1, 1e-12)?
        } else {
            simpson_2d(|x, y| log_g(&[x, y]).exp(), bounds[0], bounds[1], SIMPSON_2D)
        };
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::NonFinite("geometric-mean normaliser"));
        }
        let sampler = with_sampler.then(|| GridSampler::new(&log_g, &bounds));
        Ok(Self {
            p,
            q,
            a,
            log_z: z.ln(),
            sampler,
        })
    }
}

impl Density for GeometricMean<'_> {
    fn dim(&self) -> usize {
        self.p.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        (1.0 - self.a) * self.p.log_density(x) + self.a * self.q.log_density(x) - self.log_z
    }

    fn sample_into(&self, count: usize, seed: u64, out: &mut Vec<f64>) {
        self.sampler
            .as_ref()
            .expect("geometric mean built without a sampler")
            .sample_into(count, seed, out);
    }
}

/// Per-dimension `[lo, hi]` covering both densities by a wide margin.
fn pilot_box(p: &dyn Density, q: &dyn Density, seed: u64) -> Vec<(f64, f64)> {
    let dim = p.dim();
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); dim];
    for (term, d) in [p, q].into_iter().enumerate() {
        let mut buf = Vec::with_capacity(PILOT * dim);
        d.sample_into(PILOT, stream_seed(seed, 100 + term as u64, 0), &mut buf);
        for (k, b) in bounds.iter_mut().enumerate() {
            let mut m = Moments::EMPTY;
            for row in buf.chunks_exact(dim) {
                m.push(row[k]);
            }
            let sd = (m.m2 / (m.n - 1.0)).sqrt();
            b.0 = b.0.min(m.mean - BOX_SDS * sd);
            b.1 = b.1.max(m.mean + BOX_SDS * sd);
        }
    }
    bounds
}

fn simpson_weights(n: usize) -> impl Fn(usize) -> f64 {
    move |i| {
        if i == 0 || i == n - 1 {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    }
}

/// Composite Simpson on an `n × n` grid (`n` odd).
pub(crate) fn simpson_2d(f: impl Fn(f64, f64) -> f64, bx: (f64, f64), by: (f64, f64), n: usize) -> f64 {
    debug_assert!(n % 2 == 1 && n >= 3);
    let hx = (bx.1 - bx.0) / (n - 1) as f64;
    let hy = (by.1 - by.0) / (n - 1) as f64;
    let w = simpson_weights(n);
    let mut total = 0.0;
    for i in 0..n {
        let x = bx.0 + i as f64 * hx;
        let mut row = 0.0;
        for j in 0..n {
            row += w(j) * f(x, by.0 + j as f64 * hy);
        }
        total += w(i) * row;
    }
    total * hx * hy / 9.0
}

/// Piecewise-constant density on a regular grid, sampled by inverse CDF over cells.
struct GridSampler {
    lo: Vec<f64>,
    step: Vec<f64>,
    cells: Vec<usize>,
    cdf: Vec<f64>,
}

impl GridSampler {
    fn new(log_g: &dyn Fn(&[f64]) -> f64, bounds: &[(f64, f64)]) -> Self {
        let per_dim = if bounds.len() == 1 { GRID_1D } else { GRID_2D };
        let cells = vec![per_dim; bounds.len()];
        let lo: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        let step: Vec<f64> = bounds.iter().map(|b| (b.1 - b.0) / per_dim as f64).collect();
        let total = cells.iter().product();
        let mut logs = Vec::with_capacity(total);
        let mut x = vec![0.0; bounds.len()];
        for idx in 0..total {
            let mut rest = idx;
            for k in (0..bounds.len()).rev() {
                x[k] = lo[k] + ((rest % per_dim) as f64 + 0.5) * step[k];
                rest /= per_dim;
            }
            logs.push(log_g(&x));
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        let cdf = logs
            .iter()
            .map(|l| {
                acc += (l - max).exp();
                acc
            })
            .collect();
        Self { lo, step, cells, cdf }
    }

    fn sample_into(&self, count: usize, seed: u64, out: &mut Vec<f64>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let total = *self.cdf.last().expect("empty grid");
        let dim = self.cells.len();
        let mut x = vec![0.0; dim];
        for _ in 0..count {
            let u = rng.random::<f64>() * total;
            let mut rest = self.cdf.partition_point(|c| *c <= u).min(self.cdf.len() - 1);
            for k in (0..dim).rev() {
                let cell = rest % self.cells[k];
                rest /= self.cells[k];
                x[k] = self.lo[k] + (cell as f64 + rng.random::<f64>()) * self.step[k];
            }
            out.extend_from_slice(&x);
        }
    }
}
