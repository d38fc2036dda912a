//! Fitting one bivariate Gaussian to mixture samples by minimising a divergence.
//!
//! The data density is not available to the fitter, so a fixed Gaussian KDE built
//! from the samples stands in for it. Data-side expectations average over the
//! samples; model-side expectations use reparameterised draws `μ + L ε` with the
//! `ε` fixed for the whole run. Gradients are central finite differences.
//!
//! Argument roles match the VAE regulariser: the model `q` is the first argument
//! and the data `p` the target, so `KlReverse` is `KL(q‖p)` (mode seeking),
//! `KlForward` is `KL(p‖q)` (mass covering) and `Gjs` is `JS^Gα(q‖p)`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::divergence::{DivergenceSpec, Family};
use crate::gaussian::{check_dim, FullGaussian};
use crate::oracle::log_add_exp;
use crate::{Error, Result};

mod kde;
mod mixture;

use kde::GridTable;
pub use kde::Kde;
pub use mixture::{mixture_sample, MixtureComponent, MixtureSpec};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const TABLE_NODES: usize = 257;
const NORMALIZER_NODES: usize = 129;
const BOX_KERNEL_SDS: f64 = 8.0;

/// Mean and lower Cholesky factor, with the factor's diagonal stored as logs:
/// `chol_lower = [ln L₁₁, L₂₁, ln L₂₂]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub mu: [f64; 2],
    pub chol_lower: [f64; 3],
}

impl FitParams {
    pub fn from_gaussian(g: &FullGaussian) -> Result<Self> {
        check_dim(2, g.dim())?;
        let l = g.cholesky_factor();
        Ok(Self {
            mu: [g.mean()[0], g.mean()[1]],
            chol_lower: [l[(0, 0)].ln(), l[(1, 0)], l[(1, 1)].ln()],
        })
    }

    /// `[L₁₁, L₂₁, L₂₂]`.
    pub fn factor(&self) -> [f64; 3] {
        [self.chol_lower[0].exp(), self.chol_lower[1], self.chol_lower[2].exp()]
    }

    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let [a, b, c] = self.factor();
        [[a * a, a * b], [a * b, b * b + c * c]]
    }

    pub fn to_gaussian(&self) -> Result<FullGaussian> {
        let s = self.covariance();
        FullGaussian::from_rows(self.mu.to_vec(), &[s[0].to_vec(), s[1].to_vec()])
    }

    fn to_array(self) -> [f64; 5] {
        let [a, b, c] = self.chol_lower;
        [self.mu[0], self.mu[1], a, b, c]
    }

    fn from_array(t: [f64; 5]) -> Self {
        Self {
            mu: [t[0], t[1]],
            chol_lower: [t[2], t[3], t[4]],
        }
    }
}

/// Which data density the divergence estimate uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataDensity {
    #[default]
    Kde,
    /// The generating mixture itself, for ablation.
    Exact(MixtureSpec),
}

/// Starting point of the descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FitInit {
    /// `N(0, I)`.
    #[default]
    Standard,
    /// The sample mean and covariance of the data.
    MomentMatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lr: f64,
    pub iters: usize,
    pub n_model_samples: usize,
    pub seed: u64,
    pub data_density: DataDensity,
    pub init: FitInit,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            lr: 0.05,
            iters: 500,
            n_model_samples: 2048,
            seed: 0,
            data_density: DataDensity::Kde,
            init: FitInit::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStep {
    pub iteration: usize,
    pub loss: f64,
    pub params: FitParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    /// Loss and parameters before each update.
    pub steps: Vec<FitStep>,
    pub final_params: FitParams,
    pub final_loss: f64,
    pub divergence_spec: DivergenceSpec,
    pub seed: u64,
    pub options: FitOptions,
}

impl FitTrace {
    /// Running minimum of the recorded losses, ending with the final loss.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.steps
            .iter()
            .map(|s| s.loss)
            .chain(std::iter::once(self.final_loss))
            .map(|l| {
                best = best.min(l);
                best
            })
            .collect()
    }

    pub fn write_json(&self, out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

enum LogP {
    Kde { kde: Kde, table: GridTable },
    Exact(MixtureSpec),
}

impl LogP {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            LogP::Kde { kde, table } => table.interpolate(x).unwrap_or_else(|| kde.log_density(x)),
            LogP::Exact(m) => m.log_pdf(x),
        }
    }

    fn eval_exact(&self, x: &[f64]) -> f64 {
        match self {
            LogP::Kde { kde, .. } => kde.log_density(x),
            LogP::Exact(m) => m.log_pdf(x),
        }
    }
}

/// Sample-based divergence between the data and a bivariate Gaussian model, with
/// everything that does not depend on the model parameters precomputed.
pub struct Objective {
    spec: DivergenceSpec,
    data: Vec<[f64; 2]>,
    data_logp: Vec<f64>,
    eps: Vec<[f64; 2]>,
    logp: LogP,
    normalizer: Option<Normalizer>,
}

/// Quadrature nodes for `Z = ∫ q^(1-a) p^a`.
struct Normalizer {
    a: f64,
    nodes: Vec<[f64; 2]>,
    /// `ln w + a ln p` at each node, with `w` the Simpson weight times cell area.
    log_base: Vec<f64>,
}

impl Objective {
    pub fn new(
        samples: &DMatrix<f64>,
        spec: &DivergenceSpec,
        n_model_samples: usize,
        seed: u64,
        data_density: &DataDensity,
    ) -> Result<Self> {
        if samples.ncols() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: samples.ncols(),
            });
        }
        if !matches!(
            spec.family,
            Family::KlForward | Family::KlReverse | Family::Js | Family::Gjs
        ) {
            return Err(Error::Unsupported(format!(
                "{} is not available as a sample-based fitting objective",
                spec.family
            )));
        }
        if n_model_samples == 0 {
            return Err(Error::InvalidParameter("need at least one model sample".into()));
        }
        let data: Vec<[f64; 2]> = samples.row_iter().map(|r| [r[0], r[1]]).collect();
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for x in &data {
            for k in 0..2 {
                lo[k] = lo[k].min(x[k]);
                hi[k] = hi[k].max(x[k]);
            }
        }
        let logp = match data_density {
            DataDensity::Kde => {
                let kde = Kde::new(samples)?;
                let sd = kde.kernel_sd();
                for k in 0..2 {
                    lo[k] -= BOX_KERNEL_SDS * sd[k];
                    hi[k] += BOX_KERNEL_SDS * sd[k];
                }
                let table = GridTable::build(lo, hi, TABLE_NODES, |x| kde.log_density(x));
                LogP::Kde { kde, table }
            }
            DataDensity::Exact(m) => {
                for k in 0..2 {
                    lo[k] -= 4.0;
                    hi[k] += 4.0;
                }
                LogP::Exact(m.clone())
            }
        };
        let data_logp = data.iter().map(|x| logp.eval_exact(x)).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = (0..n_model_samples)
            .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();

        let normalizer = (spec.family == Family::Gjs).then(|| {
            let a = spec.convention.mean_weight(spec.alpha);
            let n = NORMALIZER_NODES;
            let h = [(hi[0] - lo[0]) / (n - 1) as f64, (hi[1] - lo[1]) / (n - 1) as f64];
            let weight = |i: usize| {
                if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                }
            };
            let mut nodes = Vec::with_capacity(n * n);
            let mut log_base = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    let x = [lo[0] + i as f64 * h[0], lo[1] + j as f64 * h[1]];
                    let w = weight(i) * weight(j) * h[0] * h[1] / 9.0;
                    nodes.push(x);
                    log_base.push(w.ln() + if a > 0.0 { a * logp.eval_exact(&x) } else { 0.0 });
                }
            }
            Normalizer { a, nodes, log_base }
        });

        Ok(Self {
            spec: *spec,
            data,
            data_logp,
            eps,
            logp,
            normalizer,
        })
    }

    /// The divergence estimate at `params`.
    pub fn loss(&self, params: &FitParams) -> Result<f64> {
        let [l11, l21, l22] = params.factor();
        let log_norm = -LN_2PI - params.chol_lower[0] - params.chol_lower[2];
        let log_q = |x: &[f64; 2]| {
            let u = (x[0] - params.mu[0]) / l11;
            let v = (x[1] - params.mu[1] - l21 * u) / l22;
            log_norm - 0.5 * (u * u + v * v)
        };
        // (log q, log p) at model draws
        let model = || {
            self.eps.iter().map(move |e| {
                let z = [params.mu[0] + l11 * e[0], params.mu[1] + l21 * e[0] + l22 * e[1]];
                (log_norm - 0.5 * (e[0] * e[0] + e[1] * e[1]), self.logp.eval(&z))
            })
        };
        let n_data = self.data.len() as f64;
        let n_model = self.eps.len() as f64;
        let kl_forward = || {
            self.data
                .iter()
                .zip(&self.data_logp)
                .map(|(x, lp)| lp - log_q(x))
                .sum::<f64>()
                / n_data
        };
        let kl_reverse = || model().map(|(lq, lp)| lq - lp).sum::<f64>() / n_model;

        let value = match self.spec.family {
            Family::KlForward => kl_forward(),
            Family::KlReverse => kl_reverse(),
            Family::Js => {
                let ln2 = std::f64::consts::LN_2;
                let data_side = self
                    .data
                    .iter()
                    .zip(&self.data_logp)
                    .map(|(x, lp)| lp - log_add_exp(*lp, log_q(x)) + ln2)
                    .sum::<f64>()
                    / n_data;
                let model_side = model().map(|(lq, lp)| lq - log_add_exp(lq, lp) + ln2).sum::<f64>() / n_model;
                0.5 * (data_side + model_side)
            }
            Family::Gjs => {
                let norm = self.normalizer.as_ref().expect("built for Gjs");
                let w = self.spec.alpha.value();
                let a = norm.a;
                let log_z = if a == 0.0 {
                    0.0
                } else {
                    let terms = norm
                        .nodes
                        .iter()
                        .zip(&norm.log_base)
                        .map(|(x, b)| b + (1.0 - a) * log_q(x));
                    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
                    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
                };
                let mut total = log_z;
                if (1.0 - w) * a != 0.0 {
                    total += (1.0 - w) * a * kl_reverse();
                }
                if w * (1.0 - a) != 0.0 {
                    total += w * (1.0 - a) * kl_forward();
                }
                total
            }
            _ => unreachable!("rejected in Objective::new"),
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite("empirical divergence"))
        }
    }

    /// Central differences with step `scale · max(1, |θₖ|)` per coordinate.
    pub fn gradient(&self, params: &FitParams, scale: f64) -> Result<[f64; 5]> {
        let theta = params.to_array();
        let mut grad = [0.0; 5];
        for k in 0..5 {
            let h = scale * theta[k].abs().max(1.0);
            let (mut up, mut dn) = (theta, theta);
            up[k] += h;
            dn[k] -= h;
            let f_up = self.loss(&FitParams::from_array(up))?;
            let f_dn = self.loss(&FitParams::from_array(dn))?;
            grad[k] = (f_up - f_dn) / (2.0 * h);
        }
        Ok(grad)
    }
}

/// The sample moment-matched Gaussian.
pub fn moment_matched(samples: &DMatrix<f64>) -> Result<FullGaussian> {
    let n = samples.nrows();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let mean = samples.row_mean();
    let centered = DMatrix::from_fn(n, samples.ncols(), |r, c| samples[(r, c)] - mean[c]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    FullGaussian::new(mean.iter().copied().collect(), cov)
}

/// Divergence estimate between `samples` (through their KDE) and `g`.
pub fn empirical_divergence(
    samples: &DMatrix<f64>,
    g: &FullGaussian,
    spec: &DivergenceSpec,
    n_model_samples: usize,
    seed: u64,
) -> Result<f64> {
    Objective::new(samples, spec, n_model_samples, seed, &DataDensity::Kde)?.loss(&FitParams::from_gaussian(g)?)
}

pub const FD_STEP: f64 = 1e-4;

/// Plain gradient descent on the five parameters of [`FitParams`].
pub fn fit(samples: &DMatrix<f64>, spec: &DivergenceSpec, opt: &FitOptions) -> Result<FitTrace> {
    if samples.nrows() < 100 {
        return Err(Error::InvalidParameter(format!(
            "fitting needs at least 100 samples, got {}",
            samples.nrows()
        )));
    }
    if !(opt.lr > 0.0 && opt.lr.is_finite()) || opt.iters == 0 {
        return Err(Error::InvalidParameter(
            "learning rate and iteration count must be positive".into(),
        ));
    }
    let objective = Objective::new(samples, spec, opt.n_model_samples, opt.seed, &opt.data_density)?;
    let start = match opt.init {
        FitInit::Standard => FullGaussian::standard(2)?,
        FitInit::MomentMatched => moment_matched(samples)?,
    };
    let mut params = FitParams::from_gaussian(&start)?;
    let mut trace = FitTrace {
        steps: Vec::with_capacity(opt.iters),
        final_params: params,
        final_loss: f64::NAN,
        divergence_spec: *spec,
        seed: opt.seed,
        options: opt.clone(),
    };
    let diverged = |iteration: usize, trace: &FitTrace| Error::FitDiverged {
        iteration,
        partial: Box::new(trace.clone()),
    };
    for iteration in 0..opt.iters {
        let Ok(loss) = objective.loss(&params) else {
            return Err(diverged(iteration, &trace));
        };
        trace.steps.push(FitStep {
            iteration,
            loss,
            params,
        });
        let grad = match objective.gradient(&params, FD_STEP) {
            Ok(g) if g.iter().all(|v| v.is_finite()) => g,
            _ => return Err(diverged(iteration, &trace)),
        };
        let mut theta = params.to_array();
        for (t, g) in theta.iter_mut().zip(grad) {
            *t -= opt.lr * g;
        }
        params = FitParams::from_array(theta);
    }
    let Ok(loss) = objective.loss(&params) else {
        return Err(diverged(opt.iters, &trace));
    };
    trace.final_params = params;
    trace.final_loss = loss;
    Ok(trace)
}

/// Rectangular grid of `nx × ny` nodes, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2d {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub nx: usize,
    pub ny: usize,
}

impl Grid2d {
    pub fn square(half_width: f64, n: usize) -> Self {
        Self {
            x: (-half_width, half_width),
            y: (-half_width, half_width),
            nx: n,
            ny: n,
        }
    }

    fn coords(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
        let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
        (0..n).map(move |i| if n == 1 { 0.5 * (lo + hi) } else { lo + i as f64 * step })
    }

    pub fn cell_area(&self) -> f64 {
        let dx = (self.x.1 - self.x.0) / (self.nx.max(2) - 1) as f64;
        let dy = (self.y.1 - self.y.0) / (self.ny.max(2) - 1) as f64;
        dx * dy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourLevel {
    /// Probability mass enclosed by the contour.
    pub mass: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetDump {
    /// `(x, y, density)` in x-major order.
    pub rows: Vec<[f64; 3]>,
    pub contours: Vec<ContourLevel>,
}

impl LevelSetDump {
    /// CSV with columns `x, y, density`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "density"])?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Density of a bivariate Gaussian on `grid`, with the density value of each
/// contour enclosing the given probability masses: `(1 - m) / (2π √|Σ|)`.
pub fn level_set_dump(g: &FullGaussian, levels: &[f64], grid: &Grid2d) -> Result<LevelSetDump> {
    check_dim(2, g.dim())?;
    if grid.nx == 0 || grid.ny == 0 {
        return Err(Error::InvalidParameter("grid resolution must be positive".into()));
    }
    let peak = (-LN_2PI - 0.5 * g.log_det()).exp();
    let contours = levels
        .iter()
        .map(|&m| {
            if m > 0.0 && m < 1.0 {
                Ok(ContourLevel {
                    mass: m,
                    density: (1.0 - m) * peak,
                })
            } else {
                Err(Error::InvalidParameter(format!("contour mass {m} outside (0, 1)")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(grid.nx * grid.ny);
    for x in Grid2d::coords(grid.x.0, grid.x.1, grid.nx) {
        for y in Grid2d::coords(grid.y.0, grid.y.1, grid.ny) {
            rows.push([x, y, g.log_pdf_unchecked(&[x, y]).exp()]);
        }
    }
    Ok(LevelSetDump { rows, contours })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SkewConvention;
    use approx::assert_relative_eq;

    #[test]
    fn params_round_trip() {
        let g = FullGaussian::from_rows(vec![1.0, -2.0], &[vec![2.0, 0.6], vec![0.6, 1.0]]).unwrap();
        let p = FitParams::from_gaussian(&g).unwrap();
        let back = p.to_gaussian().unwrap();
        assert_relative_eq!(back.covariance(), g.covariance(), epsilon = 1e-12);
        assert_eq!(FitParams::from_array(p.to_array()), p);
    }

    #[test]
    fn benchmark_mixture_mean() {
        let s = mixture_sample(&MixtureSpec::benchmark(), 100_000, 3).unwrap();
        let m = s.row_mean();
        assert!((m[0] - 1.2).abs() < 0.05 && m[1].abs() < 0.05, "{m}");
        assert_eq!(s, mixture_sample(&MixtureSpec::benchmark(), 100_000, 3).unwrap());
    }

    #[test]
    fn level_set_examples() {
        let g = FullGaussian::standard(2).unwrap();
        let grid = Grid2d::square(6.0, 401);
        let dump = level_set_dump(&g, &[0.5], &grid).unwrap();
        let center = dump.rows[200 * 401 + 200];
        assert_eq!((center[0], center[1]), (0.0, 0.0));
        assert_relative_eq!(center[2], 1.0 / (2.0 * std::f64::consts::PI), epsilon = 1e-15);
        let total: f64 = dump.rows.iter().map(|r| r[2]).sum::<f64>() * grid.cell_area();
        assert!((total - 1.0).abs() < 1e-3);
        let n = dump.rows.len();
        for k in 0..n {
            assert!((dump.rows[k][2] - dump.rows[n - 1 - k][2]).abs() < 1e-12);
        }
        assert_relative_eq!(
            dump.contours[0].density,
            0.5 / (2.0 * std::f64::consts::PI),
            epsilon = 1e-15
        );
    }

    #[test]
    fn gjs_normalizer_matches_direct_quadrature() {
        let data = mixture_sample(&MixtureSpec::benchmark(), 400, 5).unwrap();
        let spec = DivergenceSpec::new(Family::Gjs, SkewConvention::Primed);
        let obj = Objective::new(&data, &spec, 256, 1, &DataDensity::Kde).unwrap();
        let g = FullGaussian::from_rows(vec![2.0, 0.0], &[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let params = FitParams::from_gaussian(&g).unwrap();
        let kde = Kde::new(&data).unwrap();
        // Same decomposition with an independent, finer normaliser.
        let z = crate::oracle::simpson_2d(
            |x, y| (0.5 * g.log_pdf_unchecked(&[x, y]) + 0.5 * kde.log_density(&[x, y])).exp(),
            (-12.0, 12.0),
            (-10.0, 10.0),
            301,
        );
        let with_family = |family| {
            let mut s = spec;
            s.family = family;
            Objective::new(&data, &s, 256, 1, &DataDensity::Kde)
                .unwrap()
                .loss(&params)
                .unwrap()
        };
        let (kl_f, kl_r) = (with_family(Family::KlForward), with_family(Family::KlReverse));
        let expected = 0.25 * kl_r + 0.25 * kl_f + z.ln();
        assert_relative_eq!(obj.loss(&params).unwrap(), expected, epsilon = 1e-4);
    }

    #[test]
    fn rejects_unsupported_families_and_small_data() {
        let data = mixture_sample(&MixtureSpec::benchmark(), 50, 5).unwrap();
        let spec = DivergenceSpec::new(Family::KlReverse, SkewConvention::Primed);
        assert!(fit(&data, &spec, &FitOptions::default()).is_err());
        let spec = DivergenceSpec::new(Family::GjsDual, SkewConvention::Primed);
        assert!(matches!(
            Objective::new(&data, &spec, 10, 0, &DataDensity::Kde),
            Err(Error::Unsupported(_))
        ));
    }
}
