use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::{Error, Result};

/// Kernels further than this many squared whitened units beyond the nearest one
/// contribute less than e⁻³⁵ relative weight and are skipped.
const TRUNCATION: f64 = 70.0;

/// Bivariate Gaussian kernel density estimate with Scott's-rule bandwidth
/// `H = n^(-1/3) Σ̂` (kernel scale `n^(-1/6)`).
#[derive(Debug, Clone)]
pub struct Kde {
    /// Lower Cholesky factor of `H` as `[l11, l21, l22]`.
    chol: [f64; 3],
    whitened: Vec<[f64; 2]>,
    log_norm: f64,
    kernel_sd: [f64; 2],
}

impl Kde {
    pub fn new(samples: &DMatrix<f64>) -> Result<Self> {
        if samples.ncols() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: samples.ncols(),
            });
        }
        let n = samples.nrows();
        if n < 2 {
            return Err(Error::InvalidParameter("KDE needs at least two samples".into()));
        }
        let (mut mx, mut my) = (0.0, 0.0);
        for r in samples.row_iter() {
            mx += r[0];
            my += r[1];
        }
        mx /= n as f64;
        my /= n as f64;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for r in samples.row_iter() {
            let (dx, dy) = (r[0] - mx, r[1] - my);
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        let scale = (n as f64).powf(-1.0 / 3.0) / (n - 1) as f64;
        let (hxx, hxy, hyy) = (sxx * scale, sxy * scale, syy * scale);
        let l11 = hxx.sqrt();
        let l21 = hxy / l11;
        let l22 = (hyy - l21 * l21).sqrt();
        if !(l11 > 0.0 && l22 > 0.0 && l11.is_finite() && l22.is_finite()) {
            return Err(Error::NotPositiveDefinite {
                condition: f64::INFINITY,
            });
        }
        let chol = [l11, l21, l22];
        let whitened = samples.row_iter().map(|r| whiten(&chol, r[0], r[1])).collect();
        let log_norm = -(n as f64).ln() - (2.0 * std::f64::consts::PI).ln() - l11.ln() - l22.ln();
        Ok(Self {
            chol,
            whitened,
            log_norm,
            kernel_sd: [hxx.sqrt(), hyy.sqrt()],
        })
    }

    /// Per-axis standard deviation of a single kernel.
    pub fn kernel_sd(&self) -> [f64; 2] {
        self.kernel_sd
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let u = whiten(&self.chol, x[0], x[1]);
        let mut min = f64::INFINITY;
        for w in &self.whitened {
            let (a, b) = (u[0] - w[0], u[1] - w[1]);
            min = min.min(a * a + b * b);
        }
        let mut sum = 0.0;
        for w in &self.whitened {
            let (a, b) = (u[0] - w[0], u[1] - w[1]);
            let excess = a * a + b * b - min;
            if excess < TRUNCATION {
                sum += (-0.5 * excess).exp();
            }
        }
        self.log_norm - 0.5 * min + sum.ln()
    }
}

#[inline]
fn whiten(chol: &[f64; 3], x: f64, y: f64) -> [f64; 2] {
    let u = x / chol[0];
    [u, (y - chol[1] * u) / chol[2]]
}

/// Values of a smooth function on a regular grid, interpolated with bicubic
/// Catmull-Rom splines (C¹ across cell edges).
#[derive(Debug, Clone)]
pub(crate) struct GridTable {
    pub lo: [f64; 2],
    pub step: [f64; 2],
    pub n: usize,
    /// Row-major, `values[i * n + j]` at `(lo.0 + i·step.0, lo.1 + j·step.1)`.
    pub values: Vec<f64>,
}

impl GridTable {
    pub fn build(lo: [f64; 2], hi: [f64; 2], n: usize, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let step = [(hi[0] - lo[0]) / (n - 1) as f64, (hi[1] - lo[1]) / (n - 1) as f64];
        let values = (0..n * n)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k / n, k % n);
                f(&[lo[0] + i as f64 * step[0], lo[1] + j as f64 * step[1]])
            })
            .collect();
        Self { lo, step, n, values }
    }

    /// Interpolated value, or `None` outside the interior cells.
    pub fn interpolate(&self, x: &[f64]) -> Option<f64> {
        let tx = (x[0] - self.lo[0]) / self.step[0];
        let ty = (x[1] - self.lo[1]) / self.step[1];
        let last = (self.n - 2) as f64;
        if !(tx >= 1.0 && tx < last && ty >= 1.0 && ty < last) {
            return None;
        }
        let (i, j) = (tx.floor() as usize, ty.floor() as usize);
        let (fx, fy) = (tx - i as f64, ty - j as f64);
        let wx = catmull_rom(fx);
        let wy = catmull_rom(fy);
        let mut total = 0.0;
        for (a, wa) in wx.iter().enumerate() {
            let row = (i + a - 1) * self.n + j - 1;
            let mut s = 0.0;
            for (b, wb) in wy.iter().enumerate() {
                s += wb * self.values[row + b];
            }
            total += wa * s;
        }
        Some(total)
    }
}

#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit2d::{mixture_sample, MixtureSpec};
    use crate::FullGaussian;
    use approx::assert_relative_eq;

    #[test]
    fn kde_matches_naive_sum() {
        let data = mixture_sample(&MixtureSpec::benchmark(), 300, 1).unwrap();
        let kde = Kde::new(&data).unwrap();
        let [l11, l21, l22] = kde.chol;
        let h = FullGaussian::from_rows(
            vec![0.0, 0.0],
            &[vec![l11 * l11, l11 * l21], vec![l11 * l21, l21 * l21 + l22 * l22]],
        )
        .unwrap();
        for x in [[0.0, 0.0], [3.1, -0.4], [-2.5, 1.5]] {
            let naive: f64 = data
                .row_iter()
                .map(|r| h.log_pdf(&[x[0] - r[0], x[1] - r[1]]).unwrap().exp())
                .sum::<f64>()
                / 300.0;
            assert_relative_eq!(kde.log_density(&x), naive.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn table_reproduces_smooth_function() {
        let f = |x: &[f64]| -0.5 * (x[0] * x[0] + 0.5 * x[1] * x[1]) + 0.1 * x[0] * x[1];
        let t = GridTable::build([-5.0, -5.0], [5.0, 5.0], 201, f);
        for x in [[0.013, 0.77], [-3.3, 2.2], [4.1, -4.0]] {
            assert!((t.interpolate(&x).unwrap() - f(&x)).abs() < 1e-9);
        }
        assert!(t.interpolate(&[5.5, 0.0]).is_none());
    }
}
