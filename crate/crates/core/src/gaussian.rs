//! Gaussian types, densities, sampling and the geometric-mean Gaussian.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const SYMMETRY_TOL: f64 = 1e-12;

/// Skew parameter α, validated to lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Skew(f64);

impl Skew {
    pub fn new(alpha: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&alpha) {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidParameter(format!("skew must lie in [0, 1], got {alpha}")))
        }
    }

    pub const HALF: Skew = Skew(0.5);

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Skew {
    type Error = Error;

    fn try_from(alpha: f64) -> Result<Self> {
        Self::new(alpha)
    }
}

impl From<Skew> for f64 {
    fn from(s: Skew) -> f64 {
        s.0
    }
}

/// Which geometric mean the intermediate distribution uses.
///
/// `Original` is `N_α` built from `p^(1-α) q^α`. `Primed` evaluates the same
/// barycenter formulas at `1 - α`, i.e. `p^α q^(1-α)`; the outer KL weights
/// `(1-α)` and `α` are unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkewConvention {
    Original,
    Primed,
}

impl SkewConvention {
    /// The weight given to the second distribution inside the geometric mean.
    #[inline]
    pub fn mean_weight(self, alpha: Skew) -> f64 {
        match self {
            SkewConvention::Original => alpha.0,
            SkewConvention::Primed => 1.0 - alpha.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SkewConvention::Original => "original",
            SkewConvention::Primed => "primed",
        }
    }
}

impl std::str::FromStr for SkewConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(Self::Original),
            "primed" => Ok(Self::Primed),
            other => Err(Error::InvalidParameter(format!(
                "unknown convention '{other}' (expected original or primed)"
            ))),
        }
    }
}

impl std::fmt::Display for SkewConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Gaussian with diagonal covariance, parameterised by per-dimension log-variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiagonalRepr")]
pub struct DiagonalGaussian {
    mu: Vec<f64>,
    log_var: Vec<f64>,
}

#[derive(Deserialize)]
struct DiagonalRepr {
    mu: Vec<f64>,
    log_var: Vec<f64>,
}

impl TryFrom<DiagonalRepr> for DiagonalGaussian {
    type Error = Error;

    fn try_from(r: DiagonalRepr) -> Result<Self> {
        Self::new(r.mu, r.log_var)
    }
}

impl DiagonalGaussian {
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if mu.len() != log_var.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: log_var.len(),
            });
        }
        if mu.iter().chain(&log_var).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("diagonal Gaussian parameters"));
        }
        Ok(Self { mu, log_var })
    }

    /// Builds from variances rather than log-variances.
    pub fn from_variances(mu: Vec<f64>, var: &[f64]) -> Result<Self> {
        if let Some(v) = var.iter().find(|v| v.is_nan() || **v <= 0.0) {
            return Err(Error::InvalidParameter(format!("variances must be positive, got {v}")));
        }
        Self::new(mu, var.iter().map(|v| v.ln()).collect())
    }

    pub fn standard(n: usize) -> Result<Self> {
        Self::new(vec![0.0; n], vec![0.0; n])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    pub fn variances(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| lv.exp()).collect()
    }

    pub fn to_full(&self) -> FullGaussian {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(self.variances()));
        FullGaussian::new(self.mu.clone(), sigma).expect("diagonal covariance is positive definite")
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.log_pdf_unchecked(x))
    }

    pub(crate) fn log_pdf_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, mi), lv) in x.iter().zip(&self.mu).zip(&self.log_var) {
            let d = xi - mi;
            acc += lv + d * d * (-lv).exp();
        }
        -0.5 * (acc + self.dim() as f64 * LN_2PI)
    }

    pub(crate) fn draw_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        for ((o, m), lv) in out.iter_mut().zip(&self.mu).zip(&self.log_var) {
            let e: f64 = StandardNormal.sample(rng);
            *o = m + (0.5 * lv).exp() * e;
        }
    }

    /// `count` i.i.d. draws as rows of a `count × n` matrix.
    pub fn sample(&self, count: usize, seed: u64) -> Result<DMatrix<f64>> {
        sample_rows(self.dim(), count, seed, |rng, row| self.draw_into(rng, row))
    }
}

/// Gaussian with dense covariance. The Cholesky factor is computed once at construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "FullRepr", into = "FullRepr")]
pub struct FullGaussian {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det: f64,
}

#[derive(Serialize, Deserialize)]
struct FullRepr {
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
}

impl TryFrom<FullRepr> for FullGaussian {
    type Error = Error;

    fn try_from(r: FullRepr) -> Result<Self> {
        Self::from_rows(r.mu, &r.sigma)
    }
}

impl From<FullGaussian> for FullRepr {
    fn from(g: FullGaussian) -> Self {
        let n = g.dim();
        FullRepr {
            mu: g.mu.iter().copied().collect(),
            sigma: (0..n).map(|i| (0..n).map(|j| g.sigma[(i, j)]).collect()).collect(),
        }
    }
}

impl PartialEq for FullGaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mu == other.mu && self.sigma == other.sigma
    }
}

impl FullGaussian {
    pub fn new(mu: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: if sigma.nrows() != n {
                    sigma.nrows()
                } else {
                    sigma.ncols()
                },
            });
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("full Gaussian parameters"));
        }
        let scale = sigma.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = (sigma[(i, j)] - sigma[(j, i)]).abs();
                if gap > SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric { row: i, col: j, gap });
                }
            }
        }
        let chol = cholesky(&sigma)?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            mu: DVector::from_vec(mu),
            sigma,
            chol: l,
            log_det,
        })
    }

    /// Builds from a row-major nested covariance.
    pub fn from_rows(mu: Vec<f64>, sigma: &[Vec<f64>]) -> Result<Self> {
        let n = mu.len();
        if sigma.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: sigma.len(),
            });
        }
        if let Some(row) = sigma.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: row.len(),
            });
        }
        Self::new(mu, DMatrix::from_fn(n, n, |i, j| sigma[i][j]))
    }

    /// One-dimensional `N(mean, variance)`.
    pub fn univariate(mean: f64, variance: f64) -> Result<Self> {
        Self::new(vec![mean], DMatrix::from_element(1, 1, variance))
    }

    pub fn standard(n: usize) -> Result<Self> {
        Self::new(vec![0.0; n], DMatrix::identity(n, n))
    }

    pub fn diagonal(mu: Vec<f64>, var: &[f64]) -> Result<Self> {
        Self::new(mu, DMatrix::from_diagonal(&DVector::from_column_slice(var)))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Lower Cholesky factor `L` with `Σ = L Lᵀ`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `ln |Σ|`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let mut inv = DMatrix::identity(self.dim(), self.dim());
        self.solve_in_place(&mut inv);
        symmetrize(inv)
    }

    /// Solves `Σ X = B` in place.
    pub(crate) fn solve_in_place(&self, b: &mut DMatrix<f64>) {
        self.chol.solve_lower_triangular_mut(b);
        self.chol.tr_solve_lower_triangular_mut(b);
    }

    /// `Σ⁻¹ v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut y = v.clone();
        self.chol.solve_lower_triangular_mut(&mut y);
        self.chol.tr_solve_lower_triangular_mut(&mut y);
        y
    }

    /// `(x - μ)ᵀ Σ⁻¹ (x - μ)` without allocating.
    pub(crate) fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        const STACK: usize = 16;
        let n = self.dim();
        let mut buf = [0.0; STACK];
        let mut heap;
        let y: &mut [f64] = if n <= STACK {
            &mut buf[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        let mut acc = 0.0;
        for i in 0..n {
            let mut s = x[i] - self.mu[i];
            for (j, yj) in y.iter().enumerate().take(i) {
                s -= self.chol[(i, j)] * yj;
            }
            let yi = s / self.chol[(i, i)];
            y[i] = yi;
            acc += yi * yi;
        }
        acc
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.log_pdf_unchecked(x))
    }

    #[inline]
    pub(crate) fn log_pdf_unchecked(&self, x: &[f64]) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + self.mahalanobis_sq(x))
    }

    pub(crate) fn draw_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let n = self.dim();
        let mut eps = [0.0; 16];
        let mut heap;
        let e: &mut [f64] = if n <= 16 {
            &mut eps[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        for v in e.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let mut s = self.mu[i];
            for (j, ej) in e.iter().enumerate().take(i + 1) {
                s += self.chol[(i, j)] * ej;
            }
            *o = s;
        }
    }

    /// `count` i.i.d. draws `x = μ + L ε` as rows of a `count × n` matrix.
    pub fn sample(&self, count: usize, seed: u64) -> Result<DMatrix<f64>> {
        sample_rows(self.dim(), count, seed, |rng, row| self.draw_into(rng, row))
    }
}

fn sample_rows(
    n: usize,
    count: usize,
    seed: u64,
    mut draw: impl FnMut(&mut ChaCha8Rng, &mut [f64]),
) -> Result<DMatrix<f64>> {
    if count == 0 {
        return Err(Error::InvalidParameter("sample count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(count, n);
    let mut row = vec![0.0; n];
    for r in 0..count {
        draw(&mut rng, &mut row);
        for (c, v) in row.iter().enumerate() {
            out[(r, c)] = *v;
        }
    }
    Ok(out)
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Cholesky with the condition number reported on failure.
pub(crate) fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite {
        condition: condition_number(m),
    })
}

pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m.clone())).eigenvalues;
    let max = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// The normalised geometric mean of two Gaussians.
///
/// With `w = conv.mean_weight(alpha)` this is the Gaussian proportional to
/// `p^(1-w) q^w`:
///
/// ```text
/// Σ_w = ((1-w) Σ₁⁻¹ + w Σ₂⁻¹)⁻¹
/// μ_w = Σ_w ((1-w) Σ₁⁻¹ μ₁ + w Σ₂⁻¹ μ₂)
/// ```
pub fn intermediate_full(
    g1: &FullGaussian,
    g2: &FullGaussian,
    alpha: Skew,
    conv: SkewConvention,
) -> Result<FullGaussian> {
    check_dim(g1.dim(), g2.dim())?;
    let w = conv.mean_weight(alpha);
    let p1 = g1.precision();
    let p2 = g2.precision();
    let precision = symmetrize(&p1 * (1.0 - w) + &p2 * w);
    let chol = cholesky(&precision)?;
    let sigma = symmetrize(chol.inverse());
    let eta = &p1 * g1.mean() * (1.0 - w) + &p2 * g2.mean() * w;
    let mu = chol.solve(&eta);
    FullGaussian::new(mu.iter().copied().collect(), sigma)
}

/// Diagonal specialisation of [`intermediate_full`] against the standard normal
/// `N(0, I)` as second argument:
///
/// ```text
/// σ²_w,i = σ²_i / ((1-w) + w σ²_i)
/// μ_w,i  = σ²_w,i (1-w) μ_i / σ²_i
/// ```
pub fn intermediate_diag(g: &DiagonalGaussian, alpha: Skew, conv: SkewConvention) -> DiagonalGaussian {
    let w = conv.mean_weight(alpha);
    let mut mu = Vec::with_capacity(g.dim());
    let mut log_var = Vec::with_capacity(g.dim());
    for (m, lv) in g.mu.iter().zip(&g.log_var) {
        let var = lv.exp();
        let var_w = var / ((1.0 - w) + w * var);
        mu.push(var_w * (1.0 - w) * m / var);
        log_var.push(var_w.ln());
    }
    DiagonalGaussian { mu, log_var }
}

/// Standard normal density, exposed for the tests and the evidence estimator.
#[inline]
pub fn std_normal_log_pdf(x: f64) -> f64 {
    -0.5 * (x * x + (2.0 * PI).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn skew(a: f64) -> Skew {
        Skew::new(a).unwrap()
    }

    #[test]
    fn log_pdf_standard_normal_at_mode() {
        let g = FullGaussian::standard(1).unwrap();
        assert_relative_eq!(g.log_pdf(&[0.0]).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
        let d = DiagonalGaussian::standard(1).unwrap();
        assert_relative_eq!(d.log_pdf(&[0.0]).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn log_pdf_isotropic_2d() {
        let g = FullGaussian::standard(2).unwrap();
        let want = -(2.0 * PI).ln() - 1.0;
        assert_relative_eq!(g.log_pdf(&[1.0, 1.0]).unwrap(), want, epsilon = 1e-12);
        assert_relative_eq!(want, -2.837_877_066_409_345, epsilon = 1e-9);
        let d = DiagonalGaussian::standard(2).unwrap();
        assert_relative_eq!(d.log_pdf(&[1.0, 1.0]).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn log_pdf_dimension_mismatch() {
        let g = FullGaussian::standard(2).unwrap();
        assert!(matches!(
            g.log_pdf(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn rejects_non_pd_and_asymmetric() {
        let bad = FullGaussian::from_rows(vec![0.0, 0.0], &[vec![1.0, 2.0], vec![2.0, 1.0]]);
        match bad {
            Err(Error::NotPositiveDefinite { condition }) => assert_relative_eq!(condition, 3.0, epsilon = 1e-9),
            other => panic!("expected PD failure, got {other:?}"),
        }
        let asym = FullGaussian::from_rows(vec![0.0, 0.0], &[vec![1.0, 0.1], vec![0.0, 1.0]]);
        assert!(matches!(asym, Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn sample_moments_and_determinism() {
        let g = FullGaussian::standard(2).unwrap();
        let s = g.sample(100_000, 7).unwrap();
        for c in 0..2 {
            assert!(s.column(c).mean().abs() < 0.02);
        }
        assert_eq!(s, g.sample(100_000, 7).unwrap());

        let g = FullGaussian::diagonal(vec![1.0, -1.0], &[4.0, 1.0]).unwrap();
        let s = g.sample(100_000, 11).unwrap();
        for (c, want) in [4.0, 1.0].into_iter().enumerate() {
            let col = s.column(c);
            let var = col.variance();
            assert!((var / want - 1.0).abs() < 0.05, "var {var} want {want}");
        }
        assert!(g.sample(0, 1).is_err());
    }

    #[test]
    fn intermediate_of_identical_inputs() {
        let g = FullGaussian::from_rows(vec![1.0, -2.0], &[vec![2.0, 0.3], vec![0.3, 0.5]]).unwrap();
        for a in [0.0, 0.3, 1.0] {
            for conv in [SkewConvention::Original, SkewConvention::Primed] {
                let m = intermediate_full(&g, &g, skew(a), conv).unwrap();
                assert_relative_eq!(m.mean(), g.mean(), epsilon = 1e-12);
                assert_relative_eq!(m.covariance(), g.covariance(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn intermediate_endpoints() {
        let g1 = FullGaussian::from_rows(vec![1.0, 0.5], &[vec![2.0, 0.3], vec![0.3, 0.5]]).unwrap();
        let g2 = FullGaussian::from_rows(vec![-1.0, 2.0], &[vec![1.0, -0.2], vec![-0.2, 3.0]]).unwrap();
        let orig = intermediate_full(&g1, &g2, skew(0.0), SkewConvention::Original).unwrap();
        assert_relative_eq!(orig.mean(), g1.mean(), epsilon = 1e-12);
        assert_relative_eq!(orig.covariance(), g1.covariance(), epsilon = 1e-12);
        let primed = intermediate_full(&g1, &g2, skew(0.0), SkewConvention::Primed).unwrap();
        assert_relative_eq!(primed.mean(), g2.mean(), epsilon = 1e-12);
        assert_relative_eq!(primed.covariance(), g2.covariance(), epsilon = 1e-12);
    }

    #[test]
    fn intermediate_hand_value() {
        let g1 = FullGaussian::univariate(0.0, 2.0).unwrap();
        let g2 = FullGaussian::univariate(0.0, 1.0).unwrap();
        let m = intermediate_full(&g1, &g2, skew(0.5), SkewConvention::Original).unwrap();
        assert_relative_eq!(m.covariance()[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn intermediate_diag_hand_values() {
        let g = DiagonalGaussian::from_variances(vec![2.0], &[4.0]).unwrap();
        let m = intermediate_diag(&g, skew(0.5), SkewConvention::Original);
        assert_relative_eq!(m.variances()[0], 1.6, epsilon = 1e-14);
        assert_relative_eq!(m.mu()[0], 0.4, epsilon = 1e-14);

        let std = DiagonalGaussian::standard(3).unwrap();
        for a in [0.0, 0.4, 1.0] {
            let m = intermediate_diag(&std, skew(a), SkewConvention::Primed);
            assert_eq!(m.mu(), &[0.0; 3]);
            assert_relative_eq!(m.variances().as_slice(), [1.0; 3].as_slice(), epsilon = 1e-15);
        }

        let g = DiagonalGaussian::new(vec![0.3, -1.2], vec![0.7, -0.4]).unwrap();
        let m = intermediate_diag(&g, skew(0.0), SkewConvention::Original);
        assert_relative_eq!(m.mu(), g.mu(), epsilon = 1e-15);
        assert_relative_eq!(m.log_var(), g.log_var(), epsilon = 1e-15);
    }

    #[test]
    fn json_shapes() {
        let d: DiagonalGaussian = serde_json::from_str(r#"{"mu": [0.5, 1.0], "log_var": [0.0, -1.0]}"#).unwrap();
        assert_eq!(d.dim(), 2);
        let f: FullGaussian = serde_json::from_str(r#"{"mu": [0.0, 1.0], "sigma": [[2.0, 0.5], [0.5, 1.0]]}"#).unwrap();
        assert_eq!(f.covariance()[(0, 1)], 0.5);
        let back: FullGaussian = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back, f);
        assert!(serde_json::from_str::<DiagonalGaussian>(r#"{"mu": [0.5], "log_var": [0.0, 1.0]}"#).is_err());
        assert!(serde_json::from_str::<FullGaussian>(r#"{"mu": [0.0], "sigma": [[-1.0]]}"#).is_err());
    }
}
