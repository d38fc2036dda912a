//! Closed-form divergences between Gaussians.
//!
//! Pairwise functions follow the argument order of the formulas: `kl_full(g1, g2)`
//! is `KL(g1‖g2)` and `gjs_full(g1, g2, ..)` is `JS^Gα(g1‖g2)`. The diagonal
//! functions compare a diagonal Gaussian `N₁` against the standard normal
//! `N₂ = N(0, I)`, with `N₁` in first position, which is how a VAE posterior is
//! regularised towards its prior.
//!
//! The default route for JS^Gα and its dual is the weighted sum of two KL terms
//! against the intermediate Gaussian. The fully expanded matrix forms are kept
//! as `*_expanded` functions for cross-checking.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dual::{Dual2, Scalar};
use crate::gaussian::{check_dim, intermediate_full, DiagonalGaussian, FullGaussian, Skew, SkewConvention};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `KL(target‖model)`, e.g. `KL(N(0, I)‖q(z|x))` for a VAE.
    KlForward,
    /// `KL(model‖target)`, the usual VAE regulariser.
    KlReverse,
    Js,
    Lambda,
    Gjs,
    GjsDual,
    Mmd,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::KlForward,
        Family::KlReverse,
        Family::Js,
        Family::Lambda,
        Family::Gjs,
        Family::GjsDual,
        Family::Mmd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::KlForward => "kl-forward",
            Family::KlReverse => "kl-reverse",
            Family::Js => "js",
            Family::Lambda => "lambda",
            Family::Gjs => "gjs",
            Family::GjsDual => "gjs-dual",
            Family::Mmd => "mmd",
        }
    }

    /// Whether the family depends on the skew and convention.
    pub fn is_skewed(self) -> bool {
        matches!(self, Family::Gjs | Family::GjsDual)
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Family::ALL
            .into_iter()
            .find(|f| f.name() == norm || f.name().replace('-', "") == norm)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown divergence family '{s}'")))
    }
}

/// Selects a divergence and its parameters.
///
/// `weight` is the Lagrange multiplier λ applied to the divergence term of a
/// loss; divergence values themselves are never weighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSpec {
    pub family: Family,
    pub alpha: Skew,
    pub lambda_skew: Skew,
    pub convention: SkewConvention,
    pub weight: f64,
    pub mmd_bandwidth: f64,
}

impl DivergenceSpec {
    /// Spec with α = λ-skew = 0.5, weight 1 and unit MMD bandwidth.
    pub fn new(family: Family, convention: SkewConvention) -> Self {
        Self {
            family,
            alpha: Skew::HALF,
            lambda_skew: Skew::HALF,
            convention,
            weight: 1.0,
            mmd_bandwidth: 1.0,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        self.alpha = Skew::new(alpha)?;
        Ok(self)
    }

    pub fn with_lambda_skew(mut self, lambda: f64) -> Result<Self> {
        self.lambda_skew = Skew::new(lambda)?;
        Ok(self)
    }

    pub fn with_weight(mut self, weight: f64) -> Result<Self> {
        self.weight = weight;
        self.validate()?;
        Ok(self)
    }

    pub fn with_mmd_bandwidth(mut self, bandwidth: f64) -> Result<Self> {
        self.mmd_bandwidth = bandwidth;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "weight must be finite and non-negative, got {}",
                self.weight
            )));
        }
        if !(self.mmd_bandwidth.is_finite() && self.mmd_bandwidth > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "MMD bandwidth must be positive, got {}",
                self.mmd_bandwidth
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Full-covariance closed forms
// ---------------------------------------------------------------------------

/// `KL(g1‖g2) = ½ (tr(Σ₂⁻¹Σ₁) + ln(|Σ₂|/|Σ₁|) + (μ₂-μ₁)ᵀΣ₂⁻¹(μ₂-μ₁) - n)`.
pub fn kl_full(g1: &FullGaussian, g2: &FullGaussian) -> Result<f64> {
    check_dim(g1.dim(), g2.dim())?;
    let n = g1.dim();
    // tr(Σ₂⁻¹Σ₁) = ‖L₂⁻¹ L₁‖²_F
    let mut m = g1.cholesky_factor().clone();
    g2.cholesky_factor().solve_lower_triangular_mut(&mut m);
    let trace = m.norm_squared();
    let mu1: Vec<f64> = g1.mean().iter().copied().collect();
    let maha = g2.mahalanobis_sq(&mu1);
    Ok(0.5 * (trace + g2.log_det() - g1.log_det() + maha - n as f64))
}

/// `JS^Gα(g1‖g2) = (1-α) KL(g1‖N_α) + α KL(g2‖N_α)`.
pub fn gjs_full(g1: &FullGaussian, g2: &FullGaussian, alpha: Skew, conv: SkewConvention) -> Result<f64> {
    let mid = intermediate_full(g1, g2, alpha, conv)?;
    let a = alpha.value();
    Ok((1.0 - a) * kl_full(g1, &mid)? + a * kl_full(g2, &mid)?)
}

/// `JS^Gα*(g1‖g2) = (1-α) KL(N_α‖g1) + α KL(N_α‖g2)`.
pub fn gjs_dual_full(g1: &FullGaussian, g2: &FullGaussian, alpha: Skew, conv: SkewConvention) -> Result<f64> {
    let mid = intermediate_full(g1, g2, alpha, conv)?;
    let a = alpha.value();
    Ok((1.0 - a) * kl_full(&mid, g1)? + a * kl_full(&mid, g2)?)
}

/// JS^Gα written out in matrix form:
///
/// ```text
/// ½ ( tr(Σ_α⁻¹((1-α)Σ₁ + αΣ₂)) + ln(|Σ_α| / (|Σ₁|^(1-α) |Σ₂|^α))
///     + (1-α)(μ_α-μ₁)ᵀΣ_α⁻¹(μ_α-μ₁) + α(μ_α-μ₂)ᵀΣ_α⁻¹(μ_α-μ₂) - n )
/// ```
///
/// Holds for either convention since only `N_α` changes.
pub fn gjs_full_expanded(g1: &FullGaussian, g2: &FullGaussian, alpha: Skew, conv: SkewConvention) -> Result<f64> {
    let mid = intermediate_full(g1, g2, alpha, conv)?;
    let a = alpha.value();
    let n = g1.dim() as f64;
    let mix = g1.covariance() * (1.0 - a) + g2.covariance() * a;
    let mut solved = mix.clone();
    mid.solve_in_place(&mut solved);
    let trace = solved.trace();
    let q1 = mid.mahalanobis_sq(g1.mean().as_slice());
    let q2 = mid.mahalanobis_sq(g2.mean().as_slice());
    let log_ratio = mid.log_det() - (1.0 - a) * g1.log_det() - a * g2.log_det();
    Ok(0.5 * (trace + log_ratio + (1.0 - a) * q1 + a * q2 - n))
}

/// The dual written out in matrix form:
///
/// ```text
/// ½ ( (1-α) μ₁ᵀΣ₁⁻¹μ₁ + α μ₂ᵀΣ₂⁻¹μ₂ - μ_αᵀΣ_α⁻¹μ_α + ln(|Σ₁|^(1-α) |Σ₂|^α / |Σ_α|) )
/// ```
///
/// The simplification uses `Σ_α⁻¹ = (1-α)Σ₁⁻¹ + αΣ₂⁻¹`, which only holds when the
/// intermediate weights match the outer weights, so the primed convention is
/// rejected.
pub fn gjs_dual_full_expanded(g1: &FullGaussian, g2: &FullGaussian, alpha: Skew, conv: SkewConvention) -> Result<f64> {
    if conv == SkewConvention::Primed {
        return Err(Error::Unsupported(
            "the expanded dual form only applies to the original convention".into(),
        ));
    }
    let mid = intermediate_full(g1, g2, alpha, conv)?;
    let a = alpha.value();
    let quad = |g: &FullGaussian| {
        let mu = g.mean();
        mu.dot(&g.solve(mu))
    };
    let log_ratio = (1.0 - a) * g1.log_det() + a * g2.log_det() - mid.log_det();
    Ok(0.5 * ((1.0 - a) * quad(g1) + a * quad(g2) - quad(&mid) + log_ratio))
}

/// `(1-α)² KL(g1‖g2) + α² KL(g2‖g1)`, the quadratic interpolation between the
/// two KL directions.
///
/// This omits the log-normaliser of the geometric mean, so it differs from
/// [`gjs_full`] under the primed convention by
/// [`log_geometric_normalizer`]`(g1, g2, α, Primed)`; the two agree only at the
/// endpoints α ∈ {0, 1} or when `g1 = g2`.
pub fn gjs_primed_quadratic(g1: &FullGaussian, g2: &FullGaussian, alpha: Skew) -> Result<f64> {
    let a = alpha.value();
    Ok((1.0 - a).powi(2) * kl_full(g1, g2)? + a * a * kl_full(g2, g1)?)
}

/// `ln ∫ g1^(1-w) g2^w dx` with `w = conv.mean_weight(α)`, computed from the
/// Gaussian log-partition function `A(μ, Σ) = ½ μᵀΣ⁻¹μ + ½ ln|Σ| + (n/2) ln 2π`:
/// `ln Z = A(N_w) - (1-w) A(g1) - w A(g2)`. Always `≤ 0`.
pub fn log_geometric_normalizer(
    g1: &FullGaussian,
    g2: &FullGaussian,
    alpha: Skew,
    conv: SkewConvention,
) -> Result<f64> {
    let mid = intermediate_full(g1, g2, alpha, conv)?;
    let w = conv.mean_weight(alpha);
    let partition = |g: &FullGaussian| {
        let mu = g.mean();
        0.5 * (mu.dot(&g.solve(mu)) + g.log_det())
    };
    Ok(partition(&mid) - (1.0 - w) * partition(g1) - w * partition(g2))
}

/// Closed-form divergence between two full Gaussians for the families that have one.
///
/// `KlForward` is `KL(g1‖g2)` and `KlReverse` is `KL(g2‖g1)`.
pub fn divergence_full(g1: &FullGaussian, g2: &FullGaussian, spec: &DivergenceSpec) -> Result<f64> {
    match spec.family {
        Family::KlForward => kl_full(g1, g2),
        Family::KlReverse => kl_full(g2, g1),
        Family::Gjs => gjs_full(g1, g2, spec.alpha, spec.convention),
        Family::GjsDual => gjs_dual_full(g1, g2, spec.alpha, spec.convention),
        Family::Js | Family::Lambda | Family::Mmd => Err(Error::Unsupported(format!(
            "{} has no closed form between Gaussians; use the oracle estimators",
            spec.family
        ))),
    }
}

// ---------------------------------------------------------------------------
// Diagonal reductions against N(0, I)
// ---------------------------------------------------------------------------

/// Per-dimension terms. `mu` and `lv` are the posterior mean and log-variance,
/// `w` the outer skew α and `a` the geometric-mean weight for the convention.
mod terms {
    use super::Scalar;

    pub(super) fn kl_reverse<S: Scalar>(mu: S, lv: S) -> S {
        (lv.exp() - lv + mu * mu + -1.0) * 0.5
    }

    pub(super) fn kl_forward<S: Scalar>(mu: S, lv: S) -> S {
        let inv = (-lv).exp();
        (inv + lv + mu * mu * inv + -1.0) * 0.5
    }

    /// Returns `(σ²_a, μ_a)` of the intermediate Gaussian.
    fn intermediate<S: Scalar>(mu: S, lv: S, a: f64) -> (S, S) {
        let var = lv.exp();
        let var_a = var / (var * a + (1.0 - a));
        let mu_a = var_a * mu * (1.0 - a) / var;
        (var_a, mu_a)
    }

    pub(super) fn gjs<S: Scalar>(mu: S, lv: S, w: f64, a: f64) -> S {
        let (var_a, mu_a) = intermediate(mu, lv, a);
        let var = lv.exp();
        let shift = mu_a - mu;
        let trace = (var * (1.0 - w) + w) / var_a;
        let log_ratio = var_a.ln() - lv * (1.0 - w);
        let quad = shift * shift * (1.0 - w) / var_a + mu_a * mu_a * w / var_a;
        (trace + log_ratio + quad + -1.0) * 0.5
    }

    /// `(1-w) KL(N_a‖N(μ, σ²)) + w KL(N_a‖N(0, 1))`.
    pub(super) fn gjs_dual<S: Scalar>(mu: S, lv: S, w: f64, a: f64) -> S {
        let (var_a, mu_a) = intermediate(mu, lv, a);
        let inv_var = (-lv).exp();
        let lv_a = var_a.ln();
        let shift = mu - mu_a;
        let to_posterior = var_a * inv_var + shift * shift * inv_var + -1.0 + lv - lv_a;
        let to_prior = var_a + mu_a * mu_a + -1.0 - lv_a;
        (to_posterior * (1.0 - w) + to_prior * w) * 0.5
    }

    /// `½ ((1-w) μ²/σ² - μ_a²/σ²_a + ln(σ^(2(1-w)) / σ²_a))`, valid when `a == w`.
    pub(super) fn gjs_dual_expanded<S: Scalar>(mu: S, lv: S, w: f64) -> S {
        let (var_a, mu_a) = intermediate(mu, lv, w);
        let inv_var = (-lv).exp();
        (mu * mu * inv_var * (1.0 - w) - mu_a * mu_a / var_a + lv * (1.0 - w) - var_a.ln()) * 0.5
    }
}

#[derive(Clone, Copy)]
enum DiagKind {
    KlForward,
    KlReverse,
    Gjs { w: f64, a: f64 },
    GjsDual { w: f64, a: f64 },
}

impl DiagKind {
    fn from_spec(family: Family, alpha: Skew, conv: SkewConvention) -> Result<Self> {
        let w = alpha.value();
        let a = conv.mean_weight(alpha);
        match family {
            Family::KlForward => Ok(DiagKind::KlForward),
            Family::KlReverse => Ok(DiagKind::KlReverse),
            Family::Gjs => Ok(DiagKind::Gjs { w, a }),
            Family::GjsDual => Ok(DiagKind::GjsDual { w, a }),
            other => Err(Error::Unsupported(format!("{other} has no diagonal closed form"))),
        }
    }

    #[inline]
    fn eval<S: Scalar>(self, mu: S, lv: S) -> S {
        match self {
            DiagKind::KlForward => terms::kl_forward(mu, lv),
            DiagKind::KlReverse => terms::kl_reverse(mu, lv),
            DiagKind::Gjs { w, a } => terms::gjs(mu, lv, w, a),
            DiagKind::GjsDual { w, a } => terms::gjs_dual(mu, lv, w, a),
        }
    }
}

fn sum_terms(g: &DiagonalGaussian, f: impl Fn(f64, f64) -> f64) -> f64 {
    g.mu().iter().zip(g.log_var()).map(|(m, lv)| f(*m, *lv)).sum()
}

/// `KL(N₁‖N(0, I)) = ½ Σᵢ (σᵢ² - ln σᵢ² + μᵢ² - 1)`.
pub fn kl_diag_reverse(g: &DiagonalGaussian) -> f64 {
    sum_terms(g, terms::kl_reverse)
}

/// `KL(N(0, I)‖N₁) = ½ Σᵢ (σᵢ⁻² + ln σᵢ² + μᵢ²/σᵢ² - 1)`.
pub fn kl_diag_forward(g: &DiagonalGaussian) -> f64 {
    sum_terms(g, terms::kl_forward)
}

/// `JS^Gα(N₁‖N(0, I))`:
///
/// ```text
/// ½ Σᵢ ( ((1-α)σᵢ² + α)/σ²_α,i + ln(σ²_α,i / σᵢ^(2(1-α)))
///        + (1-α)(μ_α,i - μᵢ)²/σ²_α,i + α μ²_α,i/σ²_α,i - 1 )
/// ```
///
/// with `(σ²_α,i, μ_α,i)` from [`crate::gaussian::intermediate_diag`] under `conv`.
pub fn gjs_diag(g: &DiagonalGaussian, alpha: Skew, conv: SkewConvention) -> f64 {
    let (w, a) = (alpha.value(), conv.mean_weight(alpha));
    sum_terms(g, |m, lv| terms::gjs(m, lv, w, a))
}

/// `JS^Gα*(N₁‖N(0, I))`, evaluated per dimension as
/// `(1-α) KL(N_α‖N₁) + α KL(N_α‖N(0, 1))`.
pub fn gjs_dual_diag(g: &DiagonalGaussian, alpha: Skew, conv: SkewConvention) -> f64 {
    let (w, a) = (alpha.value(), conv.mean_weight(alpha));
    sum_terms(g, |m, lv| terms::gjs_dual(m, lv, w, a))
}

/// The dual reduced to `½ Σᵢ ((1-α) μᵢ²/σᵢ² - μ²_α,i/σ²_α,i + ln(σᵢ^(2(1-α)) / σ²_α,i))`.
///
/// Only valid for the original convention (see [`gjs_dual_full_expanded`]).
pub fn gjs_dual_diag_expanded(g: &DiagonalGaussian, alpha: Skew, conv: SkewConvention) -> Result<f64> {
    if conv == SkewConvention::Primed {
        return Err(Error::Unsupported(
            "the expanded dual form only applies to the original convention".into(),
        ));
    }
    let w = alpha.value();
    Ok(sum_terms(g, |m, lv| terms::gjs_dual_expanded(m, lv, w)))
}

/// Diagonal closed form selected by `spec`, for `KlForward`, `KlReverse`, `Gjs`
/// and `GjsDual`.
pub fn divergence_diag(g: &DiagonalGaussian, spec: &DivergenceSpec) -> Result<f64> {
    let kind = DiagKind::from_spec(spec.family, spec.alpha, spec.convention)?;
    Ok(sum_terms(g, |m, lv| kind.eval(m, lv)))
}

/// Evaluates a diagonal regulariser on raw slices and accumulates its gradient.
///
/// Returns the divergence of `N(mu, diag(exp(log_var)))` from `N(0, I)` and adds
/// `scale · ∂D/∂μ` and `scale · ∂D/∂log σ²` into `grad_mu` and `grad_log_var`.
pub fn diag_value_and_grad(
    spec: &DivergenceSpec,
    mu: &[f64],
    log_var: &[f64],
    scale: f64,
    grad_mu: &mut [f64],
    grad_log_var: &mut [f64],
) -> Result<f64> {
    let kind = DiagKind::from_spec(spec.family, spec.alpha, spec.convention)?;
    let n = mu.len();
    check_dim(n, log_var.len())?;
    check_dim(n, grad_mu.len())?;
    check_dim(n, grad_log_var.len())?;
    let mut total = 0.0;
    for i in 0..n {
        let out = kind.eval(Dual2::var(mu[i], 0), Dual2::var(log_var[i], 1));
        total += out.value;
        grad_mu[i] += scale * out.d[0];
        grad_log_var[i] += scale * out.d[1];
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Maximum mean discrepancy
// ---------------------------------------------------------------------------

/// Unbiased MMD² between the rows of two samples with a Gaussian kernel
/// `k(x, y) = exp(-‖x-y‖² / (2 h²))`.
pub fn mmd(samples_p: &DMatrix<f64>, samples_q: &DMatrix<f64>, bandwidth: f64) -> Result<f64> {
    check_dim(samples_p.ncols(), samples_q.ncols())?;
    let p = row_major(samples_p);
    let q = row_major(samples_q);
    mmd_value_and_grad(&p, &q, samples_p.ncols(), bandwidth, None)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Row-major MMD² core. When `grad_p` is given, `∂MMD²/∂p` is added into it.
pub fn mmd_value_and_grad(
    p: &[f64],
    q: &[f64],
    dim: usize,
    bandwidth: f64,
    mut grad_p: Option<&mut [f64]>,
) -> Result<f64> {
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "MMD bandwidth must be positive, got {bandwidth}"
        )));
    }
    if dim == 0 || !p.len().is_multiple_of(dim) || !q.len().is_multiple_of(dim) {
        return Err(Error::InvalidParameter(
            "sample buffers are not a multiple of the dimension".into(),
        ));
    }
    let m = p.len() / dim;
    let n = q.len() / dim;
    if m < 2 || n < 2 {
        return Err(Error::InvalidParameter(
            "MMD needs at least two rows in each sample".into(),
        ));
    }
    if let Some(g) = grad_p.as_deref() {
        check_dim(p.len(), g.len())?;
    }
    let inv_two_h2 = 0.5 / (bandwidth * bandwidth);
    let row = |_: &[f64], i: usize| -> (usize, usize) { (i * dim, (i + 1) * dim) };
    let kernel = |x: &[f64], y: &[f64]| -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 * inv_two_h2).exp()
    };

    let c_pp = 1.0 / (m * (m - 1)) as f64;
    let c_qq = 1.0 / (n * (n - 1)) as f64;
    let c_pq = 1.0 / (m * n) as f64;

    let mut k_pp = 0.0;
    for i in 0..m {
        let (a, b) = row(p, i);
        for j in (i + 1)..m {
            let (c, d) = row(p, j);
            let k = kernel(&p[a..b], &p[c..d]);
            k_pp += 2.0 * k;
            if let Some(g) = grad_p.as_deref_mut() {
                // d/dx_i k(x_i, x_j) = -k (x_i - x_j) / h²
                let s = -2.0 * c_pp * k * 2.0 * inv_two_h2;
                for t in 0..dim {
                    let diff = p[a + t] - p[c + t];
                    g[a + t] += s * diff;
                    g[c + t] -= s * diff;
                }
            }
        }
    }
    let mut k_qq = 0.0;
    for i in 0..n {
        let (a, b) = row(q, i);
        for j in (i + 1)..n {
            let (c, d) = row(q, j);
            k_qq += 2.0 * kernel(&q[a..b], &q[c..d]);
        }
    }
    let mut k_pq = 0.0;
    for i in 0..m {
        let (a, b) = row(p, i);
        for j in 0..n {
            let (c, d) = row(q, j);
            let k = kernel(&p[a..b], &q[c..d]);
            k_pq += k;
            if let Some(g) = grad_p.as_deref_mut() {
                let s = 2.0 * c_pq * k * 2.0 * inv_two_h2;
                for t in 0..dim {
                    g[a + t] += s * (p[a + t] - q[c + t]);
                }
            }
        }
    }
    Ok(c_pp * k_pp + c_qq * k_qq - 2.0 * c_pq * k_pq)
}

/// Median heuristic: the median pairwise Euclidean distance over the pooled rows
/// (at most the first 1000 of each sample).
pub fn median_bandwidth(samples_p: &DMatrix<f64>, samples_q: &DMatrix<f64>) -> Result<f64> {
    check_dim(samples_p.ncols(), samples_q.ncols())?;
    let rows: Vec<Vec<f64>> = samples_p
        .row_iter()
        .take(1000)
        .chain(samples_q.row_iter().take(1000))
        .map(|r| r.iter().copied().collect())
        .collect();
    let mut dists = Vec::with_capacity(rows.len() * rows.len() / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let d2: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return Err(Error::InvalidParameter(
            "median heuristic needs at least two rows".into(),
        ));
    }
    dists.sort_by(f64::total_cmp);
    let med = dists[dists.len() / 2];
    if med > 0.0 {
        Ok(med)
    } else {
        Err(Error::InvalidParameter("all pooled rows coincide".into()))
    }
}
