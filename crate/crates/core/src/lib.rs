//! Skew-geometric Jensen-Shannon divergences for Gaussian distributions.
//!
//! The crate is organised bottom-up:
//!
//! - [`gaussian`]: diagonal and full-covariance Gaussians, sampling, densities and the
//!   geometric-mean ("intermediate") Gaussian `N_α` in both skew conventions.
//! - [`divergence`]: closed forms for KL, JS^Gα and its dual JS^Gα*, the diagonal
//!   reductions used as VAE regularisers, and an MMD baseline.
//! - [`oracle`]: independent Monte Carlo and adaptive-quadrature estimators used to
//!   check every closed form, including the JS and λ divergences that have none.
//! - [`fit2d`]: fits a single bivariate Gaussian to mixture samples by minimising a
//!   sample-based divergence estimate.
//!
//! ## Skew conventions
//!
//! Every JS^Gα function takes an explicit [`SkewConvention`]. `Original` uses the
//! geometric mean `p^(1-α) q^α`, whose endpoints α ∈ {0, 1} give zero divergence.
//! `Primed` reverses the geometric mean to `p^α q^(1-α)` while keeping the outer KL
//! weights, which makes JS^Gα interpolate between `KL(p‖q)` (α → 0) and `KL(q‖p)`
//! (α → 1). The primed variant is the one normally meant by "JS^Gα" in the VAE
//! setting.

pub mod divergence;
mod dual;
mod error;
pub mod fit2d;
pub mod gaussian;
pub mod oracle;

pub use divergence::{DivergenceSpec, Family};
pub use error::{Error, Result};
pub use gaussian::{DiagonalGaussian, FullGaussian, Skew, SkewConvention};
