use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{log_mixture, Density};
use crate::divergence::{DivergenceSpec, Family};
use crate::gaussian::{check_dim, intermediate_full, FullGaussian};
use crate::{Error, Result};

const INITIAL_PANELS: usize = 64;
const MAX_DEPTH: u32 = 40;
const MAX_SUBDIVISIONS: usize = 4_000_000;

/// Adaptive Simpson integration of `f` over `[lo, hi]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidParameter(format!("bad integration bounds [{lo}, {hi}]")));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteIntegrand { point: vec![x] })
        }
    };
    let mut state = Simpson {
        eval: &eval,
        subdivisions: 0,
        converged: true,
    };
    let width = (hi - lo) / INITIAL_PANELS as f64;
    let panel_tol = tol / INITIAL_PANELS as f64;
    let mut total = 0.0;
    for k in 0..INITIAL_PANELS {
        let a = lo + k as f64 * width;
        let b = if k + 1 == INITIAL_PANELS { hi } else { a + width };
        let (fa, fm, fb) = (eval(a)?, eval(0.5 * (a + b))?, eval(b)?);
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        total += state.refine(a, b, fa, fm, fb, whole, panel_tol, MAX_DEPTH)?;
    }
    if state.converged {
        Ok(total)
    } else {
        Err(Error::QuadratureTolerance {
            tol,
            subdivisions: state.subdivisions,
            estimate: total,
        })
    }
}

struct Simpson<'a> {
    eval: &'a dyn Fn(f64) -> Result<f64>,
    subdivisions: usize,
    converged: bool,
}

impl Simpson<'_> {
    #[allow(clippy::too_many_arguments)]
    fn refine(&mut self, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> Result<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = ((self.eval)(lm)?, (self.eval)(rm)?);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 || self.subdivisions >= MAX_SUBDIVISIONS {
            self.converged = false;
            return Ok(left + right + delta / 15.0);
        }
        self.subdivisions += 1;
        let l = self.refine(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
        let r = self.refine(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
        Ok(l + r)
    }
}

/// `[min(μᵢ - 10σᵢ), max(μᵢ + 10σᵢ)]` over two univariate Gaussians.
pub fn default_bounds_1d(p: &FullGaussian, q: &FullGaussian) -> Result<(f64, f64)> {
    check_dim(1, p.dim())?;
    check_dim(1, q.dim())?;
    let env = |g: &FullGaussian| {
        let (m, s) = (g.mean()[0], g.covariance()[(0, 0)].sqrt());
        (m - 10.0 * s, m + 10.0 * s)
    };
    let (a, b) = (env(p), env(q));
    Ok((a.0.min(b.0), a.1.max(b.1)))
}

/// One point of a divergence integrand.
///
/// `mean_density` is the reference density the family compares against: the
/// mixture for JS and λ, the normalised geometric mean for JS^Gα and its dual,
/// and the second argument of the KL (`q` for forward, `p` for reverse).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrandRow {
    pub x: f64,
    pub p: f64,
    pub q: f64,
    pub mean_density: f64,
    pub integrand: f64,
}

/// Pointwise integrand of a divergence between two univariate densities.
pub struct Integrand1d<'a> {
    p: &'a dyn Density,
    q: &'a dyn Density,
    spec: DivergenceSpec,
    mean: MeanKind,
}

enum MeanKind {
    SecondArgument,
    FirstArgument,
    Mixture(f64),
    Gaussian(FullGaussian),
    Geometric { a: f64, log_z: f64 },
}

/// `x ln(x/y)` written in log space, with the `0 ln 0 = 0` convention.
#[inline]
fn xlogratio(lx: f64, ly: f64) -> f64 {
    if lx == f64::NEG_INFINITY {
        0.0
    } else {
        lx.exp() * (lx - ly)
    }
}

/// Builds the pointwise integrand. `[lo, hi]` is only used to normalise the
/// geometric mean when the inputs are not both Gaussian.
pub fn integrand_1d<'a>(
    p: &'a dyn Density,
    q: &'a dyn Density,
    spec: &DivergenceSpec,
    lo: f64,
    hi: f64,
) -> Result<Integrand1d<'a>> {
    check_dim(1, p.dim())?;
    check_dim(1, q.dim())?;
    let mean = match spec.family {
        Family::KlForward => MeanKind::SecondArgument,
        Family::KlReverse => MeanKind::FirstArgument,
        Family::Js => MeanKind::Mixture(0.5),
        Family::Lambda => MeanKind::Mixture(spec.lambda_skew.value()),
        Family::Gjs | Family::GjsDual => match (p.as_gaussian(), q.as_gaussian()) {
            (Some(g1), Some(g2)) => MeanKind::Gaussian(intermediate_full(g1, g2, spec.alpha, spec.convention)?),
            _ => {
                let a = spec.convention.mean_weight(spec.alpha);
                let z = adaptive_simpson(
                    |x| ((1.0 - a) * p.log_density(&[x]) + a * q.log_density(&[x])).exp(),
                    lo,
                    hi,
                    1e-13,
                )?;
                MeanKind::Geometric { a, log_z: z.ln() }
            }
        },
        Family::Mmd => {
            return Err(Error::Unsupported(
                "MMD is not an integral of a pointwise integrand".into(),
            ))
        }
    };
    Ok(Integrand1d {
        p,
        q,
        spec: *spec,
        mean,
    })
}

impl Integrand1d<'_> {
    fn log_mean(&self, x: f64, lp: f64, lq: f64) -> f64 {
        match &self.mean {
            MeanKind::SecondArgument => lq,
            MeanKind::FirstArgument => lp,
            MeanKind::Mixture(lambda) => log_mixture(lp, lq, *lambda),
            MeanKind::Gaussian(g) => g.log_pdf_unchecked(&[x]),
            MeanKind::Geometric { a, log_z } => (1.0 - a) * lp + a * lq - log_z,
        }
    }

    pub fn eval(&self, x: f64) -> IntegrandRow {
        let lp = self.p.log_density(&[x]);
        let lq = self.q.log_density(&[x]);
        let lm = self.log_mean(x, lp, lq);
        let w = self.spec.alpha.value();
        let integrand = match self.spec.family {
            Family::KlForward => xlogratio(lp, lq),
            Family::KlReverse => xlogratio(lq, lp),
            Family::Js => 0.5 * xlogratio(lp, lm) + 0.5 * xlogratio(lq, lm),
            Family::Lambda => {
                let l = self.spec.lambda_skew.value();
                l * xlogratio(lp, lm) + (1.0 - l) * xlogratio(lq, lm)
            }
            Family::Gjs => (1.0 - w) * xlogratio(lp, lm) + w * xlogratio(lq, lm),
            Family::GjsDual => (1.0 - w) * xlogratio(lm, lp) + w * xlogratio(lm, lq),
            Family::Mmd => unreachable!("rejected in integrand_1d"),
        };
        IntegrandRow {
            x,
            p: lp.exp(),
            q: lq.exp(),
            mean_density: lm.exp(),
            integrand,
        }
    }
}

/// Integrates the selected divergence's integrand over `[lo, hi]`.
pub fn quad_divergence_1d(
    p: &dyn Density,
    q: &dyn Density,
    spec: &DivergenceSpec,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64> {
    let f = integrand_1d(p, q, spec, lo, hi)?;
    adaptive_simpson(|x| f.eval(x).integrand, lo, hi, tol)
}

/// `points` evenly spaced integrand rows over `[lo, hi]`.
pub fn integrand_table(
    p: &dyn Density,
    q: &dyn Density,
    spec: &DivergenceSpec,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<Vec<IntegrandRow>> {
    if points < 2 {
        return Err(Error::InvalidParameter(
            "integrand table needs at least two points".into(),
        ));
    }
    let f = integrand_1d(p, q, spec, lo, hi)?;
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|i| f.eval(lo + i as f64 * step)).collect())
}

/// CSV with columns `x, p, q, mean_density, integrand`.
pub fn write_integrand_csv(rows: &[IntegrandRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{gjs_dual_full, gjs_full, kl_full};
    use crate::{Skew, SkewConvention};
    use approx::assert_relative_eq;

    fn uni(m: f64, v: f64) -> FullGaussian {
        FullGaussian::univariate(m, v).unwrap()
    }

    #[test]
    fn simpson_on_polynomial_and_gaussian() {
        let v = adaptive_simpson(|x| x * x, 0.0, 3.0, 1e-12).unwrap();
        assert_relative_eq!(v, 9.0, epsilon = 1e-12);
        let v = adaptive_simpson(|x| (-0.5 * x * x).exp(), -12.0, 12.0, 1e-12).unwrap();
        assert_relative_eq!(v, (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-11);
    }

    #[test]
    fn simpson_reports_failure_with_estimate() {
        let err = adaptive_simpson(|x| (1.0 / x).sin(), 1e-9, 1.0, 1e-15).unwrap_err();
        assert!(matches!(err, Error::QuadratureTolerance { estimate, .. } if estimate.is_finite()));
    }

    #[test]
    fn kl_by_quadrature() {
        let (p, q) = (uni(1.0, 1.0), uni(0.0, 1.0));
        let spec = DivergenceSpec::new(Family::KlForward, SkewConvention::Primed);
        let v = quad_divergence_1d(&p, &q, &spec, -12.0, 12.0, 1e-9).unwrap();
        assert!((v - 0.5).abs() < 1e-8);
        let spec = DivergenceSpec::new(Family::KlReverse, SkewConvention::Primed);
        let v = quad_divergence_1d(&p, &uni(0.0, 2.0), &spec, -20.0, 20.0, 1e-10).unwrap();
        assert_relative_eq!(v, kl_full(&uni(0.0, 2.0), &p).unwrap(), epsilon = 1e-8);
    }

    #[test]
    fn gjs_by_quadrature_matches_closed_form() {
        let (p, q) = (uni(-2.0, 1.0), uni(2.0, 2.0));
        let (lo, hi) = default_bounds_1d(&p, &q).unwrap();
        for conv in [SkewConvention::Original, SkewConvention::Primed] {
            let spec = DivergenceSpec::new(Family::Gjs, conv);
            let v = quad_divergence_1d(&p, &q, &spec, lo, hi, 1e-10).unwrap();
            assert!((v - gjs_full(&p, &q, Skew::HALF, conv).unwrap()).abs() < 1e-6);
            let spec = DivergenceSpec::new(Family::GjsDual, conv).with_alpha(0.2).unwrap();
            let v = quad_divergence_1d(&p, &q, &spec, lo, hi, 1e-10).unwrap();
            let a = Skew::new(0.2).unwrap();
            assert!((v - gjs_dual_full(&p, &q, a, conv).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_inputs_integrate_to_zero() {
        let p = uni(0.3, 1.7);
        for family in [
            Family::KlForward,
            Family::Js,
            Family::Lambda,
            Family::Gjs,
            Family::GjsDual,
        ] {
            let spec = DivergenceSpec::new(family, SkewConvention::Primed);
            let v = quad_divergence_1d(&p, &p, &spec, -15.0, 15.0, 1e-9).unwrap();
            assert!(v.abs() <= 1e-9, "{family}: {v}");
        }
    }

    #[test]
    fn csv_has_expected_columns() {
        let (p, q) = (uni(-2.0, 1.0), uni(2.0, 2.0));
        let spec = DivergenceSpec::new(Family::Js, SkewConvention::Primed);
        let rows = integrand_table(&p, &q, &spec, -5.0, 5.0, 11).unwrap();
        let mut buf = Vec::new();
        write_integrand_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,p,q,mean_density,integrand\n"));
        assert_eq!(text.lines().count(), 12);
    }
}
