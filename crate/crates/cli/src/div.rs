use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use gjs_core::divergence::divergence_full;
use gjs_core::oracle::{default_bounds_1d, mc_gjs, mc_js, mc_kl, mc_lambda, quad_divergence_1d, McEstimate};
use gjs_core::{DivergenceSpec, Family, FullGaussian};
use serde::{Deserialize, Serialize};

use crate::manifest::{create_out, Manifest};
use crate::{parse_gaussian, CliError, Result, SpecArgs};

const QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Args)]
pub struct DivArgs {
    /// First argument: JSON file, inline JSON, or `mean,variance`.
    #[arg(allow_hyphen_values = true)]
    pub p: String,
    /// Second argument, in the same forms.
    #[arg(allow_hyphen_values = true)]
    pub q: String,
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Monte Carlo check with N draws per term from SEED.
    #[arg(long, num_args = 2, value_names = ["N", "SEED"])]
    pub oracle: Option<Vec<u64>>,
    /// Also write the result as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivReport {
    pub spec: DivergenceSpec,
    pub p: FullGaussian,
    pub q: FullGaussian,
    pub value: f64,
    pub method: Method,
    pub oracle: Option<McEstimate>,
}

/// Monte Carlo estimate of `spec` between `p` and `q`.
pub fn oracle_estimate(
    p: &FullGaussian,
    q: &FullGaussian,
    spec: &DivergenceSpec,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    Ok(match spec.family {
        Family::KlForward => mc_kl(p, q, n, seed)?,
        Family::KlReverse => mc_kl(q, p, n, seed)?,
        Family::Js => mc_js(p, q, n, seed)?,
        Family::Lambda => mc_lambda(p, q, spec.lambda_skew.value(), n, seed)?,
        Family::Gjs => mc_gjs(p, q, spec.alpha, spec.convention, false, n, seed)?,
        Family::GjsDual => mc_gjs(p, q, spec.alpha, spec.convention, true, n, seed)?,
        Family::Mmd => return Err(CliError::Usage("mmd compares samples, not densities".into())),
    })
}

/// Closed form where one exists, else quadrature in one dimension, else the
/// Monte Carlo estimate when `oracle` is given.
pub fn evaluate(
    p: FullGaussian,
    q: FullGaussian,
    spec: DivergenceSpec,
    oracle: Option<(usize, u64)>,
) -> Result<DivReport> {
    let est = oracle
        .map(|(n, seed)| oracle_estimate(&p, &q, &spec, n, seed))
        .transpose()?;
    let (value, method) = match divergence_full(&p, &q, &spec) {
        Ok(v) => (v, Method::ClosedForm),
        Err(gjs_core::Error::Unsupported(msg)) => match (p.dim(), est) {
            _ if spec.family == Family::Mmd => return Err(CliError::Usage(msg)),
            (1, _) => {
                let (lo, hi) = default_bounds_1d(&p, &q)?;
                (quad_divergence_1d(&p, &q, &spec, lo, hi, QUAD_TOL)?, Method::Quadrature)
            }
            (_, Some(e)) => (e.value, Method::MonteCarlo),
            _ => return Err(CliError::Usage(format!("{msg}; pass --oracle N SEED"))),
        },
        Err(e) => return Err(e.into()),
    };
    if !value.is_finite() {
        return Err(gjs_core::Error::NonFinite("divergence value").into());
    }
    Ok(DivReport {
        spec,
        p,
        q,
        value,
        method,
        oracle: est,
    })
}

pub fn cmd_div(args: &DivArgs, out: &mut dyn Write) -> Result<()> {
    let p = parse_gaussian(&args.p)?;
    let q = parse_gaussian(&args.q)?;
    let spec = args.spec.spec(Family::Gjs)?;
    let oracle = args.oracle.as_ref().map(|v| (v[0] as usize, v[1]));
    let report = evaluate(p, q, spec, oracle)?;
    writeln!(out, "{}", report.value)?;
    if let Some(e) = &report.oracle {
        writeln!(out, "mc {} std_error {}", e.value, e.std_error)?;
    }
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    if let Some(dir) = &args.out {
        create_out(dir)?;
        std::fs::write(dir.join("div.json"), serde_json::to_string_pretty(&report)?)?;
        let mut m = Manifest::new("div", &(&report.spec, &report.p, &report.q, oracle))?;
        m.add("div.json", None);
        m.write(dir)?;
    }
    Ok(())
}
