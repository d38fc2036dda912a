//! The `gjs` command-line tool: closed-form divergences with oracle checks, the
//! bivariate fitting harness, VAE training and α sweeps, and integrand dumps.
//!
//! Commands that write files take `--out DIR` and leave a `manifest.json` there
//! listing every file written together with the configuration hashes behind it.
//!
//! Exit codes: 0 on success, 2 for usage or input errors, 3 for numerical failure.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gjs_core::{DivergenceSpec, Family, SkewConvention};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub mod div;
mod error;
pub mod fit;
mod input;
pub mod integrand;
pub mod manifest;
pub mod train;

pub use error::{CliError, Result, EXIT_NUMERICAL, EXIT_USAGE};
pub use input::parse_gaussian;

#[derive(Debug, Parser)]
#[command(
    name = "gjs",
    version,
    about = "Skew-geometric Jensen-Shannon divergences and VAE experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Divergence between two Gaussians, optionally checked by Monte Carlo.
    Div(div::DivArgs),
    /// Fits one bivariate Gaussian to samples from a mixture.
    Fit(fit::FitArgs),
    /// Trains one VAE.
    Train(train::TrainArgs),
    /// Trains a grid of VAEs over families, conventions, skews and seeds.
    Sweep(train::SweepArgs),
    /// Pointwise integrands and mean densities for two univariate Gaussians.
    Integrand(integrand::IntegrandArgs),
    /// Converts an IDX image file (optionally gzipped) to the GJSD container.
    Convert { idx: PathBuf, out: PathBuf },
}

/// Divergence selection shared by several commands.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SpecArgs {
    #[arg(long)]
    pub family: Option<Family>,
    /// Skew α of JS^Gα and its dual.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Skew λ of the λ divergence.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value = "primed")]
    pub conv: SkewConvention,
    /// Use the dual JS^Gα*.
    #[arg(long)]
    pub dual: bool,
    /// Multiplier on the divergence term of a training loss.
    #[arg(long, default_value_t = 1.0)]
    pub weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mmd_bandwidth: f64,
}

impl SpecArgs {
    pub fn spec(&self, default: Family) -> Result<DivergenceSpec> {
        let family = match (self.family.unwrap_or(default), self.dual) {
            (f, false) => f,
            (Family::Gjs | Family::GjsDual, true) => Family::GjsDual,
            (f, true) => return Err(CliError::Usage(format!("--dual applies to gjs, not {f}"))),
        };
        Ok(DivergenceSpec::new(family, self.conv)
            .with_alpha(self.alpha)?
            .with_lambda_skew(self.lambda)?
            .with_weight(self.weight)?
            .with_mmd_bandwidth(self.mmd_bandwidth)?)
    }
}

/// Parses a value by its serde name, e.g. `mean-latent`.
pub(crate) fn by_serde_name<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Div(a) => div::cmd_div(&a, out),
        Command::Fit(a) => fit::cmd_fit(&a, out),
        Command::Train(a) => train::cmd_train(&a, out),
        Command::Sweep(a) => train::cmd_sweep(&a, out),
        Command::Integrand(a) => integrand::cmd_integrand(&a, out),
        Command::Convert { idx, out: path } => {
            let n = gjs_vae::data::convert_idx(&idx, &path)?;
            writeln!(out, "wrote {n} images to {}", path.display())?;
            Ok(())
        }
    }
}
