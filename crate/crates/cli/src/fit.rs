use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::PathBuf;

use clap::Args;
use gjs_core::fit2d::{
    fit, level_set_dump, mixture_sample, ContourLevel, DataDensity, FitInit, FitOptions, FitTrace, Grid2d, MixtureSpec,
};
use gjs_core::Family;
use serde::{Deserialize, Serialize};

use crate::manifest::{create_out, Manifest};
use crate::{by_serde_name, CliError, Result, SpecArgs};

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Mixture JSON (`{"components": [{"weight", "mean", "covariance"}, ..]}`);
    /// the built-in two-mode benchmark when omitted.
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Number of data points drawn from the mixture.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = 2048)]
    pub model_samples: usize,
    /// Seeds both the data draw and the descent.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Score against the generating mixture instead of a KDE of the samples.
    #[arg(long)]
    pub exact_density: bool,
    /// `standard` or `moment-matched`.
    #[arg(long, default_value = "standard", value_parser = by_serde_name::<FitInit>)]
    pub init: FitInit,
    /// Probability masses of the dumped contours.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.9, 0.99])]
    pub levels: Vec<f64>,
    /// Level-set grid covers `[-W, W]²`.
    #[arg(long, default_value_t = 8.0)]
    pub half_width: f64,
    #[arg(long, default_value_t = 161)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub mixture: MixtureSpec,
    pub samples: usize,
    pub spec: gjs_core::DivergenceSpec,
    pub options: FitOptions,
    pub levels: Vec<f64>,
    pub grid: Grid2d,
}

impl FitArgs {
    pub fn config(&self) -> Result<FitConfig> {
        let mixture = match &self.mixture {
            None => MixtureSpec::benchmark(),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
                    path: path.clone(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|source| CliError::Parse {
                    path: path.display().to_string(),
                    source,
                })?
            }
        };
        let options = FitOptions {
            lr: self.lr,
            iters: self.iters,
            n_model_samples: self.model_samples,
            seed: self.seed,
            data_density: if self.exact_density {
                DataDensity::Exact(mixture.clone())
            } else {
                DataDensity::Kde
            },
            init: self.init,
        };
        Ok(FitConfig {
            spec: self.spec.spec(Family::Gjs)?,
            mixture,
            samples: self.samples,
            options,
            levels: self.levels.clone(),
            grid: Grid2d::square(self.half_width, self.grid),
        })
    }
}

/// Draws the data and runs the descent.
pub fn run_fit(cfg: &FitConfig) -> Result<FitTrace> {
    let data = mixture_sample(&cfg.mixture, cfg.samples, cfg.options.seed)?;
    Ok(fit(&data, &cfg.spec, &cfg.options)?)
}

fn write_trace(path: &std::path::Path, trace: &FitTrace) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    trace.write_json(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_trace(input: impl Read) -> Result<FitTrace> {
    Ok(serde_json::from_reader(input)?)
}

/// Rows of a `x, y, density` level-set CSV.
pub fn read_level_csv(input: impl Read) -> Result<Vec<[f64; 3]>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<(f64, f64, f64)>()
        .map(|row| row.map(|(x, y, d)| [x, y, d]).map_err(Into::into))
        .collect()
}

pub fn read_contours_csv(input: impl Read) -> Result<Vec<ContourLevel>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

pub fn cmd_fit(args: &FitArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = args.config()?;
    create_out(&args.out)?;
    let mut manifest = Manifest::new("fit", &cfg)?;
    let trace = match run_fit(&cfg) {
        Ok(t) => t,
        Err(CliError::Core(gjs_core::Error::FitDiverged { iteration, partial })) => {
            write_trace(&args.out.join("trace.json"), &partial)?;
            manifest.add("trace.json", None);
            manifest.write(&args.out)?;
            return Err(gjs_core::Error::FitDiverged { iteration, partial }.into());
        }
        Err(e) => return Err(e),
    };
    write_trace(&args.out.join("trace.json"), &trace)?;
    let g = trace.final_params.to_gaussian()?;
    let dump = level_set_dump(&g, &cfg.levels, &cfg.grid)?;
    dump.write_csv(BufWriter::new(File::create(args.out.join("levels.csv"))?))?;
    let mut w = csv::Writer::from_path(args.out.join("contours.csv"))?;
    for c in &dump.contours {
        w.serialize(c)?;
    }
    w.flush()?;
    for f in ["trace.json", "levels.csv", "contours.csv"] {
        manifest.add(f, None);
    }
    manifest.write(&args.out)?;

    let mu = trace.final_params.mu;
    let s = trace.final_params.covariance();
    writeln!(out, "mean {} {}", mu[0], mu[1])?;
    writeln!(out, "covariance {} {} {} {}", s[0][0], s[0][1], s[1][0], s[1][1])?;
    writeln!(out, "det {}", s[0][0] * s[1][1] - s[0][1] * s[1][0])?;
    writeln!(out, "loss {}", trace.final_loss)?;
    Ok(())
}
