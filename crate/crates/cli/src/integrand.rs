use std::io::{Read, Write};
use std::path::PathBuf;

use clap::Args;
use gjs_core::oracle::{default_bounds_1d, integrand_1d, Integrand1d};
use gjs_core::{DivergenceSpec, Family, FullGaussian, SkewConvention};

use crate::manifest::{create_out, Manifest};
use crate::{parse_gaussian, CliError, Result};

#[derive(Debug, Clone, Args)]
pub struct IntegrandArgs {
    /// First univariate Gaussian: `mean,variance`, inline JSON, or a JSON file.
    #[arg(allow_hyphen_values = true)]
    pub p: String,
    #[arg(allow_hyphen_values = true)]
    pub q: String,
    #[arg(long, value_delimiter = ',', default_values_t = [Family::Gjs, Family::GjsDual, Family::KlForward, Family::KlReverse, Family::Js])]
    pub families: Vec<Family>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Skew of the arithmetic mixture and the λ divergence.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value = "primed")]
    pub conv: SkewConvention,
    #[arg(long, allow_hyphen_values = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub hi: Option<f64>,
    /// Odd, so the table can be integrated with Simpson's rule.
    #[arg(long, default_value_t = 4001)]
    pub points: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Columns and rows of an integrand CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrandTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl IntegrandTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(input: impl Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let columns: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| CliError::Usage(format!("bad number '{v}': {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }
}

/// Composite Simpson's rule over equally spaced samples; `values.len()` must be odd.
pub fn simpson(values: &[f64], step: f64) -> f64 {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "Simpson's rule needs an odd number of points");
    let inner: f64 = values[1..n - 1]
        .iter()
        .enumerate()
        .map(|(i, v)| if i % 2 == 0 { 4.0 * v } else { 2.0 * v })
        .sum();
    step / 3.0 * (values[0] + inner + values[n - 1])
}

/// Tabulates `x, p, q`, the three mean densities and one integrand per family.
///
/// `base` supplies α, the λ skew of the arithmetic mixture, and the convention.
pub fn integrand_columns(
    p: &FullGaussian,
    q: &FullGaussian,
    families: &[Family],
    base: &DivergenceSpec,
    range: (f64, f64),
    points: usize,
) -> Result<IntegrandTable> {
    if points < 3 || points.is_multiple_of(2) {
        return Err(CliError::Usage(format!(
            "--points must be odd and at least 3, got {points}"
        )));
    }
    let (lo, hi) = range;
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(CliError::Usage(format!("empty range [{lo}, {hi}]")));
    }
    let conv = base.convention;
    let spec = |family, convention| -> Result<DivergenceSpec> {
        Ok(DivergenceSpec {
            family,
            convention,
            ..*base
        })
    };
    let means: Vec<Integrand1d> = vec![
        integrand_1d(p, q, &spec(Family::Lambda, conv)?, lo, hi)?,
        integrand_1d(p, q, &spec(Family::Gjs, SkewConvention::Original)?, lo, hi)?,
        integrand_1d(p, q, &spec(Family::Gjs, SkewConvention::Primed)?, lo, hi)?,
    ];
    let fs = families
        .iter()
        .map(|&f| Ok(integrand_1d(p, q, &spec(f, conv)?, lo, hi)?))
        .collect::<Result<Vec<_>>>()?;
    let mut columns: Vec<String> = [
        "x",
        "p",
        "q",
        "arithmetic_mean",
        "geometric_original",
        "geometric_primed",
    ]
    .map(String::from)
    .to_vec();
    columns.extend(families.iter().map(|f| f.to_string()));
    let step = (hi - lo) / (points - 1) as f64;
    let rows = (0..points)
        .map(|i| {
            let x = lo + i as f64 * step;
            let first = means[0].eval(x);
            let mut row = vec![x, first.p, first.q, first.mean_density];
            row.extend(means[1..].iter().map(|m| m.eval(x).mean_density));
            row.extend(fs.iter().map(|f| f.eval(x).integrand));
            row
        })
        .collect();
    Ok(IntegrandTable { columns, rows })
}

pub fn cmd_integrand(args: &IntegrandArgs, out: &mut dyn Write) -> Result<()> {
    let p = parse_gaussian(&args.p)?;
    let q = parse_gaussian(&args.q)?;
    let (lo, hi) = default_bounds_1d(&p, &q)?;
    let range = (args.lo.unwrap_or(lo), args.hi.unwrap_or(hi));
    let base = DivergenceSpec::new(Family::Gjs, args.conv)
        .with_alpha(args.alpha)?
        .with_lambda_skew(args.lambda)?;
    let table = integrand_columns(&p, &q, &args.families, &base, range, args.points)?;
    match &args.out {
        None => table.write_csv(out),
        Some(dir) => {
            create_out(dir)?;
            table.write_csv(std::io::BufWriter::new(std::fs::File::create(
                dir.join("integrand.csv"),
            )?))?;
            let config = (
                &p,
                &q,
                &args.families,
                args.alpha,
                args.lambda,
                args.conv,
                range,
                args.points,
            );
            let mut m = Manifest::new("integrand", &config)?;
            m.add("integrand.csv", None);
            m.write(dir)?;
            Ok(())
        }
    }
}
