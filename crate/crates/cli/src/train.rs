use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use gjs_core::{DivergenceSpec, Family, SkewConvention};
use gjs_vae::data::{desk_mnist, load_gjsd, ring_split, shuffled_split, Split, MNIST_IMAGES};
use gjs_vae::evidence::estimate_log_evidence;
use gjs_vae::train::config_hash;
use gjs_vae::traversal::latent_traversal;
use gjs_vae::{init, train, Activation, DecoderOutput, EvalMode, TrainConfig, TrainRecord, VaeArch, VaeModel};
use serde::{Deserialize, Serialize};

use crate::manifest::{create_out, Manifest};
use crate::{by_serde_name, CliError, Result, SpecArgs};

pub const DATA_DIR_VAR: &str = "GJS_DATA_DIR";

/// Everything about a training run except the divergence and seed.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainSettings {
    /// `desk-mnist`, `ring`, or a GJSD file.
    #[arg(long, default_value = "desk-mnist")]
    pub dataset: String,
    /// GJSD test set for a GJSD dataset; without it the dataset is split 80/20.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [256, 256])]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub latent: usize,
    /// `mse` or `bernoulli`.
    #[arg(long, default_value = "mse", value_parser = by_serde_name::<DecoderOutput>)]
    pub decoder: DecoderOutput,
    /// `elu` or `relu`.
    #[arg(long, default_value = "elu", value_parser = by_serde_name::<Activation>)]
    pub activation: Activation,
    /// `mean-latent` or `sample-latent`.
    #[arg(long, default_value = "mean-latent", value_parser = by_serde_name::<EvalMode>)]
    pub eval_mode: EvalMode,
    /// Importance samples per test example for the log-evidence column; 0 skips it.
    #[arg(long, default_value_t = 128)]
    pub evidence_k: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[command(flatten)]
    pub settings: TrainSettings,
    /// Seeds initialisation, batching, noise and evidence estimation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Points per latent dimension in a traversal of the first test image; 0 skips it.
    #[arg(long, default_value_t = 0)]
    pub traversal: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub families: Vec<Family>,
    pub conventions: Vec<SkewConvention>,
    pub seeds: Vec<u64>,
    pub weight: f64,
    pub mmd_bandwidth: f64,
    pub base: TrainSettings,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.families.is_empty() || self.conventions.is_empty() || self.seeds.is_empty() {
            return Err(CliError::Usage("sweep lists must be non-empty".into()));
        }
        for &f in &self.families {
            if !gjs_vae::model::supports(f) {
                return Err(CliError::Usage(format!("{f} cannot regularise a VAE")));
            }
        }
        for &a in &self.alphas {
            gjs_core::Skew::new(a)?;
        }
        Ok(())
    }

    /// The run matrix in family, convention, α, seed order.
    pub fn cells(&self) -> Result<Vec<(DivergenceSpec, u64)>> {
        self.validate()?;
        let mut out = Vec::new();
        for &family in &self.families {
            for &conv in &self.conventions {
                for &alpha in &self.alphas {
                    let spec = DivergenceSpec::new(family, conv)
                        .with_alpha(alpha)?
                        .with_weight(self.weight)?
                        .with_mmd_bandwidth(self.mmd_bandwidth)?;
                    out.extend(self.seeds.iter().map(|&s| (spec, s)));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// JSON sweep configuration; replaces the matrix and training flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [Family::GjsDual])]
    pub families: Vec<Family>,
    #[arg(long, value_delimiter = ',', default_values_t = [SkewConvention::Primed])]
    pub convs: Vec<SkewConvention>,
    #[arg(long, value_delimiter = ',', default_values_t = [0])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1.0)]
    pub weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mmd_bandwidth: f64,
    #[command(flatten)]
    pub settings: TrainSettings,
    #[arg(long)]
    pub out: PathBuf,
}

impl SweepArgs {
    pub fn config(&self) -> Result<SweepConfig> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
                path: path.clone(),
                source,
            })?;
            return serde_json::from_str(&text).map_err(|source| CliError::Parse {
                path: path.display().to_string(),
                source,
            });
        }
        Ok(SweepConfig {
            alphas: self.alphas.clone(),
            families: self.families.clone(),
            conventions: self.convs.clone(),
            seeds: self.seeds.clone(),
            weight: self.weight,
            mmd_bandwidth: self.mmd_bandwidth,
            base: self.settings.clone(),
        })
    }
}

/// One row of a sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub family: Family,
    pub convention: SkewConvention,
    pub alpha: f64,
    pub seed: u64,
    pub final_train_recon: f64,
    pub final_test_recon: f64,
    /// Training-set divergence after the last epoch.
    pub final_div: f64,
    pub log_evidence: Option<f64>,
}

pub fn write_summary(rows: &[SummaryRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(input: impl Read) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Resolves `settings.dataset` to a train/test split.
pub fn load_dataset(settings: &TrainSettings) -> Result<Split> {
    match settings.dataset.as_str() {
        "desk-mnist" => {
            let dir = data_dir();
            if !dir.join(MNIST_IMAGES).exists() {
                return Err(CliError::Usage(format!(
                    "{MNIST_IMAGES} not found in {}; set {DATA_DIR_VAR}",
                    dir.display()
                )));
            }
            Ok(desk_mnist(dir)?)
        }
        "ring" => Ok(ring_split(1024, 256, 16, 0)),
        path => {
            let data = load_gjsd(path)?;
            match &settings.test {
                Some(t) => Ok(Split {
                    train: data,
                    test: load_gjsd(t)?,
                }),
                None => Ok(shuffled_split(&data, data.nrows() * 4 / 5, 0)?),
            }
        }
    }
}

pub fn arch_for(settings: &TrainSettings, input_dim: usize) -> Result<VaeArch> {
    let mut arch = VaeArch::new(input_dim, settings.hidden.clone(), settings.latent, settings.decoder)?;
    arch.activation = settings.activation;
    Ok(arch)
}

pub fn train_config(settings: &TrainSettings, reg: DivergenceSpec, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(reg, seed);
    cfg.epochs = settings.epochs;
    cfg.batch_size = settings.batch_size;
    cfg.lr = settings.lr;
    cfg.eval_mode = settings.eval_mode;
    cfg.dataset_path = Some(PathBuf::from(&settings.dataset));
    cfg
}

pub struct CellOutcome {
    pub model: VaeModel,
    pub record: TrainRecord,
    pub row: SummaryRow,
}

/// Trains one cell from `init(arch, seed)`.
pub fn run_cell(split: &Split, settings: &TrainSettings, reg: DivergenceSpec, seed: u64) -> Result<CellOutcome> {
    let arch = arch_for(settings, split.dim())?;
    let cfg = train_config(settings, reg, seed);
    let (model, record) = train(&init(&arch, seed)?, split, &cfg)?;
    let last = record.last().expect("epoch 0 is always recorded");
    let log_evidence = match settings.evidence_k {
        0 => None,
        k => Some(estimate_log_evidence(&model, split.test.view(), k, seed)?),
    };
    let row = SummaryRow {
        family: reg.family,
        convention: reg.convention,
        alpha: reg.alpha.value(),
        seed,
        final_train_recon: last.train_recon,
        final_test_recon: last.test_recon,
        final_div: last.train_div,
        log_evidence,
    };
    Ok(CellOutcome { model, record, row })
}

fn write_record(path: &Path, record: &TrainRecord) -> Result<()> {
    record.write_jsonl(BufWriter::new(File::create(path)?))?;
    Ok(())
}

/// Runs a cell, writing a partial record to `record_path` if training diverges.
fn run_cell_to(
    split: &Split,
    settings: &TrainSettings,
    reg: DivergenceSpec,
    seed: u64,
    record_path: &Path,
) -> Result<CellOutcome> {
    match run_cell(split, settings, reg, seed) {
        Ok(c) => {
            write_record(record_path, &c.record)?;
            Ok(c)
        }
        Err(CliError::Vae(gjs_vae::Error::Diverged { epoch, partial })) => {
            write_record(record_path, &partial)?;
            Err(gjs_vae::Error::Diverged { epoch, partial }.into())
        }
        Err(e) => Err(e),
    }
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let reg = args.spec.spec(Family::KlReverse)?;
    let split = load_dataset(&args.settings)?;
    let arch = arch_for(&args.settings, split.dim())?;
    let cfg = train_config(&args.settings, reg, args.seed);
    cfg.validate()?;
    create_out(&args.out)?;
    let hash = config_hash(&arch, &cfg);
    let mut manifest = Manifest::new("train", &(&arch, &cfg, args.settings.evidence_k))?;
    manifest.add("record.jsonl", Some(hash.clone()));
    let cell = run_cell_to(&split, &args.settings, reg, args.seed, &args.out.join("record.jsonl"));
    let cell = match cell {
        Ok(c) => c,
        Err(e) => {
            manifest.write(&args.out)?;
            return Err(e);
        }
    };
    std::fs::write(
        args.out.join("config.json"),
        serde_json::to_string_pretty(&(&arch, &cfg))?,
    )?;
    write_summary(
        std::slice::from_ref(&cell.row),
        File::create(args.out.join("summary.csv"))?,
    )?;
    manifest.add("config.json", Some(hash.clone()));
    manifest.add("summary.csv", Some(hash));
    if args.traversal > 0 {
        let dims: Vec<usize> = (0..arch.latent_dim).collect();
        let t = latent_traversal(&cell.model, split.test.row(0), &dims, args.traversal, [-3.0, 3.0])?;
        t.write_csv(BufWriter::new(File::create(args.out.join("traversal.csv"))?))?;
        manifest.add("traversal.csv", None);
        let side = (arch.input_dim as f64).sqrt().round() as usize;
        if side * side == arch.input_dim {
            t.write_png(
                BufWriter::new(File::create(args.out.join("traversal.png"))?),
                side,
                side,
            )?;
            manifest.add("traversal.png", None);
        }
    }
    manifest.write(&args.out)?;
    write_summary(std::slice::from_ref(&cell.row), out)
}

fn cell_name(reg: &DivergenceSpec, seed: u64) -> String {
    format!(
        "{}-{}-a{}-s{}.jsonl",
        reg.family,
        reg.convention,
        reg.alpha.value(),
        seed
    )
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    let sweep = args.config()?;
    let cells = sweep.cells()?;
    let split = load_dataset(&sweep.base)?;
    let arch = arch_for(&sweep.base, split.dim())?;
    create_out(&args.out)?;
    std::fs::create_dir_all(args.out.join("cells"))?;
    let mut manifest = Manifest::new("sweep", &sweep)?;
    let mut rows = Vec::with_capacity(cells.len());
    for (reg, seed) in cells {
        let name = format!("cells/{}", cell_name(&reg, seed));
        manifest.add(&name, Some(config_hash(&arch, &train_config(&sweep.base, reg, seed))));
        match run_cell_to(&split, &sweep.base, reg, seed, &args.out.join(&name)) {
            Ok(c) => rows.push(c.row),
            Err(e) => {
                manifest.write(&args.out)?;
                return Err(e);
            }
        }
    }
    write_summary(&rows, File::create(args.out.join("summary.csv"))?)?;
    manifest.add("summary.csv", None);
    manifest.write(&args.out)?;
    writeln!(
        out,
        "{} runs; summary in {}",
        rows.len(),
        args.out.join("summary.csv").display()
    )?;
    Ok(())
}
