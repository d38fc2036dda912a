use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::time::Instant;

use gjs_core::DivergenceSpec;
use ndarray::{s, Array2, ArrayView2, Zip};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Split;
use crate::model::{supports, Dense, Latent, LossParts, VaeArch, VaeModel};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    SampleLatent,
    /// Decode the posterior mean with no added noise.
    #[default]
    MeanLatent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub reg: DivergenceSpec,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    #[serde(default)]
    pub eval_mode: EvalMode,
}

impl TrainConfig {
    pub fn new(reg: DivergenceSpec, seed: u64) -> Self {
        Self {
            reg,
            batch_size: 64,
            epochs: 20,
            lr: 1e-3,
            seed,
            dataset_path: None,
            eval_mode: EvalMode::MeanLatent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reg.validate()?;
        if !supports(self.reg.family) {
            return Err(Error::UnsupportedFamily(self.reg.family));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch size must be at least 2".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// SHA-256 of the JSON encoding of `(arch, cfg)`.
pub fn config_hash(arch: &VaeArch, cfg: &TrainConfig) -> String {
    let json = serde_json::to_vec(&(arch, cfg)).expect("config serialises");
    hex::encode(Sha256::digest(&json))
}

/// Metrics after one epoch; epoch 0 is the untrained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_recon: f64,
    pub train_div: f64,
    pub test_recon: f64,
    pub test_div: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

/// Wall-clock time is excluded from equality.
impl PartialEq for EpochRecord {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_recon.to_bits() == other.train_recon.to_bits()
            && self.train_div.to_bits() == other.train_div.to_bits()
            && self.test_recon.to_bits() == other.test_recon.to_bits()
            && self.test_div.to_bits() == other.test_div.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    config_hash: String,
    #[serde(flatten)]
    epoch: EpochRecord,
}

impl TrainRecord {
    pub fn initial(&self) -> Option<&EpochRecord> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// One JSON object per epoch.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for e in &self.epochs {
            let line = Line {
                config_hash: self.config_hash.clone(),
                epoch: e.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self> {
        let mut record = TrainRecord {
            config_hash: String::new(),
            epochs: Vec::new(),
        };
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(&line)?;
            if record.epochs.is_empty() {
                record.config_hash = l.config_hash;
            } else if record.config_hash != l.config_hash {
                return Err(Error::Format("mixed config hashes in one record".into()));
            }
            record.epochs.push(l.epoch);
        }
        Ok(record)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: i32,
}

impl Adam {
    pub fn new(model: &VaeModel, lr: f64) -> Self {
        let zeros: Vec<Dense> = model.layers.iter().map(Dense::zeros_like).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut VaeModel, grads: &crate::Gradients) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        for (((p, g), m), v) in model
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let update = |p: &mut f64, &g: &f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            };
            Zip::from(&mut p.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(update);
            Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
        }
    }
}

const EVAL_CHUNK: usize = 512;
const EVAL_SALT: u64 = 0x5eed_e7a1;

/// Row ranges of at most [`EVAL_CHUNK`] rows, none shorter than two.
fn chunks(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = (start + EVAL_CHUNK).min(n);
        if n - end == 1 {
            end = n;
        }
        out.push((start, end));
        start = end;
    }
    out
}

/// Row-weighted mean of reconstruction and regulariser over `data`.
pub fn evaluate(
    model: &VaeModel,
    data: ArrayView2<f64>,
    reg: &DivergenceSpec,
    mode: EvalMode,
    seed: u64,
) -> Result<(f64, f64)> {
    let (mut recon, mut div) = (0.0, 0.0);
    for (k, (a, b)) in chunks(data.nrows()).into_iter().enumerate() {
        let chunk_seed = seed.wrapping_add(k as u64);
        let latent = match mode {
            EvalMode::MeanLatent => Latent::Mean(chunk_seed),
            EvalMode::SampleLatent => Latent::Sampled(chunk_seed),
        };
        let (parts, _) = model.objective(data.slice(s![a..b, ..]), reg, latent, false)?;
        let w = (b - a) as f64;
        recon += w * parts.recon;
        div += w * parts.div;
    }
    let n = data.nrows() as f64;
    Ok((recon / n, div / n))
}

fn epoch_record(
    model: &VaeModel,
    data: &Split,
    cfg: &TrainConfig,
    epoch: usize,
    start: Instant,
) -> Result<EpochRecord> {
    let seed = cfg.seed ^ EVAL_SALT;
    let (train_recon, train_div) = evaluate(model, data.train.view(), &cfg.reg, cfg.eval_mode, seed)?;
    let (test_recon, test_div) = evaluate(model, data.test.view(), &cfg.reg, cfg.eval_mode, seed)?;
    Ok(EpochRecord {
        epoch,
        train_recon,
        train_div,
        test_recon,
        test_div,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Minibatch Adam on `recon + weight · div`. The final short batch is dropped
/// when it has fewer than two rows.
pub fn train(model: &VaeModel, data: &Split, cfg: &TrainConfig) -> Result<(VaeModel, TrainRecord)> {
    cfg.validate()?;
    let dim = model.arch().input_dim;
    for m in [&data.train, &data.test] {
        if m.ncols() != dim {
            return Err(Error::Shape {
                expected: dim,
                got: m.ncols(),
            });
        }
    }
    if data.train.nrows() < 2 || data.test.nrows() < 2 {
        return Err(Error::InvalidConfig(
            "train and test sets need at least two rows".into(),
        ));
    }
    let start = Instant::now();
    let mut model = model.clone();
    let mut record = TrainRecord {
        config_hash: config_hash(model.arch(), cfg),
        epochs: Vec::new(),
    };
    record.epochs.push(epoch_record(&model, data, cfg, 0, start)?);
    let mut adam = Adam::new(&model, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.nrows()).collect();
    let mut batch = Array2::zeros((cfg.batch_size, dim));
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            if idx.len() < 2 {
                continue;
            }
            if batch.nrows() != idx.len() {
                batch = Array2::zeros((idx.len(), dim));
            }
            for (mut row, &i) in batch.outer_iter_mut().zip(idx) {
                row.assign(&data.train.row(i));
            }
            let noise = rng.next_u64();
            let (parts, grads) = model.objective(batch.view(), &cfg.reg, Latent::Sampled(noise), true)?;
            if !finite(&parts) {
                return Err(Error::Diverged {
                    epoch,
                    partial: Box::new(record),
                });
            }
            adam.step(&mut model, &grads.expect("gradient requested"));
        }
        let rec = epoch_record(&model, data, cfg, epoch, start)?;
        let ok = [rec.train_recon, rec.train_div, rec.test_recon, rec.test_div]
            .iter()
            .all(|v| v.is_finite());
        if !ok || !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                partial: Box::new(record),
            });
        }
        record.epochs.push(rec);
    }
    Ok((model, record))
}

fn finite(p: &LossParts) -> bool {
    p.recon.is_finite() && p.div.is_finite() && p.total.is_finite()
}
