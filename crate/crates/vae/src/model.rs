use gjs_core::divergence::{diag_value_and_grad, mmd_value_and_grad};
use gjs_core::{DiagonalGaussian, DivergenceSpec, Family};
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderOutput {
    /// Sigmoid means scored by the per-example sum of squared errors.
    #[default]
    Mse,
    /// Sigmoid probabilities scored by the Bernoulli negative log-likelihood.
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    #[default]
    Elu,
}

impl Activation {
    fn apply(self, pre: &mut Array2<f64>) {
        match self {
            Activation::Relu => pre.mapv_inplace(|v| v.max(0.0)),
            Activation::Elu => pre.mapv_inplace(|v| if v > 0.0 { v } else { v.exp_m1() }),
        }
    }

    /// Turns `d` (gradient w.r.t. the activated output `out`) into the gradient
    /// w.r.t. the pre-activation.
    fn backprop(self, d: &mut Array2<f64>, out: &Array2<f64>) {
        match self {
            Activation::Relu => Zip::from(d).and(out).for_each(|d, &o| {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }),
            Activation::Elu => Zip::from(d).and(out).for_each(|d, &o| {
                if o <= 0.0 {
                    *d *= o + 1.0;
                }
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArch {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_output: DecoderOutput,
    #[serde(default)]
    pub activation: Activation,
}

impl VaeArch {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        latent_dim: usize,
        decoder_output: DecoderOutput,
    ) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_dims,
            latent_dim,
            decoder_output,
            activation: Activation::default(),
        };
        arch.validate()?;
        Ok(arch)
    }

    /// 784-256-256-10 encoder with a mirrored decoder and MSE head.
    pub fn desk_mnist() -> Self {
        Self {
            input_dim: 784,
            hidden_dims: vec![256, 256],
            latent_dim: 10,
            decoder_output: DecoderOutput::Mse,
            activation: Activation::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        if self.latent_dim > self.input_dim {
            return Err(Error::InvalidConfig(format!(
                "latent dimension {} exceeds input dimension {}",
                self.latent_dim, self.input_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer in parameter order: encoder hidden
    /// layers, the μ head, the log σ² head, decoder hidden layers, output layer.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut width = self.input_dim;
        for &h in &self.hidden_dims {
            shapes.push((width, h));
            width = h;
        }
        shapes.push((width, self.latent_dim));
        shapes.push((width, self.latent_dim));
        let mut width = self.latent_dim;
        for &h in self.hidden_dims.iter().rev() {
            shapes.push((width, h));
            width = h;
        }
        shapes.push((width, self.input_dim));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Affine layer `x W + b` acting on row-major batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `fan_in × fan_out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound));
        Self {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weight);
        out += &self.bias;
        out
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn param_mut(&mut self, k: usize) -> &mut f64 {
        let nw = self.weight.len();
        if k < nw {
            &mut self.weight.as_slice_mut().expect("standard layout")[k]
        } else {
            &mut self.bias[k - nw]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    arch: VaeArch,
    /// All layers in the order given by [`VaeArch::layer_shapes`].
    pub(crate) layers: Vec<Dense>,
}

/// Per-example parameters of the diagonal Gaussian posterior `q(z|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mu: Array2<f64>,
    pub log_var: Array2<f64>,
}

impl Posterior {
    pub fn len(&self) -> usize {
        self.mu.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.nrows() == 0
    }

    pub fn get(&self, row: usize) -> Result<DiagonalGaussian> {
        Ok(DiagonalGaussian::new(
            self.mu.row(row).to_vec(),
            self.log_var.row(row).to_vec(),
        )?)
    }
}

/// Reconstruction term, regulariser and their combination `recon + weight · div`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub recon: f64,
    pub div: f64,
    pub total: f64,
}

/// Gradient of the total loss, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) layers: Vec<Dense>,
}

impl Gradients {
    /// Gradient entry in the flat parameter order of [`VaeModel::parameter`].
    pub fn get(&self, k: usize) -> f64 {
        flat_get(&self.layers, k)
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Latent {
    /// `z = μ + σ ⊙ ε` with ε drawn from the seed.
    Sampled(u64),
    /// `z = μ`; the seed only feeds the MMD prior draws.
    Mean(u64),
}

impl Latent {
    fn seed(self) -> u64 {
        match self {
            Latent::Sampled(s) | Latent::Mean(s) => s,
        }
    }
}

pub fn init(arch: &VaeArch, seed: u64) -> Result<VaeModel> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .layer_shapes()
        .into_iter()
        .map(|(i, o)| Dense::init(i, o, &mut rng))
        .collect();
    Ok(VaeModel {
        arch: arch.clone(),
        layers,
    })
}

/// Whether `family` can serve as a VAE regulariser.
pub fn supports(family: Family) -> bool {
    matches!(
        family,
        Family::KlForward | Family::KlReverse | Family::Gjs | Family::GjsDual | Family::Mmd
    )
}

struct Cache {
    enc: Vec<Array2<f64>>,
    mu: Array2<f64>,
    log_var: Array2<f64>,
    eps: Option<Array2<f64>>,
    z: Array2<f64>,
    /// Prior draws paired with `z` by the MMD regulariser.
    prior: Array2<f64>,
    dec: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

impl VaeModel {
    pub fn arch(&self) -> &VaeArch {
        &self.arch
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    /// Parameter `k` in flat order: layer by layer, weights row-major, then biases.
    pub fn parameter(&self, k: usize) -> f64 {
        flat_get(&self.layers, k)
    }

    pub fn set_parameter(&mut self, k: usize, value: f64) {
        let (layer, offset) = locate(&self.layers, k);
        *self.layers[layer].param_mut(offset) = value;
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn hidden(&self) -> usize {
        self.arch.hidden_dims.len()
    }

    fn encoder(&self) -> &[Dense] {
        &self.layers[..self.hidden()]
    }

    fn mu_head(&self) -> &Dense {
        &self.layers[self.hidden()]
    }

    fn log_var_head(&self) -> &Dense {
        &self.layers[self.hidden() + 1]
    }

    fn decoder(&self) -> &[Dense] {
        &self.layers[self.hidden() + 2..]
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::Shape {
                expected: self.arch.input_dim,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    /// Activations `[x, h₁, …, h_H]` through the hidden stack.
    fn run_stack(&self, layers: &[Dense], x: Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(x);
        for layer in layers {
            let mut h = layer.forward(&acts.last().expect("nonempty").view());
            self.arch.activation.apply(&mut h);
            acts.push(h);
        }
        acts
    }

    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Posterior> {
        self.check_input(&x)?;
        let acts = self.run_stack(self.encoder(), x.to_owned());
        let h = acts.last().expect("nonempty").view();
        Ok(Posterior {
            mu: self.mu_head().forward(&h),
            log_var: self.log_var_head().forward(&h),
        })
    }

    fn decode_logits(&self, z: Array2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let (hidden, out) = self.decoder().split_at(self.hidden());
        let acts = self.run_stack(hidden, z);
        let logits = out[0].forward(&acts.last().expect("nonempty").view());
        (acts, logits)
    }

    /// Decoder means (sigmoid outputs in `[0, 1]`) for a batch of latents.
    pub fn decode(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.arch.latent_dim {
            return Err(Error::Shape {
                expected: self.arch.latent_dim,
                got: z.ncols(),
            });
        }
        let (_, logits) = self.decode_logits(z.to_owned());
        Ok(logits.mapv(sigmoid))
    }

    /// Decoded posterior means.
    pub fn reconstruct(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let post = self.encode(x)?;
        self.decode(post.mu.view())
    }

    /// Per-example `log p(x|z)` under the decoder's likelihood. The MSE head is
    /// read as a Gaussian with variance ½, so `-log p = Σ(x-y)² + (m/2) ln π`.
    pub fn log_likelihood(&self, x: ArrayView2<f64>, z: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_input(&x)?;
        if z.ncols() != self.arch.latent_dim || z.nrows() != x.nrows() {
            return Err(Error::Shape {
                expected: self.arch.latent_dim,
                got: z.ncols(),
            });
        }
        let (_, logits) = self.decode_logits(z.to_owned());
        let per = per_example_recon(self.arch.decoder_output, &x, &logits);
        Ok(match self.arch.decoder_output {
            DecoderOutput::Mse => {
                let c = 0.5 * self.arch.input_dim as f64 * std::f64::consts::PI.ln();
                per.mapv(|r| -r - c)
            }
            DecoderOutput::Bernoulli => per.mapv(|r| -r),
        })
    }

    fn forward(&self, x: ArrayView2<f64>, latent: Latent) -> Cache {
        let enc = self.run_stack(self.encoder(), x.to_owned());
        let h = enc.last().expect("nonempty").view();
        let mu = self.mu_head().forward(&h);
        let log_var = self.log_var_head().forward(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(latent.seed());
        let (z, eps) = match latent {
            Latent::Sampled(_) => {
                let eps = standard_normal(mu.raw_dim(), &mut rng);
                let mut z = mu.clone();
                Zip::from(&mut z)
                    .and(&log_var)
                    .and(&eps)
                    .for_each(|z, &lv, &e| *z += (0.5 * lv).exp() * e);
                (z, Some(eps))
            }
            Latent::Mean(_) => (mu.clone(), None),
        };
        let (dec, logits) = self.decode_logits(z.clone());
        let prior = standard_normal(mu.raw_dim(), &mut rng);
        Cache {
            enc,
            mu,
            log_var,
            eps,
            z,
            prior,
            dec,
            logits,
        }
    }

    /// Loss and, when requested, its gradient.
    pub(crate) fn objective(
        &self,
        x: ArrayView2<f64>,
        reg: &DivergenceSpec,
        latent: Latent,
        want_grad: bool,
    ) -> Result<(LossParts, Option<Gradients>)> {
        self.check_input(&x)?;
        reg.validate()?;
        if !supports(reg.family) {
            return Err(Error::UnsupportedFamily(reg.family));
        }
        let b = x.nrows();
        if b == 0 {
            return Err(Error::InvalidConfig("empty batch".into()));
        }
        let inv_b = 1.0 / b as f64;
        let cache = self.forward(x, latent);
        let n = self.arch.latent_dim;

        let per = per_example_recon(self.arch.decoder_output, &x, &cache.logits);
        let recon = per.sum() * inv_b;

        let mut g_mu = Array2::zeros((b, n));
        let mut g_lv = Array2::zeros((b, n));
        let mut g_z = Array2::zeros((b, n));
        let div = if reg.family == Family::Mmd {
            let zs = cache.z.as_slice().expect("standard layout");
            let ps = cache.prior.as_slice().expect("standard layout");
            let grad = if want_grad { g_z.as_slice_mut() } else { None };
            let v = mmd_value_and_grad(zs, ps, n, reg.mmd_bandwidth, grad)?;
            g_z *= reg.weight;
            v
        } else {
            let mut total = 0.0;
            let scale = reg.weight * inv_b;
            for i in 0..b {
                let mu = cache.mu.row(i);
                let lv = cache.log_var.row(i);
                let mut gm = g_mu.row_mut(i);
                let mut gl = g_lv.row_mut(i);
                total += diag_value_and_grad(
                    reg,
                    mu.as_slice().expect("standard layout"),
                    lv.as_slice().expect("standard layout"),
                    scale,
                    gm.as_slice_mut().expect("standard layout"),
                    gl.as_slice_mut().expect("standard layout"),
                )?;
            }
            total * inv_b
        };
        let parts = LossParts {
            recon,
            div,
            total: recon + reg.weight * div,
        };
        if !want_grad {
            return Ok((parts, None));
        }

        let mut grads: Vec<Dense> = self.layers.iter().map(Dense::zeros_like).collect();
        let h = self.hidden();

        // Output layer and decoder stack.
        let d_logits = recon_grad(self.arch.decoder_output, &x, &cache.logits, inv_b);
        let out_idx = self.layers.len() - 1;
        let last = cache.dec.last().expect("nonempty");
        grads[out_idx].weight += &last.t().dot(&d_logits);
        grads[out_idx].bias += &d_logits.sum_axis(Axis(0));
        let d_last = d_logits.dot(&self.layers[out_idx].weight.t());
        let d_z = self.backward_stack(h + 2, &cache.dec, d_last, &mut grads, true);
        let mut d_z = d_z.expect("input gradient");
        d_z += &g_z;

        // Reparameterisation.
        let mut d_mu = d_z.clone();
        d_mu += &g_mu;
        let mut d_lv = g_lv;
        if let Some(eps) = &cache.eps {
            Zip::from(&mut d_lv)
                .and(&d_z)
                .and(&cache.log_var)
                .and(eps)
                .for_each(|d, &dz, &lv, &e| *d += dz * 0.5 * (0.5 * lv).exp() * e);
        }

        // Heads and encoder stack.
        let top = cache.enc.last().expect("nonempty");
        grads[h].weight += &top.t().dot(&d_mu);
        grads[h].bias += &d_mu.sum_axis(Axis(0));
        grads[h + 1].weight += &top.t().dot(&d_lv);
        grads[h + 1].bias += &d_lv.sum_axis(Axis(0));
        let mut d_top = d_mu.dot(&self.layers[h].weight.t());
        d_top += &d_lv.dot(&self.layers[h + 1].weight.t());
        self.backward_stack(0, &cache.enc, d_top, &mut grads, false);

        Ok((parts, Some(Gradients { layers: grads })))
    }

    /// Backpropagates through the activated layers `first..first + acts.len() - 1`.
    fn backward_stack(
        &self,
        first: usize,
        acts: &[Array2<f64>],
        mut d: Array2<f64>,
        grads: &mut [Dense],
        need_input: bool,
    ) -> Option<Array2<f64>> {
        for k in (0..acts.len() - 1).rev() {
            self.arch.activation.backprop(&mut d, &acts[k + 1]);
            let layer = first + k;
            grads[layer].weight += &acts[k].t().dot(&d);
            grads[layer].bias += &d.sum_axis(Axis(0));
            if k > 0 || need_input {
                d = d.dot(&self.layers[layer].weight.t());
            }
        }
        need_input.then_some(d)
    }
}

/// `z = μ + σ ⊙ ε` with `ε ~ N(0, I)` drawn row-major from `seed`.
pub fn reparam_sample(post: &Posterior, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = standard_normal(post.mu.raw_dim(), &mut rng);
    let mut z = post.mu.clone();
    Zip::from(&mut z)
        .and(&post.log_var)
        .and(&eps)
        .for_each(|z, &lv, &e| *z += (0.5 * lv).exp() * e);
    z
}

/// Reconstruction, regulariser and total on a batch, with latents sampled from `seed`.
pub fn loss(model: &VaeModel, x: ArrayView2<f64>, reg: &DivergenceSpec, seed: u64) -> Result<LossParts> {
    Ok(model.objective(x, reg, Latent::Sampled(seed), false)?.0)
}

pub fn loss_and_grad(
    model: &VaeModel,
    x: ArrayView2<f64>,
    reg: &DivergenceSpec,
    seed: u64,
) -> Result<(LossParts, Gradients)> {
    let (parts, grads) = model.objective(x, reg, Latent::Sampled(seed), true)?;
    Ok((parts, grads.expect("gradient requested")))
}

/// Largest parameter count accepted by [`grad_check`].
pub const GRAD_CHECK_MAX_PARAMS: usize = 5000;
/// Gradient magnitude below which [`grad_check`] measures absolute error.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Worst relative error `|a - n| / max(|a|, |n|, floor)` between analytic and
/// central-difference gradients over 50 randomly chosen parameters.
pub fn grad_check(model: &VaeModel, x: ArrayView2<f64>, reg: &DivergenceSpec, seed: u64, eps: f64) -> Result<f64> {
    let count = model.parameter_count();
    if count > GRAD_CHECK_MAX_PARAMS {
        return Err(Error::InvalidConfig(format!(
            "gradient check needs at most {GRAD_CHECK_MAX_PARAMS} parameters, model has {count}"
        )));
    }
    let (_, grads) = loss_and_grad(model, x, reg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let picks = rand::seq::index::sample(&mut rng, count, count.min(50));
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for k in picks.iter() {
        let orig = model.parameter(k);
        probe.set_parameter(k, orig + eps);
        let up = loss(&probe, x, reg, seed)?.total;
        probe.set_parameter(k, orig - eps);
        let down = loss(&probe, x, reg, seed)?.total;
        probe.set_parameter(k, orig);
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads.get(k);
        let denom = analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}

fn standard_normal(dim: ndarray::Ix2, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(dim, || rng.sample(StandardNormal))
}

#[inline]
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn per_example_recon(output: DecoderOutput, x: &ArrayView2<f64>, logits: &Array2<f64>) -> Array1<f64> {
    let mut per = Array1::zeros(x.nrows());
    for ((xr, tr), p) in x.outer_iter().zip(logits.outer_iter()).zip(per.iter_mut()) {
        *p = match output {
            DecoderOutput::Mse => xr.iter().zip(tr).map(|(&x, &t)| (sigmoid(t) - x).powi(2)).sum(),
            DecoderOutput::Bernoulli => xr.iter().zip(tr).map(|(&x, &t)| softplus(t) - x * t).sum(),
        };
    }
    per
}

fn recon_grad(output: DecoderOutput, x: &ArrayView2<f64>, logits: &Array2<f64>, scale: f64) -> Array2<f64> {
    let mut d = logits.clone();
    match output {
        DecoderOutput::Mse => Zip::from(&mut d).and(x).for_each(|d, &x| {
            let y = sigmoid(*d);
            *d = scale * 2.0 * (y - x) * y * (1.0 - y);
        }),
        DecoderOutput::Bernoulli => Zip::from(&mut d).and(x).for_each(|d, &x| {
            *d = scale * (sigmoid(*d) - x);
        }),
    }
    d
}

fn locate(layers: &[Dense], mut k: usize) -> (usize, usize) {
    for (i, l) in layers.iter().enumerate() {
        if k < l.len() {
            return (i, k);
        }
        k -= l.len();
    }
    panic!("parameter index out of range");
}

fn flat_get(layers: &[Dense], k: usize) -> f64 {
    let (layer, offset) = locate(layers, k);
    let l = &layers[layer];
    let nw = l.weight.len();
    if offset < nw {
        l.weight.as_slice().expect("standard layout")[offset]
    } else {
        l.bias[offset - nw]
    }
}
