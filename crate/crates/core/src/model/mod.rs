//! Autoencoder and pitch-conditioned variational autoencoder over padded
//! cepstral vectors, trained with a β-weighted ELBO and ADAM.
//!
//! Everything here is plain `f64` linear algebra on `ndarray` matrices; the
//! backward pass is written out by hand.

mod adam;
mod io;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use io::{decode_model, encode_model, read_model, write_loss_csv, write_model, MODEL_MAGIC};
pub use mlp::{Layer, Mlp, MlpCache, MlpGrads};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envelope::PaddedEnvelope;
use crate::pitch::hz_to_midi;
use crate::{Error, Result, PAD_WIDTH};

/// Bounds applied to the log-variance head after every forward pass.
pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 20.0;

const ENCODER_TAG: u64 = 0;
const DECODER_TAG: u64 = 16;
const SHUFFLE_STREAM: u64 = 1001;
const NOISE_STREAM: u64 = 1002;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ae,
    Cvae,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ae => "AE",
            ModelKind::Cvae => "CVAE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ae" => Some(ModelKind::Ae),
            "cvae" => Some(ModelKind::Cvae),
            _ => None,
        }
    }
}

/// How a pitch enters the networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CondEncoding {
    /// `(midi − 60) / 11`, continuous.
    Scalar,
    /// 12 pitch classes of the octave starting at MIDI 60, nearest semitone.
    OneHot,
}

impl CondEncoding {
    pub fn width(self) -> usize {
        match self {
            CondEncoding::Scalar => 1,
            CondEncoding::OneHot => 12,
        }
    }

    pub fn encode(self, midi: f64, out: &mut [f64]) {
        match self {
            CondEncoding::Scalar => out[0] = (midi - 60.0) / 11.0,
            CondEncoding::OneHot => {
                out.fill(0.0);
                let i = (midi.round() - 60.0).clamp(0.0, 11.0) as usize;
                out[i] = 1.0;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub kind: ModelKind,
    /// Feed the pitch to encoder and decoder.
    pub conditional: bool,
    pub cond_encoding: CondEncoding,
    pub beta: f64,
    pub latent_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub leak: f64,
    /// Draw `z = mu + σ·n` during training. Off means `z = mu`.
    pub sample_latent: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::Cvae,
            conditional: true,
            cond_encoding: CondEncoding::Scalar,
            beta: 0.1,
            latent_dim: 32,
            hidden: PAD_WIDTH,
            lr: 1e-3,
            epochs: 2000,
            batch_size: 512,
            seed: 0,
            leak: 0.01,
            sample_latent: true,
        }
    }
}

impl TrainConfig {
    /// Unconditional deterministic autoencoder.
    pub fn ae() -> Self {
        TrainConfig {
            kind: ModelKind::Ae,
            conditional: false,
            ..Default::default()
        }
    }

    pub fn cvae() -> Self {
        TrainConfig::default()
    }

    pub fn of_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Ae => TrainConfig::ae(),
            ModelKind::Cvae => TrainConfig::cvae(),
        }
    }

    pub fn variational(&self) -> bool {
        self.kind == ModelKind::Cvae
    }

    pub fn cond_width(&self) -> usize {
        if self.conditional {
            self.cond_encoding.width()
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and ≥ 0");
        }
        if self.latent_dim == 0 || self.hidden == 0 {
            return bad("latent_dim and hidden must be ≥ 1");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be ≥ 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.leak) {
            return bad("leak must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Per-dimension standardization fitted on the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(width: usize) -> Self {
        Normalization {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    /// Population statistics; dimensions with std below 1e-8 keep unit scale.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(x.ncols());
        for row in x.rows() {
            for ((v, &a), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (a - m) * (a - m);
            }
        }
        let std = var.mapv(|v| {
            let s = (v / n).sqrt();
            if s < 1e-8 {
                1.0
            } else {
                s
            }
        });
        Normalization {
            mean: mean.to_vec(),
            std: std.to_vec(),
        }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn invert(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub mu: Vec<f64>,
    /// Zeros for the deterministic autoencoder.
    pub logvar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
}

impl Grads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.encoder.tensors();
        v.extend(self.decoder.tensors());
        v
    }
}

/// Padded vectors paired with their pitch labels (MIDI, possibly fractional).
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: Array2<f64>,
    pub midi: Vec<f64>,
}

impl Samples {
    pub fn new(x: Array2<f64>, midi: Vec<f64>) -> Result<Self> {
        if x.ncols() != PAD_WIDTH {
            return Err(Error::LengthMismatch {
                expected: PAD_WIDTH,
                actual: x.ncols(),
            });
        }
        if x.nrows() != midi.len() {
            return Err(Error::LengthMismatch {
                expected: x.nrows(),
                actual: midi.len(),
            });
        }
        Ok(Samples { x, midi })
    }

    /// Integer labels for training; pass `None` to take the pitch from each
    /// envelope's own f0.
    pub fn from_envelopes<'a>(envs: impl IntoIterator<Item = (&'a PaddedEnvelope, Option<i32>)>) -> Result<Self> {
        let mut data = Vec::new();
        let mut midi = Vec::new();
        for (e, label) in envs {
            if e.x.len() != PAD_WIDTH {
                return Err(Error::LengthMismatch {
                    expected: PAD_WIDTH,
                    actual: e.x.len(),
                });
            }
            data.extend_from_slice(&e.x);
            midi.push(label.map_or_else(|| hz_to_midi(e.f0), f64::from));
        }
        let n = midi.len();
        Samples::new(Array2::from_shape_vec((n, PAD_WIDTH), data).expect("shape"), midi)
    }

    pub fn len(&self) -> usize {
        self.midi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.midi.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: TrainConfig,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub norm: Normalization,
    pub loss_history: Vec<EpochLoss>,
}

/// −½ Σ (1 + logvar − mu² − e^logvar).
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// `recon` is the mean squared error over the vector, `total = recon + β·kl`.
pub fn elbo_loss(x: &[f64], x_hat: &[f64], e: &EncoderOutput, beta: f64) -> Result<LossParts> {
    if x.len() != x_hat.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: x_hat.len(),
        });
    }
    let recon = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    let kl = kl_divergence(&e.mu, &e.logvar);
    Ok(LossParts {
        total: recon + beta * kl,
        recon,
        kl,
    })
}

/// `z = mu + exp(½·logvar) ⊙ n`, `n ~ N(0, I)`.
pub fn reparameterize<R: Rng + ?Sized>(e: &EncoderOutput, rng: &mut R) -> LatentCode {
    let z = e
        .mu
        .iter()
        .zip(&e.logvar)
        .map(|(m, lv)| {
            let n: f64 = rng.sample(StandardNormal);
            m + (0.5 * lv).exp() * n
        })
        .collect();
    LatentCode { z }
}

fn row(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, x.len()), x).expect("row view")
}

impl ModelParams {
    /// Fresh network with identity normalization.
    pub fn init(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let c = config.cond_width();
        let l = config.latent_dim;
        let head = if config.variational() { 2 * l } else { l };
        let encoder = Mlp::init(&[PAD_WIDTH + c, config.hidden, head], config.leak, config.seed, ENCODER_TAG);
        let decoder = Mlp::init(&[l + c, config.hidden, PAD_WIDTH], config.leak, config.seed, DECODER_TAG);
        Ok(ModelParams {
            config,
            encoder,
            decoder,
            norm: Normalization::identity(PAD_WIDTH),
            loss_history: Vec::new(),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn n_params(&self) -> usize {
        self.encoder.n_params() + self.decoder.n_params()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.encoder.validate()?;
        self.decoder.validate()?;
        let c = self.config.cond_width();
        let l = self.config.latent_dim;
        let head = if self.config.variational() { 2 * l } else { l };
        let ok = self.encoder.n_in() == PAD_WIDTH + c
            && self.encoder.n_out() == head
            && self.decoder.n_in() == l + c
            && self.decoder.n_out() == PAD_WIDTH
            && self.norm.mean.len() == PAD_WIDTH
            && self.norm.std.len() == PAD_WIDTH;
        if !ok {
            return Err(Error::ModelMismatch("layer shapes disagree with the configuration".into()));
        }
        Ok(())
    }

    fn check_cond(&self, midi: Option<f64>) -> Result<()> {
        match (self.config.conditional, midi) {
            (true, None) => Err(Error::ModelMismatch("conditional model needs a pitch".into())),
            (false, Some(_)) => Err(Error::ModelMismatch("model is not conditional".into())),
            _ => Ok(()),
        }
    }

    /// Condition rows for a batch; `None` when the model is unconditional.
    pub fn cond_matrix(&self, midi: &[f64]) -> Option<Array2<f64>> {
        if !self.config.conditional {
            return None;
        }
        let w = self.config.cond_encoding.width();
        let mut c = Array2::zeros((midi.len(), w));
        for (mut r, &m) in c.rows_mut().into_iter().zip(midi) {
            self.config.cond_encoding.encode(m, r.as_slice_mut().expect("row"));
        }
        Some(c)
    }

    fn with_cond(x: ArrayView2<f64>, cond: Option<ArrayView2<f64>>) -> Array2<f64> {
        match cond {
            Some(c) => concatenate(Axis(1), &[x, c]).expect("row counts match"),
            None => x.to_owned(),
        }
    }

    /// Encoder on standardized rows. Returns `(mu, logvar)` with the clamp
    /// applied; logvar is all zeros for the autoencoder.
    pub fn encode_std(&self, x: ArrayView2<f64>, cond: Option<ArrayView2<f64>>) -> Result<(Array2<f64>, Array2<f64>)> {
        let input = Self::with_cond(x, cond);
        let (out, _) = self.encoder.forward(input.view())?;
        Ok(self.split_heads(&out))
    }

    fn split_heads(&self, out: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let l = self.config.latent_dim;
        if self.config.variational() {
            let mu = out.slice(s![.., ..l]).to_owned();
            let lv = out.slice(s![.., l..]).mapv(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
            (mu, lv)
        } else {
            (out.clone(), Array2::zeros((out.nrows(), l)))
        }
    }

    /// Decoder to standardized rows.
    pub fn decode_std(&self, z: ArrayView2<f64>, cond: Option<ArrayView2<f64>>) -> Result<Array2<f64>> {
        let input = Self::with_cond(z, cond);
        Ok(self.decoder.forward(input.view())?.0)
    }

    /// Encodes one raw padded vector. `midi` must be given exactly when the
    /// model is conditional.
    pub fn encode(&self, x: &[f64], midi: Option<f64>) -> Result<EncoderOutput> {
        self.check_cond(midi)?;
        if x.len() != PAD_WIDTH {
            return Err(Error::LengthMismatch {
                expected: PAD_WIDTH,
                actual: x.len(),
            });
        }
        let xs = self.norm.apply(row(x));
        let cond = midi.and_then(|m| self.cond_matrix(&[m]));
        let (mu, lv) = self.encode_std(xs.view(), cond.as_ref().map(|c| c.view()))?;
        Ok(EncoderOutput {
            mu: mu.into_raw_vec_and_offset().0,
            logvar: lv.into_raw_vec_and_offset().0,
        })
    }

    /// Decodes a latent point to a raw padded vector.
    pub fn decode(&self, z: &LatentCode, midi: Option<f64>) -> Result<Vec<f64>> {
        self.check_cond(midi)?;
        if z.z.len() != self.config.latent_dim {
            return Err(Error::LengthMismatch {
                expected: self.config.latent_dim,
                actual: z.z.len(),
            });
        }
        let cond = midi.and_then(|m| self.cond_matrix(&[m]));
        let xs = self.decode_std(row(&z.z), cond.as_ref().map(|c| c.view()))?;
        Ok(self.norm.invert(xs.view()).into_raw_vec_and_offset().0)
    }

    /// Deterministic reconstruction of raw rows: encoder mean (or code), then
    /// decoder, in the raw coefficient domain.
    pub fn reconstruct(&self, samples: &Samples) -> Result<Array2<f64>> {
        if samples.is_empty() {
            return Err(Error::Empty("samples"));
        }
        let xs = self.norm.apply(samples.x.view());
        let cond = self.cond_matrix(&samples.midi);
        let cv = cond.as_ref().map(|c| c.view());
        let (mu, _) = self.encode_std(xs.view(), cv)?;
        let out = self.decode_std(mu.view(), cv)?;
        Ok(self.norm.invert(out.view()))
    }

    /// Zeroes every weight reading the condition input in both networks.
    pub fn zero_condition_weights(&mut self) {
        let c = self.config.cond_width();
        if c == 0 {
            return;
        }
        let l = self.config.latent_dim;
        self.encoder.layers[0].w.slice_mut(s![.., PAD_WIDTH..]).fill(0.0);
        self.decoder.layers[0].w.slice_mut(s![.., l..l + c]).fill(0.0);
    }

    /// Loss and exact gradients for one standardized batch.
    ///
    /// `noise` supplies the reparameterization draws (batch × latent). With
    /// `None` the latent is the encoder mean. Gradients flow through mu and
    /// logvar, not through the noise.
    pub fn batch_loss(
        &self,
        x: ArrayView2<f64>,
        cond: Option<ArrayView2<f64>>,
        noise: Option<ArrayView2<f64>>,
    ) -> Result<(LossParts, Grads)> {
        let b = x.nrows();
        if b == 0 {
            return Err(Error::Empty("batch"));
        }
        let l = self.config.latent_dim;
        let beta = self.config.beta;
        let variational = self.config.variational();
        let c = self.config.cond_width();

        let enc_in = Self::with_cond(x, cond);
        let (enc_out, enc_cache) = self.encoder.forward(enc_in.view())?;
        let (mu, lv) = self.split_heads(&enc_out);

        let sigma = lv.mapv(|v| (0.5 * v).exp());
        let z = match noise {
            Some(n) if variational => &mu + &(&sigma * &n),
            _ => mu.clone(),
        };
        let dec_in = Self::with_cond(z.view(), cond);
        let (x_hat, dec_cache) = self.decoder.forward(dec_in.view())?;

        let diff = &x_hat - &x;
        let n_el = (b * x.ncols()) as f64;
        let recon = diff.iter().map(|d| d * d).sum::<f64>() / n_el;
        let kl = if variational {
            -0.5 * mu
                .iter()
                .zip(lv.iter())
                .map(|(m, v)| 1.0 + v - m * m - v.exp())
                .sum::<f64>()
                / b as f64
        } else {
            0.0
        };
        let total = recon + if variational { beta * kl } else { 0.0 };

        let mut grads = Grads {
            encoder: MlpGrads::zeros_like(&self.encoder),
            decoder: MlpGrads::zeros_like(&self.decoder),
        };
        let d_xhat = diff.mapv(|d| 2.0 * d / n_el);
        let d_dec_in = self.decoder.backward(&dec_cache, d_xhat, &mut grads.decoder)?;
        let d_z = d_dec_in.slice(s![.., ..l]).to_owned();
        debug_assert_eq!(d_dec_in.ncols(), l + c);

        let d_enc_out = if variational {
            let kb = beta / b as f64;
            let mut d = Array2::zeros((b, 2 * l));
            let pre_lv = enc_out.slice(s![.., l..]);
            for i in 0..b {
                for j in 0..l {
                    d[[i, j]] = d_z[[i, j]] + kb * mu[[i, j]];
                    let mut g_lv = 0.5 * kb * (lv[[i, j]].exp() - 1.0);
                    if let Some(n) = noise {
                        g_lv += d_z[[i, j]] * n[[i, j]] * 0.5 * sigma[[i, j]];
                    }
                    let raw = pre_lv[[i, j]];
                    if !(LOGVAR_MIN..=LOGVAR_MAX).contains(&raw) {
                        g_lv = 0.0;
                    }
                    d[[i, l + j]] = g_lv;
                }
            }
            d
        } else {
            d_z
        };
        self.encoder.backward(&enc_cache, d_enc_out, &mut grads.encoder)?;

        Ok((LossParts { total, recon, kl }, grads))
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.decoder.tensors_mut());
        v
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.encoder.tensors();
        v.extend(self.decoder.tensors());
        v
    }

    /// Applies one optimizer update from precomputed gradients.
    pub fn apply_grads(&mut self, grads: &Grads, state: &mut AdamState, adam: &AdamConfig) -> Result<()> {
        let g = grads.tensors();
        let mut p = self.tensors_mut();
        adam_step(&mut p, &g, state, adam)
    }

    pub fn adam_state(&self) -> AdamState {
        let shapes: Vec<usize> = self.tensors().iter().map(|t| t.len()).collect();
        AdamState::new(&shapes)
    }
}

/// Trains a model from scratch; see [`train_with`].
pub fn train(data: &Samples, config: &TrainConfig) -> Result<ModelParams> {
    train_with(data, config, |_, _| {})
}

/// Seeded shuffle per epoch, mini-batch ADAM, per-epoch mean (recon, kl) in
/// the standardized domain. Deterministic for a fixed seed.
pub fn train_with(data: &Samples, config: &TrainConfig, mut on_epoch: impl FnMut(usize, &EpochLoss)) -> Result<ModelParams> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if !data.x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("training data"));
    }
    let mut model = ModelParams::init(config.clone())?;
    model.norm = Normalization::fit(data.x.view());
    let xs = model.norm.apply(data.x.view());
    let cond = model.cond_matrix(&data.midi);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(NOISE_STREAM);
    let draw_noise = config.variational() && config.sample_latent;

    let adam = AdamConfig {
        lr: config.lr,
        ..Default::default()
    };
    let mut state = model.adam_state();
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let l = config.latent_dim;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut recon_sum, mut kl_sum) = (0.0, 0.0);
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let xb = xs.select(Axis(0), idx);
            let cb = cond.as_ref().map(|c| c.select(Axis(0), idx));
            let noise = draw_noise.then(|| Array2::from_shape_simple_fn((idx.len(), l), || noise_rng.sample(StandardNormal)));
            let (loss, grads) = model.batch_loss(xb.view(), cb.as_ref().map(|c| c.view()), noise.as_ref().map(|n| n.view()))?;
            if !loss.total.is_finite() || !grads.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())) {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    recon: loss.recon,
                    kl: loss.kl,
                });
            }
            model.apply_grads(&grads, &mut state, &adam)?;
            recon_sum += loss.recon * idx.len() as f64;
            kl_sum += loss.kl * idx.len() as f64;
        }
        let e = EpochLoss {
            recon: recon_sum / n as f64,
            kl: kl_sum / n as f64,
        };
        on_epoch(epoch, &e);
        model.loss_history.push(e);
    }
    Ok(model)
}
