//! ViT-style audio encoder over 16×16 log-mel patches, with per-layer taps,
//! masked-autoencoder pretraining through a Conv1D decoder, and contrastive
//! audio/text projection heads.
//!
//! Tokens are laid out on a grid of `rows = 128 / 16` mel bands by
//! `cols = frames / 16` time steps, row-major: token `r · cols + c` holds mel
//! rows `16r..16r+16` and frames `16c..16c+16`, itself flattened row-major.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, LogMelConfig, Matrix, Pcm, Spectrogram};
use crate::nn::{
    self, init, one_cycle_lr, Adam, AdamConfig, Conv1d, Ctx, Graph, Linear, NnError, ParamId, ParamStore, Real, Tensor,
    TransformerBlock, Var,
};
use crate::rng::Rng;

pub const PATCH: usize = 16;
pub const MEL_BINS: usize = 128;
pub const PATCH_VALUES: usize = PATCH * PATCH;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("spectrogram has {0} mel bins, expected {MEL_BINS}")]
    MelBins(usize),
    #[error("frame count {0} is not a positive multiple of {PATCH}")]
    Frames(usize),
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("contrastive step needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("{0} spectrograms given, all must share one shape")]
    Ragged(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dsp(#[from] dsp::DspError),
}

pub type Result<T> = std::result::Result<T, EncoderError>;

/// Which positions the reconstruction loss covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossPositions {
    All,
    Masked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub preset: String,
    pub patch: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub decoder_channels: usize,
    pub decoder_layers: usize,
    pub decoder_kernel: usize,
    pub mask_ratio: f64,
    pub loss_positions: LossPositions,
    /// Additive sinusoidal positional encoding before the first block.
    pub positional: bool,
    pub proj_dim: usize,
    pub text_dim: usize,
    pub text_vocab: usize,
}

impl EncoderConfig {
    pub fn tiny() -> Self {
        Self {
            preset: "tiny".into(),
            patch: PATCH,
            embed_dim: 192,
            depth: 4,
            heads: 4,
            decoder_channels: 192,
            decoder_layers: 10,
            decoder_kernel: 7,
            mask_ratio: 0.8,
            loss_positions: LossPositions::All,
            positional: true,
            proj_dim: 512,
            text_dim: 128,
            text_vocab: 512,
        }
    }

    pub fn vitb() -> Self {
        Self {
            preset: "vitb".into(),
            embed_dim: 768,
            depth: 12,
            heads: 12,
            decoder_channels: 768,
            ..Self::tiny()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "vitb" => Some(Self::vitb()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EncoderError::Config(m));
        if self.patch != PATCH {
            return bad(format!("patch {} unsupported, only {PATCH}", self.patch));
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!("embed_dim {} not divisible by {} heads", self.embed_dim, self.heads));
        }
        if self.depth == 0 || self.decoder_layers == 0 || self.decoder_kernel % 2 == 0 {
            return bad("depth and decoder layers must be positive, decoder kernel odd".into());
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad(format!("mask ratio {} outside (0, 1)", self.mask_ratio));
        }
        Ok(())
    }
}

/// Tokens on the patch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    /// `[T, D]`.
    pub tokens: Tensor<f32>,
    /// `(rows, cols)` with `rows · cols = T`.
    pub grid: (usize, usize),
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }
}

/// Split a `[128 × F]` log-mel matrix into `[T × 256]` patches.
pub fn patchify(m: &Spectrogram) -> Result<TokenSequence> {
    let (bins, frames) = m.values.shape();
    if bins != MEL_BINS {
        return Err(EncoderError::MelBins(bins));
    }
    if frames == 0 || frames % PATCH != 0 {
        return Err(EncoderError::Frames(frames));
    }
    let (rows, cols) = (bins / PATCH, frames / PATCH);
    let mut data = Vec::with_capacity(bins * frames);
    for r in 0..rows {
        for c in 0..cols {
            for i in 0..PATCH {
                let row = m.values.row(r * PATCH + i);
                data.extend(row[c * PATCH..(c + 1) * PATCH].iter().map(|&v| v as f32));
            }
        }
    }
    Ok(TokenSequence {
        tokens: Tensor::from_vec(vec![rows * cols, PATCH_VALUES], data)?,
        grid: (rows, cols),
    })
}

/// Inverse of [`patchify`] for `[T × 256]` patch values.
pub fn depatchify(seq: &TokenSequence) -> Result<Matrix> {
    let (rows, cols) = seq.grid;
    if seq.tokens.shape() != [rows * cols, PATCH_VALUES] {
        return Err(NnError::Shape {
            op: "depatchify",
            lhs: seq.tokens.shape().to_vec(),
            rhs: vec![rows * cols, PATCH_VALUES],
        }
        .into());
    }
    let frames = cols * PATCH;
    let mut m = Matrix::zeros(rows * PATCH, frames);
    for (t, patch) in seq.tokens.data().chunks(PATCH_VALUES).enumerate() {
        let (r, c) = (t / cols, t % cols);
        for i in 0..PATCH {
            for j in 0..PATCH {
                m.set(r * PATCH + i, c * PATCH + j, patch[i * PATCH + j] as f64);
            }
        }
    }
    Ok(m)
}

/// Zero-mean, unit-variance copy of a spectrogram.
pub fn standardize(m: &Spectrogram) -> Spectrogram {
    let n = m.values.data.len() as f64;
    let mean = m.values.data.iter().sum::<f64>() / n;
    let var = m.values.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / var.sqrt().max(1e-8);
    let mut out = m.clone();
    out.values.data.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    out
}

/// 16 kHz log-mel input for the encoder.
pub fn encoder_input(audio: &Pcm, cfg: &LogMelConfig) -> Result<Spectrogram> {
    let audio = dsp::resample(audio, dsp::ENCODER_RATE)?;
    Ok(dsp::log_mel_spectrogram(&audio, cfg)?)
}

/// Sinusoidal positional encoding `[T, D]`.
pub fn sinusoidal_encoding(tokens: usize, dim: usize) -> Tensor<f32> {
    Tensor::from_fn(&[tokens, dim], |i| {
        let (pos, d) = ((i / dim) as f64, i % dim);
        let freq = 1.0 / 10000f64.powf((2 * (d / 2)) as f64 / dim as f64);
        let angle = pos * freq;
        (if d % 2 == 0 { angle.sin() } else { angle.cos() }) as f32
    })
}

/// Number of masked positions: `floor(ratio · T)`.
pub fn mask_count(tokens: usize, ratio: f64) -> usize {
    (ratio * tokens as f64 + 1e-9).floor() as usize
}

/// Distinct positions to mask, sorted, uniform without replacement.
pub fn mask_indices(tokens: usize, ratio: f64, rng: &mut Rng) -> Vec<usize> {
    rng.sample_indices(tokens, mask_count(tokens, ratio))
}

/// Transformer over patch tokens.
#[derive(Debug, Clone)]
pub struct AudioEncoder {
    pub cfg: EncoderConfig,
    pub patch_embed: Linear,
    pub mask_token: ParamId,
    pub blocks: Vec<TransformerBlock>,
}

/// Per-layer outputs of one batch.
pub struct EncodedVars {
    /// One `[N, T, D]` var per block.
    pub layers: Vec<Var>,
    /// `[N, D]` token mean of the last layer.
    pub pooled: Var,
}

impl AudioEncoder {
    pub fn new<T: Real>(cfg: &EncoderConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let patch_embed = Linear::new_trunc(store, "encoder.patch_embed", PATCH_VALUES, d, rng);
        let mask_token = store.add("encoder.mask_token", init::truncated_normal(&[d], 0.02, rng));
        let blocks = (0..cfg.depth)
            .map(|i| TransformerBlock::new(store, &format!("encoder.block{i}"), d, cfg.heads, rng))
            .collect::<nn::Result<Vec<_>>>()?;
        Ok(Self { cfg: cfg.clone(), patch_embed, mask_token, blocks })
    }

    /// `patches: [N, T, 256]`; `mask` has `N · T` entries when given.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, patches: Var, mask: Option<&[bool]>) -> Result<EncodedVars> {
        let shape = ctx.graph.shape(patches);
        if shape.len() != 3 || shape[2] != PATCH_VALUES {
            return Err(NnError::Shape { op: "encoder input", lhs: shape, rhs: vec![PATCH_VALUES] }.into());
        }
        let tokens = shape[1];
        let mut x = self.patch_embed.forward(ctx, patches)?;
        if let Some(mask) = mask {
            let token = ctx.param(self.mask_token);
            x = ctx.graph.mask_replace(x, token, mask)?;
        }
        if self.cfg.positional {
            let pe = ctx.graph.constant(sinusoidal_encoding(tokens, self.cfg.embed_dim).cast());
            x = ctx.graph.add_trailing(x, pe)?;
        }
        let mut layers = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            x = block.forward(ctx, x)?;
            layers.push(x);
        }
        let pooled = ctx.graph.mean_axis(x, 1)?;
        Ok(EncodedVars { layers, pooled })
    }

    /// Trainable scalars of the encoder proper (patch embedding, mask token, blocks).
    pub fn param_count<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store
            .iter()
            .filter(|(_, p)| p.trainable && p.name.starts_with("encoder."))
            .map(|(_, p)| p.value().len())
            .sum()
    }
}

/// Conv1D stack over the token axis followed by a per-token linear head to
/// patch values.
#[derive(Debug, Clone)]
pub struct MaeDecoder {
    pub convs: Vec<Conv1d>,
    pub head: Linear,
}

impl MaeDecoder {
    pub fn new<T: Real>(cfg: &EncoderConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Self {
        let c = cfg.decoder_channels;
        let pad = cfg.decoder_kernel / 2;
        let convs = (0..cfg.decoder_layers)
            .map(|i| {
                let c_in = if i == 0 { cfg.embed_dim } else { c };
                Conv1d::new(store, &format!("decoder.conv{i}"), c_in, c, cfg.decoder_kernel, pad, rng)
            })
            .collect();
        let head = Linear::new_trunc(store, "decoder.head", c, PATCH_VALUES, rng);
        Self { convs, head }
    }

    /// `[N, T, D]` tokens → `[N, T, 256]` patch values.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, tokens: Var) -> Result<Var> {
        let mut h = ctx.graph.permute(tokens, &[0, 2, 1])?;
        for conv in &self.convs {
            h = conv.forward(ctx, h)?;
            h = ctx.graph.gelu(h)?;
        }
        let h = ctx.graph.permute(h, &[0, 2, 1])?;
        Ok(self.head.forward(ctx, h)?)
    }
}

/// Learned token table, mean-pooled per caption.
#[derive(Debug, Clone)]
pub struct TextStub {
    pub table: ParamId,
    pub vocab: usize,
}

impl TextStub {
    pub fn new<T: Real>(cfg: &EncoderConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Self {
        let table = store.add("text.table", init::truncated_normal(&[cfg.text_vocab, cfg.text_dim], 1.0, rng));
        Self { table, vocab: cfg.text_vocab }
    }

    /// Lower-cased whitespace words hashed (FNV-1a) into the vocabulary.
    pub fn tokenize(&self, caption: &str) -> Vec<usize> {
        let ids: Vec<usize> = caption
            .split_whitespace()
            .map(|w| {
                let h = w
                    .to_lowercase()
                    .bytes()
                    .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
                (h % self.vocab as u64) as usize
            })
            .collect();
        if ids.is_empty() {
            vec![0]
        } else {
            ids
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, captions: &[&str]) -> Result<Var> {
        let bags: Vec<Vec<usize>> = captions.iter().map(|c| self.tokenize(c)).collect();
        let table = ctx.param(self.table);
        Ok(ctx.graph.embedding_mean(table, &bags)?)
    }
}

/// Projections into the shared space plus the learned temperature.
#[derive(Debug, Clone)]
pub struct ContrastiveHeads {
    pub audio_proj: Linear,
    pub text_proj: Linear,
    /// `ln τ`, initialized to `ln 0.07`.
    pub log_temp: ParamId,
}

impl ContrastiveHeads {
    pub const INITIAL_TEMPERATURE: f64 = 0.07;

    pub fn new<T: Real>(cfg: &EncoderConfig, store: &mut ParamStore<T>, rng: &mut Rng) -> Self {
        Self {
            audio_proj: Linear::new_trunc(store, "contrastive.audio_proj", cfg.embed_dim, cfg.proj_dim, rng),
            text_proj: Linear::new_trunc(store, "contrastive.text_proj", cfg.text_dim, cfg.proj_dim, rng),
            log_temp: store.add("contrastive.log_temp", Tensor::full(&[1], T::lit(Self::INITIAL_TEMPERATURE.ln()))),
        }
    }

    /// Project, normalize and score `audio: [N, D]` against `text: [N, Dt]`.
    pub fn loss<T: Real>(&self, ctx: &mut Ctx<'_, T>, audio: Var, text: Var) -> Result<Var> {
        let n = ctx.graph.shape(audio)[0];
        if n < 2 {
            return Err(EncoderError::TooFewPairs(n));
        }
        let a = self.audio_proj.forward(ctx, audio)?;
        let a = ctx.graph.l2_normalize(a)?;
        let t = self.text_proj.forward(ctx, text)?;
        let t = ctx.graph.l2_normalize(t)?;
        let log_temp = ctx.param(self.log_temp);
        let neg = ctx.graph.scale(log_temp, -1.0)?;
        let inv_temp = ctx.graph.exp(neg)?;
        info_nce(ctx.graph, a, t, inv_temp)
    }
}

/// Symmetric InfoNCE over unit-norm `a, t: [N, P]` with logit scale `scale` (a
/// single-element var, `1/τ`).
pub fn info_nce<T: Real>(g: &Graph<T>, a: Var, t: Var, scale: Var) -> Result<Var> {
    let n = g.shape(a)[0];
    if n < 2 {
        return Err(EncoderError::TooFewPairs(n));
    }
    let tt = g.transpose(t)?;
    let sim = g.matmul(a, tt)?;
    let logits = g.mul_scalar(sim, scale)?;
    let targets: Vec<usize> = (0..n).collect();
    let audio_to_text = g.cross_entropy(logits, &targets)?;
    let lt = g.transpose(logits)?;
    let text_to_audio = g.cross_entropy(lt, &targets)?;
    let sum = g.add(audio_to_text, text_to_audio)?;
    Ok(g.scale(sum, 0.5)?)
}

/// Encoder, decoder and contrastive heads sharing one parameter store.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub encoder: AudioEncoder,
    pub decoder: MaeDecoder,
    pub text: TextStub,
    pub heads: ContrastiveHeads,
    pub store: ParamStore<f32>,
}

/// Encoder outputs for one spectrogram.
#[derive(Debug, Clone)]
pub struct LayerOutputs {
    pub layers: Vec<TokenSequence>,
    /// `[D]` mean over tokens of the last layer.
    pub pooled: Vec<f32>,
}

fn stack_patches(specs: &[Spectrogram]) -> Result<(Tensor<f32>, (usize, usize))> {
    let seqs = specs.iter().map(|s| patchify(&standardize(s))).collect::<Result<Vec<_>>>()?;
    let grid = seqs.first().map(|s| s.grid).ok_or(EncoderError::Ragged(0))?;
    if seqs.iter().any(|s| s.grid != grid) {
        return Err(EncoderError::Ragged(seqs.len()));
    }
    let tokens: Vec<Tensor<f32>> = seqs.into_iter().map(|s| s.tokens).collect();
    Ok((Tensor::stack(&tokens)?, grid))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch: 8, peak_lr: 1e-3, weight_decay: 0.05, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Reconstruction loss over the whole set before any update, fixed masks.
    pub initial_loss: f64,
    /// Same measurement after the last epoch.
    pub final_loss: f64,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

const EVAL_MASK_STREAM: u64 = 0xE7A1;

fn reconstruction(
    encoder: &AudioEncoder,
    decoder: &MaeDecoder,
    ctx: &mut Ctx<'_, f32>,
    patches: &Tensor<f32>,
    rng: &mut Rng,
) -> Result<Var> {
    let (n, t) = (patches.shape()[0], patches.shape()[1]);
    let mut mask = vec![false; n * t];
    for s in 0..n {
        for i in mask_indices(t, encoder.cfg.mask_ratio, rng) {
            mask[s * t + i] = true;
        }
    }
    let x = ctx.graph.constant(patches.clone());
    let enc = encoder.forward(ctx, x, Some(&mask))?;
    let last = *enc.layers.last().expect("depth > 0");
    let pred = decoder.forward(ctx, last)?;
    let weights: Option<Vec<f32>> = match encoder.cfg.loss_positions {
        LossPositions::All => None,
        LossPositions::Masked => Some(
            mask.iter()
                .flat_map(|&m| std::iter::repeat_n(if m { 1.0 } else { 0.0 }, PATCH_VALUES))
                .collect(),
        ),
    };
    Ok(ctx.graph.mse(pred, patches, weights.as_deref())?)
}

impl EncoderModel {
    pub fn new(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let encoder = AudioEncoder::new(cfg, &mut store, &mut rng)?;
        let decoder = MaeDecoder::new(cfg, &mut store, &mut rng);
        let text = TextStub::new(cfg, &mut store, &mut rng);
        let heads = ContrastiveHeads::new(cfg, &mut store, &mut rng);
        Ok(Self { encoder, decoder, text, heads, store })
    }

    pub fn cfg(&self) -> &EncoderConfig {
        &self.encoder.cfg
    }

    /// Per-layer token sequences and pooled embedding for each spectrogram.
    /// Inputs are standardized per instance; frames must be a multiple of 16.
    pub fn encode_layers(&mut self, specs: &[Spectrogram]) -> Result<Vec<LayerOutputs>> {
        if specs.is_empty() {
            return Ok(Vec::new());
        }
        let (patches, grid) = stack_patches(specs)?;
        let g = Graph::new();
        let mut rng = Rng::new(0);
        let mut ctx = Ctx::frozen(&g, &mut self.store, &mut rng);
        let x = g.constant(patches);
        let out = self.encoder.forward(&mut ctx, x, None)?;
        let (t, d) = (grid.0 * grid.1, self.encoder.cfg.embed_dim);
        let layer_values: Vec<_> = out.layers.iter().map(|&v| g.value(v)).collect();
        let pooled = g.value(out.pooled);
        Ok((0..specs.len())
            .map(|i| LayerOutputs {
                layers: layer_values
                    .iter()
                    .map(|v| TokenSequence { tokens: v.slice_first(i).reshape(&[t, d]).expect("token shape"), grid })
                    .collect(),
                pooled: pooled.data()[i * d..(i + 1) * d].to_vec(),
            })
            .collect())
    }

    /// Replace masked rows of one token sequence by the learned mask token.
    pub fn mask_tokens(&self, seq: &TokenSequence, ratio: f64, rng: &mut Rng) -> (TokenSequence, Vec<usize>) {
        let idx = mask_indices(seq.len(), ratio, rng);
        let token = self.store.get(self.encoder.mask_token);
        let mut out = seq.clone();
        let d = seq.dim();
        for &i in &idx {
            out.tokens.data_mut()[i * d..(i + 1) * d].copy_from_slice(token.data());
        }
        (out, idx)
    }

    /// Reconstruction loss of one batch without updating anything.
    pub fn mae_loss(&mut self, specs: &[Spectrogram], rng: &mut Rng) -> Result<f64> {
        let (patches, _) = stack_patches(specs)?;
        let g = Graph::new();
        let mut drop_rng = Rng::new(0);
        let mut ctx = Ctx::frozen(&g, &mut self.store, &mut drop_rng);
        let loss = reconstruction(&self.encoder, &self.decoder, &mut ctx, &patches, rng)?;
        Ok(g.value(loss).item() as f64)
    }

    /// One optimizer step of masked reconstruction; returns the batch loss.
    pub fn mae_step(&mut self, specs: &[Spectrogram], opt: &Adam, rng: &mut Rng) -> Result<f64> {
        let (patches, _) = stack_patches(specs)?;
        let g = Graph::new();
        let mut drop_rng = Rng::new(0);
        let loss = {
            let mut ctx = Ctx::new(&g, &mut self.store, true, &mut drop_rng);
            reconstruction(&self.encoder, &self.decoder, &mut ctx, &patches, rng)?
        };
        let value = g.value(loss).item() as f64;
        let grads = g.backward(loss)?;
        drop(g);
        opt.step(&mut self.store, &grads)?;
        Ok(value)
    }

    fn eval_loss(&mut self, specs: &[Spectrogram], batch: usize, seed: u64) -> Result<f64> {
        let mut rng = Rng::derive(seed, EVAL_MASK_STREAM);
        let mut total = 0.0;
        for chunk in specs.chunks(batch.max(1)) {
            total += self.mae_loss(chunk, &mut rng)? * chunk.len() as f64;
        }
        Ok(total / specs.len() as f64)
    }

    /// Masked-autoencoder pretraining with AdamW and a one-cycle schedule.
    pub fn pretrain(&mut self, specs: &[Spectrogram], cfg: &PretrainConfig) -> Result<PretrainReport> {
        if specs.is_empty() {
            return Err(EncoderError::Ragged(0));
        }
        let initial_loss = self.eval_loss(specs, cfg.batch, cfg.seed)?;
        let steps_per_epoch = specs.len().div_ceil(cfg.batch.max(1));
        let total = steps_per_epoch * cfg.epochs;
        let mut opt = Adam::new(AdamConfig::adamw(cfg.peak_lr, cfg.weight_decay));
        let mut rng = Rng::new(cfg.seed);
        let mut order: Vec<usize> = (0..specs.len()).collect();
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        let mut step = 0;
        for _ in 0..cfg.epochs {
            rng.shuffle(&mut order);
            let mut sum = 0.0;
            for idx in order.chunks(cfg.batch.max(1)) {
                opt.set_lr(one_cycle_lr(step, total, cfg.peak_lr));
                let batch: Vec<Spectrogram> = idx.iter().map(|&i| specs[i].clone()).collect();
                sum += self.mae_step(&batch, &opt, &mut rng)? * idx.len() as f64;
                step += 1;
            }
            epoch_losses.push(sum / specs.len() as f64);
        }
        let final_loss = self.eval_loss(specs, cfg.batch, cfg.seed)?;
        Ok(PretrainReport { initial_loss, final_loss, epoch_losses })
    }

    /// Contrastive loss of `audio` spectrograms against paired captions; with
    /// `opt` given, also takes one optimizer step.
    pub fn contrastive_step(&mut self, specs: &[Spectrogram], captions: &[&str], opt: Option<&Adam>) -> Result<f64> {
        if specs.len() != captions.len() || specs.len() < 2 {
            return Err(EncoderError::TooFewPairs(specs.len().min(captions.len())));
        }
        let (patches, _) = stack_patches(specs)?;
        let Self { encoder, text, heads, store, .. } = self;
        let g = Graph::new();
        let mut drop_rng = Rng::new(0);
        let loss = {
            let mut ctx = Ctx::new(&g, store, opt.is_some(), &mut drop_rng);
            ctx.track = opt.is_some();
            let x = g.constant(patches);
            let audio = encoder.forward(&mut ctx, x, None)?.pooled;
            let t = text.forward(&mut ctx, captions)?;
            heads.loss(&mut ctx, audio, t)?
        };
        let value = g.value(loss).item() as f64;
        if let Some(opt) = opt {
            let grads = g.backward(loss)?;
            drop(g);
            opt.step(store, &grads)?;
        }
        Ok(value)
    }

    pub fn checkpoint_metadata(&self, step: usize) -> serde_json::Value {
        serde_json::json!({ "kind": "encoder", "config": self.encoder.cfg, "step": step })
    }
}
