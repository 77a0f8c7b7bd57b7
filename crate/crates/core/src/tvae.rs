//! Tabular variational autoencoder over the model space of a
//! [`ColumnTransformer`]: training on the ELBO, sampling and persistence.

use std::io::Write as _;
use std::path::Path;
use std::slice;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::nn::{adam_step, backward, forward, Activation, AdamConfig, AdamState, DenseLayer, Matrix};
use crate::transform::{fit_transformer, ColumnTransformer, ModeAssignment, OutputSpan};

pub const MODEL_MAGIC: &[u8; 4] = b"TVAE";
pub const MODEL_VERSION: u16 = 1;
/// Per-column output scales are kept in `[0.01, 1]` after every step.
pub const LOG_SCALE_MIN: f64 = -4.605_170_185_988_091;
pub const LOG_SCALE_MAX: f64 = 0.0;

const SHUFFLE_STREAM: u64 = 0;
const INIT_STREAM: u64 = u64::MAX;
const SAMPLE_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub encoder_dims: Vec<usize>,
    pub decoder_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub l2_scale: f64,
    pub loss_factor: f64,
    pub learning_rate: f64,
    pub mixture_components: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 500,
            encoder_dims: vec![128, 128],
            decoder_dims: vec![128, 128],
            embedding_dim: 128,
            l2_scale: 1e-5,
            loss_factor: 2.0,
            learning_rate: 1e-3,
            mixture_components: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("embedding_dim", self.embedding_dim),
            ("mixture_components", self.mixture_components),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if self.encoder_dims.contains(&0) || self.decoder_dims.contains(&0) {
            return Err(Error::InvalidArgument("hidden layer widths must be at least 1".into()));
        }
        if !(self.loss_factor > 0.0 && self.loss_factor.is_finite()) {
            return Err(Error::InvalidArgument("loss_factor must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(self.l2_scale >= 0.0 && self.l2_scale.is_finite()) {
            return Err(Error::InvalidArgument("l2_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-epoch loss components, averaged over rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub total: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub kl: Vec<f64>,
}

impl LossTrace {
    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

/// Loss gradients with respect to the decoder output, the latent heads and
/// the per-column log-scales.
#[derive(Debug, Clone)]
pub struct ElboGradients {
    pub decoded: Matrix,
    pub mu: Matrix,
    pub logvar: Matrix,
    pub log_scale: Vec<f64>,
}

/// Value of the negative ELBO for one batch. `decoded` holds raw decoder
/// outputs: alpha slots pass through `tanh`, softmax groups are logits.
/// `log_scale` has one entry per alpha span, in span order.
pub fn elbo_loss(
    batch: &Matrix,
    decoded: &Matrix,
    mu: &Matrix,
    logvar: &Matrix,
    log_scale: &[f64],
    spans: &[OutputSpan],
    loss_factor: f64,
) -> Result<LossParts> {
    elbo_with_gradients(batch, decoded, mu, logvar, log_scale, spans, loss_factor).map(|(p, _)| p)
}

pub fn elbo_with_gradients(
    batch: &Matrix,
    decoded: &Matrix,
    mu: &Matrix,
    logvar: &Matrix,
    log_scale: &[f64],
    spans: &[OutputSpan],
    loss_factor: f64,
) -> Result<(LossParts, ElboGradients)> {
    let rows = batch.rows();
    if rows == 0 {
        return Err(Error::Empty("loss needs at least one row".into()));
    }
    if decoded.rows() != rows || decoded.cols() != batch.cols() {
        return Err(Error::Shape(format!(
            "decoder output is {}x{}, batch is {}x{}",
            decoded.rows(),
            decoded.cols(),
            rows,
            batch.cols()
        )));
    }
    if mu.rows() != rows || logvar.rows() != rows || mu.cols() != logvar.cols() {
        return Err(Error::Shape("latent heads disagree with the batch".into()));
    }
    let alpha_count = spans.iter().filter(|s| matches!(s, OutputSpan::Alpha { .. })).count();
    if alpha_count != log_scale.len() {
        return Err(Error::Shape(format!(
            "{} log-scales for {alpha_count} continuous slots",
            log_scale.len()
        )));
    }

    let inv_b = 1.0 / rows as f64;
    let mut d_decoded = Matrix::zeros(rows, decoded.cols());
    let mut d_log_scale = vec![0.0; log_scale.len()];
    let mut recon = 0.0;
    for r in 0..rows {
        let x = batch.row(r);
        let out = decoded.row(r);
        let d = d_decoded.row_mut(r);
        let mut c = 0;
        for span in spans {
            match *span {
                OutputSpan::Alpha { start } => {
                    let s = log_scale[c];
                    let inv_var = (-2.0 * s).exp();
                    let a = out[start].tanh();
                    let diff = x[start] - a;
                    recon += 0.5 * diff * diff * inv_var + s;
                    d[start] = loss_factor * inv_b * (-diff * inv_var) * (1.0 - a * a);
                    d_log_scale[c] += loss_factor * inv_b * (1.0 - diff * diff * inv_var);
                    c += 1;
                }
                OutputSpan::Softmax { start, len } => {
                    let logits = &out[start..start + len];
                    let target = &x[start..start + len];
                    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                    let lse = max + sum.ln();
                    let mass: f64 = target.iter().sum();
                    for j in 0..len {
                        recon += target[j] * (lse - logits[j]);
                        let p = (logits[j] - lse).exp();
                        d[start + j] = loss_factor * inv_b * (p * mass - target[j]);
                    }
                }
            }
        }
    }
    recon *= inv_b;

    let mut kl = 0.0;
    let mut d_mu = Matrix::zeros(mu.rows(), mu.cols());
    let mut d_lv = Matrix::zeros(mu.rows(), mu.cols());
    for ((m, lv), (dm, dl)) in mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(d_mu.data_mut().iter_mut().zip(d_lv.data_mut().iter_mut()))
    {
        let e = lv.exp();
        kl += -0.5 * (1.0 + lv - m * m - e);
        *dm = m * inv_b;
        *dl = 0.5 * (e - 1.0) * inv_b;
    }
    kl *= inv_b;

    let total = loss_factor * recon + kl;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss (reconstruction {recon}, kl {kl})"
        )));
    }
    Ok((
        LossParts {
            total,
            reconstruction: recon,
            kl,
        },
        ElboGradients {
            decoded: d_decoded,
            mu: d_mu,
            logvar: d_lv,
            log_scale: d_log_scale,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvaeModel {
    config: TrainConfig,
    transformer: ColumnTransformer,
    encoder: Vec<DenseLayer>,
    mu_head: DenseLayer,
    logvar_head: DenseLayer,
    decoder: Vec<DenseLayer>,
    log_scale: Vec<f64>,
}

fn stack(dims: &[usize], input: usize, output: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<DenseLayer> {
    let mut layers = Vec::new();
    let mut prev = input;
    for &d in dims {
        layers.push(DenseLayer::new(prev, d, Activation::Relu, rng));
        prev = d;
    }
    if let Some(out) = output {
        layers.push(DenseLayer::new(prev, out, Activation::Identity, rng));
    }
    layers
}

impl TvaeModel {
    /// Freshly initialized network for the given encoding.
    pub fn new(transformer: ColumnTransformer, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let width = transformer.width();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let encoder = stack(&config.encoder_dims, width, None, &mut rng);
        let hidden = config.encoder_dims.last().copied().unwrap_or(width);
        let mu_head = DenseLayer::new(hidden, config.embedding_dim, Activation::Identity, &mut rng);
        let logvar_head =
            DenseLayer::new(hidden, config.embedding_dim, Activation::Identity, &mut rng);
        let decoder = stack(&config.decoder_dims, config.embedding_dim, Some(width), &mut rng);
        let log_scale = vec![0.0; transformer.continuous_count()];
        Ok(TvaeModel {
            config,
            transformer,
            encoder,
            mu_head,
            logvar_head,
            decoder,
            log_scale,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn transformer(&self) -> &ColumnTransformer {
        &self.transformer
    }

    pub fn log_scales(&self) -> &[f64] {
        &self.log_scale
    }

    pub fn param_count(&self) -> usize {
        self.tensor_lengths().iter().sum()
    }

    /// Parameter tensor sizes in the fixed order used by the optimizer and
    /// the model file: encoder, mu head, logvar head, decoder (weights then
    /// bias per layer), log-scales.
    pub fn tensor_lengths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for l in self.layers() {
            out.push(l.weights().data().len());
            out.push(l.bias().len());
        }
        out.push(self.log_scale.len());
        out
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.encoder
            .iter()
            .chain([&self.mu_head, &self.logvar_head])
            .chain(&self.decoder)
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in self.layers() {
            out.push(l.weights().data());
            out.push(l.bias());
        }
        out.push(&self.log_scale);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let layers = self
            .encoder
            .iter_mut()
            .chain([&mut self.mu_head, &mut self.logvar_head])
            .chain(self.decoder.iter_mut());
        for l in layers {
            let (w, b) = l.params_mut();
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.log_scale);
        out
    }

    /// All parameters concatenated in tensor order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
        Ok(())
    }

    /// Loss and per-tensor gradients for one batch with fixed latent noise
    /// `eps` (`rows x embedding_dim`).
    pub fn loss_and_gradients(&self, batch: &Matrix, eps: &Matrix) -> Result<(LossParts, Vec<Vec<f64>>)> {
        if eps.rows() != batch.rows() || eps.cols() != self.config.embedding_dim {
            return Err(Error::Shape(format!(
                "noise is {}x{}, expected {}x{}",
                eps.rows(),
                eps.cols(),
                batch.rows(),
                self.config.embedding_dim
            )));
        }
        let (h, enc_cache) = forward(&self.encoder, batch)?;
        let (mu, mu_cache) = forward(slice::from_ref(&self.mu_head), &h)?;
        let (lv, lv_cache) = forward(slice::from_ref(&self.logvar_head), &h)?;
        let mut z = mu.clone();
        for ((zv, e), l) in z.data_mut().iter_mut().zip(eps.data()).zip(lv.data()) {
            *zv += e * (0.5 * l).exp();
        }
        let (out, dec_cache) = forward(&self.decoder, &z)?;
        let spans = self.transformer.output_spans();
        let (parts, g) = elbo_with_gradients(
            batch,
            &out,
            &mu,
            &lv,
            &self.log_scale,
            &spans,
            self.config.loss_factor,
        )?;

        let dec = backward(&self.decoder, &dec_cache, &g.decoded)?;
        let dz = dec.input;
        let mut d_mu = g.mu;
        let mut d_lv = g.logvar;
        for i in 0..dz.data().len() {
            let dzi = dz.data()[i];
            d_mu.data_mut()[i] += dzi;
            d_lv.data_mut()[i] += dzi * eps.data()[i] * 0.5 * (0.5 * lv.data()[i]).exp();
        }
        let mu_g = backward(slice::from_ref(&self.mu_head), &mu_cache, &d_mu)?;
        let lv_g = backward(slice::from_ref(&self.logvar_head), &lv_cache, &d_lv)?;
        let mut dh = mu_g.input;
        for (a, b) in dh.data_mut().iter_mut().zip(lv_g.input.data()) {
            *a += b;
        }
        let enc = backward(&self.encoder, &enc_cache, &dh)?;

        let mut grads = Vec::new();
        for lg in enc
            .layers
            .into_iter()
            .chain(mu_g.layers)
            .chain(lv_g.layers)
            .chain(dec.layers)
        {
            grads.push(lg.weights.into_vec());
            grads.push(lg.bias);
        }
        grads.push(g.log_scale);
        Ok((parts, grads))
    }

    /// Decoder output mapped into model space: `tanh` on alpha slots and
    /// softmax probabilities on mode and category groups.
    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        let (mut out, _) = forward(&self.decoder, z)?;
        let spans = self.transformer.output_spans();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for span in &spans {
                match *span {
                    OutputSpan::Alpha { start } => row[start] = row[start].tanh(),
                    OutputSpan::Softmax { start, len } => softmax_in_place(&mut row[start..start + len]),
                }
            }
        }
        Ok(out)
    }

    /// Draws `n` synthetic rows. Latent codes are standard normal; each alpha
    /// slot gets Gaussian noise at its learned scale and is clipped to
    /// `[-1, 1]` before the transformer inverts modes and categories by
    /// argmax.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DataTable> {
        let width = self.transformer.width();
        let emb = self.config.embedding_dim;
        let spans = self.transformer.output_spans();
        let chunks: Vec<(usize, usize)> = (0..n)
            .step_by(SAMPLE_CHUNK)
            .enumerate()
            .map(|(i, start)| (i, SAMPLE_CHUNK.min(n - start)))
            .collect();
        let parts = chunks
            .par_iter()
            .map(|&(i, rows)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let z: Vec<f64> = (0..rows * emb).map(|_| rng.sample(StandardNormal)).collect();
                let mut out = self.decode(&Matrix::from_vec(rows, emb, z)?)?;
                for r in 0..rows {
                    let row = out.row_mut(r);
                    let mut c = 0;
                    for span in &spans {
                        if let OutputSpan::Alpha { start } = *span {
                            let noise: f64 = rng.sample(StandardNormal);
                            row[start] = (row[start] + self.log_scale[c].exp() * noise).clamp(-1.0, 1.0);
                            c += 1;
                        }
                    }
                }
                Ok(out.into_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let matrix = Matrix::from_vec(n, width, parts.concat())?;
        self.transformer.invert(&matrix)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&ModelHeader {
            config: self.config.clone(),
            transformer: self.transformer.clone(),
            tensors: self.tensor_lengths(),
        })?;
        let mut buf = Vec::with_capacity(header.len() + 8 * self.param_count() + 64);
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for t in self.tensors() {
            buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
            for v in t {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4, "magic").ok() != Some(MODEL_MAGIC.as_slice()) {
            return Err(Error::NotAModelFile);
        }
        let version = u16::from_le_bytes(r.take(2, "version")?.try_into().expect("2 bytes"));
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: MODEL_VERSION,
            });
        }
        let header_len = u32::from_le_bytes(r.take(4, "header length")?.try_into().expect("4 bytes"));
        let header: ModelHeader = serde_json::from_slice(r.take(header_len as usize, "header")?)?;
        let mut model = TvaeModel::new(header.transformer, header.config)?;
        let expected = model.tensor_lengths();
        if expected != header.tensors {
            return Err(Error::Schema(format!(
                "header lists tensors {:?}, architecture needs {:?}",
                header.tensors, expected
            )));
        }
        let mut flat = Vec::with_capacity(model.param_count());
        for (i, &len) in expected.iter().enumerate() {
            let found = u64::from_le_bytes(r.take(8, "tensor length")?.try_into().expect("8 bytes"));
            if found != len as u64 {
                return Err(Error::Schema(format!("tensor {i} has {found} values, expected {len}")));
            }
            let raw = r.take(8 * len, "tensor data")?;
            flat.extend(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))));
        }
        if r.at != bytes.len() {
            return Err(Error::Schema(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        model.set_flat_params(&flat)?;
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: TrainConfig,
    transformer: ColumnTransformer,
    tensors: Vec<usize>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Truncated(format!(
                "{what}: needed {n} bytes at offset {}, file has {}",
                self.at,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn noise(seed: u64, epoch: usize, batch: usize, rows: usize, dim: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + ((epoch as u64) << 32 | batch as u64));
    let data = (0..rows * dim).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, dim, data).expect("sized to rows x dim")
}

/// Worst relative error between the analytic gradient of the full loss and
/// central differences (step 1e-5), on `rows` random rows of `table` with
/// latent noise frozen, every parameter jittered off its initial value and
/// log-scales moved off zero.
pub fn frozen_noise_gradient_check(table: &DataTable, config: &TrainConfig, rows: usize, seed: u64) -> Result<f64> {
    config.validate()?;
    if rows == 0 || rows > table.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "need between 1 and {} rows, got {rows}",
            table.n_rows()
        )));
    }
    let transformer = fit_transformer(table, config.mixture_components, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..table.n_rows()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(rows);
    let x = transformer.apply(&table.select_rows(&idx), ModeAssignment::Argmax)?;
    let mut model = TvaeModel::new(transformer, config.clone())?;
    // Zero biases put a unit fed only by dead ReLUs exactly on the kink.
    let start: Vec<f64> = model
        .flat_params()
        .iter()
        .map(|p| p + rng.random_range(-0.1..0.1))
        .collect();
    model.set_flat_params(&start)?;
    for s in &mut model.log_scale {
        *s = rng.random_range(-0.5..0.5);
    }
    let eps = noise(seed, 0, 0, rows, config.embedding_dim);
    let start = model.flat_params();
    let mut failure = None;
    let err = crate::nn::gradient_check(
        |p| {
            model.set_flat_params(p).expect("same length");
            match model.loss_and_gradients(&x, &eps) {
                Ok((parts, g)) => (parts.total, g.concat()),
                Err(e) => {
                    failure.get_or_insert(e);
                    (f64::NAN, vec![0.0; p.len()])
                }
            }
        },
        &start,
        1e-5,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(err),
    }
}

/// Fits the transformer on `table` and trains a fresh model on it.
pub fn train(table: &DataTable, config: &TrainConfig) -> Result<(TvaeModel, LossTrace)> {
    train_with_progress(table, config, |_, _| {})
}

/// As [`train`], calling `progress(epoch, total_loss)` after every epoch.
pub fn train_with_progress(
    table: &DataTable,
    config: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<(TvaeModel, LossTrace)> {
    config.validate()?;
    if table.n_rows() == 0 {
        return Err(Error::Empty("cannot train on an empty table".into()));
    }
    let transformer = fit_transformer(table, config.mixture_components, config.seed)?;
    let data = transformer.apply(table, ModeAssignment::Sampled { seed: config.seed })?;
    let mut model = TvaeModel::new(transformer, config.clone())?;
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            weight_decay: config.l2_scale,
            ..AdamConfig::default()
        },
        &model.tensor_lengths(),
    );

    let n = data.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle.set_stream(SHUFFLE_STREAM);
    let mut trace = LossTrace::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let (mut total, mut recon, mut kl) = (0.0, 0.0, 0.0);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let x = data.select_rows(idx);
            let eps = noise(config.seed, epoch, b, idx.len(), config.embedding_dim);
            let (parts, grads) = model.loss_and_gradients(&x, &eps).map_err(|e| match e {
                Error::NonFinite(detail) => Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail,
                },
                other => other,
            })?;
            let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam_step(&mut model.tensors_mut(), &grad_refs, &mut adam).map_err(|e| match e {
                Error::NonFinite(detail) => Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail,
                },
                other => other,
            })?;
            for s in &mut model.log_scale {
                *s = s.clamp(LOG_SCALE_MIN, LOG_SCALE_MAX);
            }
            let w = idx.len() as f64;
            total += parts.total * w;
            recon += parts.reconstruction * w;
            kl += parts.kl * w;
        }
        trace.total.push(total / n as f64);
        trace.reconstruction.push(recon / n as f64);
        trace.kl.push(kl / n as f64);
        progress(epoch, total / n as f64);
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_surrogate;
    use crate::nn::gradient_check;
    use proptest::prelude::*;
    use rand::Rng;

    fn tiny_config(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 64,
            encoder_dims: vec![16],
            decoder_dims: vec![16],
            embedding_dim: 4,
            mixture_components: 3,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn kl_zero_point_and_unit_shift() {
        let spans = [OutputSpan::Softmax { start: 0, len: 2 }];
        let x = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let zeros = Matrix::zeros(1, 3);
        let p = elbo_loss(&x, &Matrix::zeros(1, 2), &zeros, &zeros, &[], &spans, 2.0).unwrap();
        assert_eq!(p.kl, 0.0);
        let mu = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let p = elbo_loss(&x, &Matrix::zeros(1, 2), &mu, &Matrix::zeros(1, 1), &[], &spans, 2.0).unwrap();
        assert!((p.kl - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_matches_hand_evaluation() {
        let spans = [
            OutputSpan::Alpha { start: 0 },
            OutputSpan::Softmax { start: 1, len: 2 },
        ];
        let x = Matrix::from_rows(&[vec![0.5, 1.0, 0.0]]).unwrap();
        let out = Matrix::zeros(1, 3);
        let z = Matrix::zeros(1, 1);
        let p = elbo_loss(&x, &out, &z, &z, &[0.0], &spans, 2.0).unwrap();
        let expected = 0.5 * 0.25 + std::f64::consts::LN_2;
        assert!((p.reconstruction - expected).abs() < 1e-15);
        assert!((p.total - 2.0 * expected).abs() < 1e-15);

        // Exact alpha and saturating logits drive the reconstruction to 0.
        for scale in [5.0, 20.0, 40.0] {
            let out = Matrix::from_rows(&[vec![0.5f64.atanh(), scale, -scale]]).unwrap();
            let p = elbo_loss(&x, &out, &z, &z, &[0.0], &spans, 2.0).unwrap();
            let ce = (1.0 + (-2.0 * scale).exp()).ln();
            assert!((p.reconstruction - ce).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let spans = [OutputSpan::Alpha { start: 0 }];
        let x = Matrix::from_rows(&[vec![0.5]]).unwrap();
        let lv = Matrix::from_rows(&[vec![1000.0]]).unwrap();
        let err = elbo_loss(&x, &Matrix::zeros(1, 1), &Matrix::zeros(1, 1), &lv, &[0.0], &spans, 1.0);
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let table = generate_surrogate(60, 7).unwrap();
        let mut config = tiny_config(3);
        config.encoder_dims = vec![6];
        config.decoder_dims = vec![5];
        config.embedding_dim = 3;
        let tr = fit_transformer(&table, 3, 1).unwrap();
        let x = tr
            .apply(&table.select_rows(&(0..8).collect::<Vec<_>>()), ModeAssignment::Argmax)
            .unwrap();
        let mut model = TvaeModel::new(tr, config).unwrap();
        model.log_scale.iter_mut().enumerate().for_each(|(i, s)| *s = 0.1 * i as f64 - 0.2);
        let eps = noise(9, 0, 0, 8, 3);
        let start = model.flat_params();
        let mut probe = model.clone();
        let err = gradient_check(
            |p| {
                probe.set_flat_params(p).unwrap();
                let (parts, g) = probe.loss_and_gradients(&x, &eps).unwrap();
                (parts.total, g.concat())
            },
            &start,
            1e-5,
        );
        assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn frozen_noise_check_on_a_few_shapes() {
        let table = generate_surrogate(80, 11).unwrap();
        for (seed, dims) in [(1u64, 4usize), (2, 7)] {
            let config = TrainConfig {
                encoder_dims: vec![dims, 3],
                decoder_dims: vec![dims],
                embedding_dim: 2,
                mixture_components: 3,
                seed,
                ..TrainConfig::default()
            };
            let err = frozen_noise_gradient_check(&table, &config, 8, seed).unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
        assert!(frozen_noise_gradient_check(&table, &tiny_config(0), 0, 0).is_err());
    }

    #[test]
    fn zero_epochs_still_samples_valid_rows() {
        let table = generate_surrogate(200, 1).unwrap();
        let mut config = tiny_config(0);
        config.epochs = 0;
        let (model, trace) = train(&table, &config).unwrap();
        assert!(trace.is_empty());
        let s = model.sample(50, 4).unwrap();
        assert_eq!(s.n_rows(), 50);
        assert_eq!(s.schema(), table.schema());
    }

    #[test]
    fn sample_zero_rows_and_determinism() {
        let table = generate_surrogate(300, 2).unwrap();
        let (model, trace) = train(&table, &tiny_config(5)).unwrap();
        assert_eq!(trace.len(), 3);
        assert!(trace.kl.iter().all(|&k| k >= 0.0));
        let empty = model.sample(0, 1).unwrap();
        assert_eq!(empty.n_rows(), 0);
        assert_eq!(empty.schema(), table.schema());
        assert_eq!(model.sample(5000, 8).unwrap(), model.sample(5000, 8).unwrap());
        let (again, trace2) = train(&table, &tiny_config(5)).unwrap();
        assert_eq!(again.flat_params(), model.flat_params());
        assert_eq!(trace2, trace);
    }

    #[test]
    fn decoded_groups_are_simplexes() {
        let table = generate_surrogate(100, 2).unwrap();
        let (model, _) = train(&table, &tiny_config(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z: Vec<f64> = (0..20 * 4).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let out = model.decode(&Matrix::from_vec(20, 4, z).unwrap()).unwrap();
        for span in model.transformer().output_spans() {
            for r in 0..20 {
                match span {
                    OutputSpan::Softmax { start, len } => {
                        let s: f64 = out.row(r)[start..start + len].iter().sum();
                        assert!((s - 1.0).abs() < 1e-9);
                    }
                    OutputSpan::Alpha { start } => assert!(out.get(r, start).abs() <= 1.0),
                }
            }
        }
    }

    #[test]
    fn model_file_roundtrip_and_errors() {
        let table = generate_surrogate(200, 3).unwrap();
        let (model, _) = train(&table, &tiny_config(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tvae");
        model.save(&path).unwrap();
        let loaded = TvaeModel::load(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(loaded.sample(100, 1).unwrap(), model.sample(100, 1).unwrap());

        let bytes = std::fs::read(&path).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(TvaeModel::from_bytes(&bad), Err(Error::NotAModelFile)));
        let mut future = bytes.clone();
        future[4..6].copy_from_slice(&7u16.to_le_bytes());
        let err = TvaeModel::from_bytes(&future).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 7, supported: 1 }));
        let msg = err.to_string();
        assert!(msg.contains('7') && msg.contains('1'), "{msg}");
        assert!(matches!(
            TvaeModel::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let table = generate_surrogate(100, 3).unwrap();
        let mut c = tiny_config(0);
        c.loss_factor = 0.0;
        assert!(train(&table, &c).is_err());
        let mut c = tiny_config(0);
        c.batch_size = 0;
        assert!(train(&table, &c).is_err());
    }

    proptest! {
        #[test]
        fn kl_is_non_negative(
            mu in proptest::collection::vec(-5.0f64..5.0, 12),
            lv in proptest::collection::vec(-6.0f64..6.0, 12),
        ) {
            let spans = [OutputSpan::Softmax { start: 0, len: 1 }];
            let x = Matrix::from_vec(3, 1, vec![1.0; 3]).unwrap();
            let mu = Matrix::from_vec(3, 4, mu).unwrap();
            let lv = Matrix::from_vec(3, 4, lv).unwrap();
            let p = elbo_loss(&x, &Matrix::zeros(3, 1), &mu, &lv, &[], &spans, 1.0).unwrap();
            prop_assert!(p.kl >= 0.0);
        }
    }
}
